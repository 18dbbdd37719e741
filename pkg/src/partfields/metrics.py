"""Point-cloud generative metrics and image-quality helpers.

Chamfer distance uses squared-L2 nearest neighbors in both directions;
MMD averages reference-to-nearest-generated distances; coverage counts the
distinct references matched by generated shapes over the generated count.
Nearest-neighbor search is blocked brute force (fine up to ~30k points).
"""

from __future__ import annotations

import numpy as np

__all__ = ["MetricsError", "chamfer", "mmd", "coverage", "psnr", "iou", "pairwise_chamfer"]


class MetricsError(ValueError):
    pass


def _check_cloud(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3 or len(x) == 0:
        raise MetricsError(f"{name} must be a nonempty (n, 3) point cloud")
    if not np.isfinite(x).all():
        raise MetricsError(f"{name} contains non-finite points")
    return x


def _min_sqdist(a, b, block=256):
    """Per-point min squared distance from each a-point to the b cloud.

    Computes the literal ((x - y)^2).sum per pair (no algebraic expansion),
    so results are bit-identical to a scalar double loop; buffers are reused
    to keep the blocked temporaries off the allocator's slow path.
    """
    out = np.empty(len(a))
    k0 = min(block, len(a))
    diff = np.empty((k0, len(b), 3))
    sq = np.empty((k0, len(b), 3))
    for lo in range(0, len(a), block):
        chunk = a[lo : lo + block]
        k = len(chunk)
        np.subtract(chunk[:, None, :], b[None, :, :], out=diff[:k])
        np.multiply(diff[:k], diff[:k], out=sq[:k])
        out[lo : lo + block] = sq[:k].sum(axis=2).min(axis=1)
    return out


def chamfer(x, y):
    """Symmetric mean squared nearest-neighbor distance between two clouds."""
    x = _check_cloud(x, "x")
    y = _check_cloud(y, "y")
    return float(_min_sqdist(x, y).mean() + _min_sqdist(y, x).mean())


def pairwise_chamfer(generated, reference):
    """(|G|, |R|) matrix of chamfer distances."""
    if len(generated) == 0 or len(reference) == 0:
        raise MetricsError("both shape sets must be nonempty")
    out = np.empty((len(generated), len(reference)))
    for i, g in enumerate(generated):
        for j, r in enumerate(reference):
            out[i, j] = chamfer(g, r)
    return out


def mmd(generated, reference, cd_matrix=None):
    """Average over references of the distance to the closest generated shape."""
    cd = pairwise_chamfer(generated, reference) if cd_matrix is None else cd_matrix
    return float(cd.min(axis=0).mean())


def coverage(generated, reference, cd_matrix=None):
    """Fraction |distinct matched references| / |G| (formula as printed)."""
    cd = pairwise_chamfer(generated, reference) if cd_matrix is None else cd_matrix
    matched = np.unique(cd.argmin(axis=1))
    return float(len(matched) / cd.shape[0])


def psnr(img_a, img_b, max_value=1.0):
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_value**2 / mse))


def iou(mask_a, mask_b):
    """Intersection over union of boolean masks (1.0 when both are empty)."""
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch {a.shape} vs {b.shape}")
    union = (a | b).sum()
    if union == 0:
        return 1.0
    return float((a & b).sum() / union)
