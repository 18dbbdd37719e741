"""The six training loss terms and the composed objective.

All per-ray terms are means over the batch rays (not sums), so the printed
weights keep their balance at any batch size. Binary cross-entropies clamp
probabilities to [eps, 1-eps] to bound gradients at saturation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "LossWeights",
    "RayObservation",
    "LossError",
    "rgb_loss",
    "mask_loss",
    "occupancy_loss",
    "coverage_loss",
    "overlap_loss",
    "control_loss",
    "embedding_norm",
    "compute_losses",
]

BCE_EPS = 1e-6


class LossError(RuntimeError):
    pass


@dataclass
class LossWeights:
    rgb: float = 1.0
    mask: float = 1.0
    occ: float = 1.0
    cov: float = 0.01
    overlap: float = 0.01
    control: float = 1.0
    reg_s: float = 0.0001
    reg_t: float = 0.0001
    occ_net: float = 0.1
    occ_ell: float = 0.01
    k: int = 16
    lam: float = 3.0
    squared_reg: bool = False  # Eq.-as-printed uses unsquared norms

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class RayObservation:
    """Ground truth per ray: color, mask value, and the binary inside label."""

    colors: np.ndarray  # (R, 3)
    masks: np.ndarray  # (R,)
    labels: np.ndarray = None  # (R,) in {0, 1}

    def __post_init__(self):
        self.colors = np.atleast_2d(np.asarray(self.colors, dtype=np.float64))
        self.masks = np.asarray(self.masks, dtype=np.float64).reshape(-1)
        if self.labels is None:
            self.labels = (self.masks > 0.5).astype(np.float64)
        else:
            self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        bad = ~np.isin(self.labels, (0.0, 1.0))
        if bad.any():
            raise LossError("ray labels must be binary")


def rgb_loss(out, obs):
    diff = ad.add(out.rgb, Tensor(-obs.colors.astype(out.rgb.dtype)))
    return ad.mean(ad.sum_(ad.mul(diff, diff), axis=1))


def mask_loss(out, obs):
    diff = ad.add(out.mask, Tensor(-obs.masks.astype(out.mask.dtype)))
    return ad.mean(ad.mul(diff, diff))


def binary_cross_entropy(p, targets, eps=BCE_EPS):
    """Elementwise BCE against constant binary targets, clamped."""
    t = np.asarray(targets, dtype=p.dtype)
    pc = ad.clip(p, eps, 1.0 - eps)
    pos = ad.mul(ad.log(pc), t)
    neg = ad.mul(ad.log(ad.add(-pc, 1.0)), 1.0 - t)
    return -ad.add(pos, neg)


def occupancy_loss(out, obs, weights=None):
    """BCE of the per-ray max network / ellipsoid occupancies vs inside labels."""
    w = weights or LossWeights()
    lhat = out.max_h()  # (R,)
    ltil = out.max_g()
    per_ray = ad.add(
        ad.mul(binary_cross_entropy(lhat, obs.labels), w.occ_net),
        ad.mul(binary_cross_entropy(ltil, obs.labels), w.occ_ell),
    )
    return ad.mean(per_ray)


def coverage_loss(out, obs, k=16):
    """Each part should contain its k best inside rays; BCE toward label 1.

    Uses all available inside rays when fewer than k are present; contributes
    zero (flagged by the caller) when the batch has no inside rays.
    """
    inside = np.nonzero(obs.labels == 1.0)[0]
    M = out.part_max_h.shape[0]
    if len(inside) == 0:
        return Tensor(np.zeros((), dtype=out.part_max_h.dtype))
    kk = min(k, len(inside))
    total = None
    for m in range(M):

        def select(m=m):
            vals = out.part_max_h.data[m][inside]
            return inside[np.argsort(-vals, kind="stable")[:kk]]

        chosen = ad.choice_hook("coverage_topk", select)
        row = ad.take(ad.reshape(out.part_max_h, (M * len(obs.labels),)),
                      m * len(obs.labels) + chosen, axis=0)
        term = ad.sum_(binary_cross_entropy(row, np.ones(kk)))
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / M)


def overlap_loss(out, lam=3.0):
    """Hinge on the number of parts a ray is inside of: max(0, sum_m lhat_m - lam)."""
    per_ray = ad.relu(ad.add(ad.sum_(out.part_max_h, axis=0), -float(lam)))
    return ad.mean(per_ray)


def control_loss(scales):
    """Pairwise ellipsoid-volume discrepancy, normalized by M(M-1).

    `scales` is an (M, 3) tensor of part scale vectors.
    """
    M = scales.shape[0]
    if M < 2:
        return Tensor(np.zeros((), dtype=scales.dtype))
    vol = ad.mul(
        ad.reshape(
            ad.mul(
                ad.mul(
                    ad.slice_(scales, (slice(None), slice(0, 1))),
                    ad.slice_(scales, (slice(None), slice(1, 2))),
                ),
                ad.slice_(scales, (slice(None), slice(2, 3))),
            ),
            (M,),
        ),
        4.0 / 3.0 * np.pi,
    )
    vi = ad.reshape(vol, (M, 1))
    vj = ad.reshape(vol, (1, M))
    pair = ad.abs_(ad.add(vi, ad.mul(vj, -1.0)))
    # lower triangle incl. zero diagonal = half of the symmetric total
    return ad.mul(ad.sum_(pair), 0.5 / (M * (M - 1)))


def embedding_norm(z, squared=False):
    sq = ad.sum_(ad.mul(z, z))
    return sq if squared else ad.sqrt(sq)


def compute_losses(out, obs, scales, z_s_list, z_t_list, weights=None):
    """All Eq.-14 terms for one rendered batch; returns (total, breakdown).

    `scales` is the (M, 3) scale tensor of the rendered instance; embedding
    regularizers average over the batch's objects.
    """
    w = weights or LossWeights()
    terms = {
        "rgb": rgb_loss(out, obs),
        "mask": mask_loss(out, obs),
        "occ": occupancy_loss(out, obs, w),
        "cov": coverage_loss(out, obs, w.k),
        "overlap": overlap_loss(out, w.lam),
        "control": control_loss(scales),
    }

    def avg_norm(zs):
        acc = None
        for z in zs:
            n = embedding_norm(z, w.squared_reg)
            acc = n if acc is None else ad.add(acc, n)
        return ad.mul(acc, 1.0 / len(zs))

    terms["reg_s"] = avg_norm(z_s_list)
    terms["reg_t"] = avg_norm(z_t_list)

    for name, t in terms.items():
        if not np.isfinite(t.data).all():
            raise LossError(f"non-finite loss term: {name}")

    coeff = {
        "rgb": w.rgb, "mask": w.mask, "occ": w.occ, "cov": w.cov,
        "overlap": w.overlap, "control": w.control, "reg_s": w.reg_s, "reg_t": w.reg_t,
    }
    total = None
    for name, t in terms.items():
        piece = ad.mul(t, coeff[name])
        total = piece if total is None else ad.add(total, piece)
    breakdown = {name: float(t.data) for name, t in terms.items()}
    return total, breakdown
