"""Hard ray-part assignment and volumetric quadrature over M part fields.

Each ray is assigned to the first part whose joint occupancy h = o * g
crosses the threshold along the ray; its color then comes from that single
part's quadrature. Two cache granularities exist behind one entry point:

* ``cache_full=True`` keeps h and g for every (part, ray, sample) on the
  tape - the reference path used by gradient checks and small scenes;
* the training path re-evaluates on the tape only what the losses read:
  the assigned part's samples plus each (ray, part) max-occupancy sample,
  with the ellipsoid gate g kept on-tape everywhere (it is cheap).

The gate also drives a lazy evaluation rule: where g < 1e-6 the network
occupancy is not evaluated and h is taken as 0 (h = o*g <= g).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Tensor
from .geometry import (
    ELLIPSOID_SHARPNESS,
    PartFrame,
    positional_encoding,
    positional_encoding_t,
    sample_along_ray,
)

__all__ = [
    "RenderConfig",
    "PartView",
    "RenderOutput",
    "RenderError",
    "assign_rays",
    "render_rays",
    "render_part",
    "render_image",
    "joint_occupancy",
]

GATE_CUT = 1e-6
SENTINEL = np.iinfo(np.int64).max  # "no hit" first-intersection index


class RenderError(RuntimeError):
    pass


@dataclass
class RenderConfig:
    n_samples: int = 64  # training; inference uses n_samples_infer
    n_samples_infer: int = 128
    assign_threshold: float = 0.5
    mode: str = "hard"  # "hard" | "soft"
    background: tuple = (0.0, 0.0, 0.0)

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "n_samples_infer": self.n_samples_infer,
            "assign_threshold": self.assign_threshold,
            "mode": self.mode,
            "background": list(self.background),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(**d)


@dataclass
class PartView:
    """Everything the renderer needs to evaluate one part's field."""

    z_s: Tensor
    z_t: Tensor
    q: Tensor  # (4,) unit quaternion
    t: Tensor  # (3,)
    s: Tensor  # (3,) in (0, 1)
    query_scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    color_override: np.ndarray | None = None

    def frame(self):
        qs = np.asarray(self.query_scale, dtype=np.float64)
        return PartFrame(self.q.data.astype(np.float64), self.t.data.astype(np.float64),
                         self.s.data.astype(np.float64) * qs)

    def copy(self):
        return PartView(
            z_s=self.z_s,
            z_t=self.z_t,
            q=Tensor(self.q.data.copy()),
            t=Tensor(self.t.data.copy()),
            s=Tensor(self.s.data.copy()),
            query_scale=np.array(self.query_scale, copy=True),
            color_override=None if self.color_override is None else np.array(self.color_override),
        )


def rotation_from_quat_t(q):
    """Unit quaternion tensor (4,) -> rotation matrix tensor (3, 3)."""
    w, x, y, z = (ad.slice_(q, (slice(i, i + 1),)) for i in range(4))
    two = 2.0
    r00 = 1.0 - ad.mul(ad.add(ad.mul(y, y), ad.mul(z, z)), two)
    r01 = ad.mul(ad.add(ad.mul(x, y), -ad.mul(w, z)), two)
    r02 = ad.mul(ad.add(ad.mul(x, z), ad.mul(w, y)), two)
    r10 = ad.mul(ad.add(ad.mul(x, y), ad.mul(w, z)), two)
    r11 = 1.0 - ad.mul(ad.add(ad.mul(x, x), ad.mul(z, z)), two)
    r12 = ad.mul(ad.add(ad.mul(y, z), -ad.mul(w, x)), two)
    r20 = ad.mul(ad.add(ad.mul(x, z), -ad.mul(w, y)), two)
    r21 = ad.mul(ad.add(ad.mul(y, z), ad.mul(w, x)), two)
    r22 = 1.0 - ad.mul(ad.add(ad.mul(x, x), ad.mul(y, y)), two)
    rows = [ad.concat([r00, r01, r02]), ad.concat([r10, r11, r12]), ad.concat([r20, r21, r22])]
    return ad.stack(rows, axis=0)


def part_local_t(part, pts):
    """World points (P, 3 ndarray) -> part-local query points tensor (P, 3)."""
    R = rotation_from_quat_t(part.q)
    shifted = ad.add(Tensor(pts.astype(part.q.dtype)), ad.reshape(part.t, (1, 3)))
    local = ad.matmul(shifted, ad.transpose(R, (1, 0)))
    qs = np.asarray(part.query_scale, dtype=part.q.dtype)
    if not np.all(qs == 1.0):
        local = ad.mul(local, Tensor((1.0 / qs).reshape(1, 3)))
    return local


def part_dirs_t(part, dirs):
    """World directions (P, 3) -> unit part-local directions tensor."""
    R = rotation_from_quat_t(part.q)
    d = ad.matmul(Tensor(dirs.astype(part.q.dtype)), ad.transpose(R, (1, 0)))
    inv = ad.power(ad.sum_(ad.mul(d, d), axis=-1, keepdims=True), -0.5)
    return ad.mul(d, inv)


def part_gate_t(part, local, beta=ELLIPSOID_SHARPNESS):
    """Ellipsoid occupancy g at part-local query points (tensor)."""
    scaled = ad.div(local, ad.reshape(part.s, (1, 3)))
    f = ad.sum_(ad.mul(scaled, scaled), axis=-1)
    return ad.sigmoid(ad.mul(ad.add(-f, 1.0), beta))


def joint_occupancy(weights, part, pts):
    """h = o * g at world points (tensor path, no gating shortcut)."""
    local = part_local_t(part, np.atleast_2d(pts))
    g = part_gate_t(part, local)
    o, _ = nets.occupancy(weights, part.z_s, local)
    return ad.mul(ad.reshape(o, (o.shape[0],)), g)


# -- assignment -----------------------------------------------------------------


def first_hit_indices(h, tau):
    """Per (part, ray) index of the first sample with h >= tau, else SENTINEL."""
    inside = h >= tau  # (M, R, N)
    any_hit = inside.any(axis=-1)
    first = inside.argmax(axis=-1)
    return np.where(any_hit, first, SENTINEL)


def assign_rays(h, tau):
    """Hard assignment from joint occupancies h (M, R, N).

    Returns (assigned (R,), psi (M, R)); assigned is -1 where no part is hit.
    Ties on the first-hit index go to the larger h at that sample, then to
    the lower part index.
    """
    M, R, N = h.shape
    psi = first_hit_indices(h, tau)
    min_psi = psi.min(axis=0)
    candidate = (psi == min_psi) & (min_psi < SENTINEL)
    safe_idx = np.where(psi == SENTINEL, 0, psi)
    h_at = np.take_along_axis(h, safe_idx[:, :, None], axis=2)[:, :, 0]
    keyed = np.where(candidate, h_at, -np.inf)
    best = keyed.max(axis=0)
    winner_mask = candidate & (keyed == best)
    assigned = np.where(min_psi < SENTINEL, winner_mask.argmax(axis=0), -1)
    return assigned.astype(np.int64), psi


# -- quadrature -------------------------------------------------------------------


def quadrature_weights_t(h):
    """w_i = h_i * prod_{j<i}(1 - h_j) along the sample axis of (R, N)."""
    om = ad.add(-h, 1.0)
    cp = ad.cumprod(om, axis=1)
    ones = Tensor(np.ones((h.shape[0], 1), dtype=h.dtype))
    trans = ad.concat([ones, ad.slice_(cp, (slice(None), slice(0, -1)))], axis=1)
    return ad.mul(h, trans)


def render_part(h, colors):
    """Per-part quadrature: h (R, N) and colors (R, N, 3) tensors -> rgb (R, 3)."""
    w = quadrature_weights_t(h)
    rgb = ad.sum_(ad.mul(ad.reshape(w, (*w.shape, 1)), colors), axis=1)
    return rgb, w


def _scatter_rows(values, row_ids, n_rows, width):
    """Assemble (n_rows, width) tensor from rows `values` at `row_ids`, zeros elsewhere."""
    dtype = values.dtype
    pad = ad.concat([values, Tensor(np.zeros((1, width), dtype=dtype))], axis=0)
    index = np.full(n_rows, len(row_ids), dtype=np.int64)
    index[row_ids] = np.arange(len(row_ids))
    return ad.take(pad, index, axis=0)


# -- the renderer ------------------------------------------------------------------


@dataclass
class RenderOutput:
    rgb: Tensor  # (R, 3)
    mask: Tensor  # (R,)
    assigned: np.ndarray  # (R,) part index or -1
    psi: np.ndarray  # (M, R) first-hit sample index (SENTINEL when none)
    part_max_h: Tensor  # (M, R) per-part per-ray max joint occupancy
    part_max_g: Tensor  # (M, R) same for the ellipsoid gate
    weights: Tensor  # (R, N) quadrature weights of the assigned part (0 rows if none)
    samples: object
    h_full: Tensor | None = None  # (M, R, N), cache_full only
    g_full: Tensor | None = None
    n_color_evals: int = 0

    def max_h(self):
        return ad.max_(self.part_max_h, axis=0)

    def max_g(self):
        return ad.max_(self.part_max_g, axis=0)


def _background_rgb(cfg, dtype):
    return np.asarray(cfg.background, dtype=dtype)


def _check_finite(name, arr, part=None):
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))
        raise RenderError(
            f"non-finite {name} (part={part}, first bad index={bad[0].tolist()})"
        )


def _part_colors(weights, part, local, dirs_local, feat, n_pts):
    if part.color_override is not None:
        c = np.broadcast_to(
            np.asarray(part.color_override, dtype=part.q.dtype), (n_pts, 3)
        ).copy()
        return Tensor(c)
    enc_x = positional_encoding_t(local, nets.POSENC_L)
    enc_d = positional_encoding_t(dirs_local, nets.POSENC_L)
    return nets.color(weights, part.z_t, enc_x, enc_d, feat)


def render_rays(weights, parts, origins, dirs, cfg=None, rng=None, samples=None,
                n_samples=None, stratified=False, cache_full=False, assignment=None):
    """Render a batch of rays against the active parts.

    `assignment` overrides the computed hard assignment (used to hold it
    fixed across finite-difference probes). Soft mode composes all parts by
    merged-order quadrature instead of assigning.
    """
    cfg = cfg or RenderConfig()
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    R = origins.shape[0]
    M = len(parts)
    if M == 0:
        raise RenderError("cannot render an instance with no active parts")
    dtype = parts[0].q.dtype
    if samples is None:
        n = n_samples or cfg.n_samples
        samples = sample_along_ray(origins, dirs, n, rng=rng, stratified=stratified)
    N = samples.n_samples
    pts = samples.points.reshape(R * N, 3)
    hit = samples.hit

    # gates on tape for every part (cheap, pure geometry)
    locals_t, gates_t = [], []
    for part in parts:
        local = part_local_t(part, pts)
        g = ad.reshape(part_gate_t(part, local), (R, N))
        if not hit.all():
            g = ad.where_mask(hit[:, None], g, Tensor(np.zeros((R, N), dtype=dtype)))
        locals_t.append(local)
        gates_t.append(g)

    if cfg.mode == "soft":
        return _render_soft(weights, parts, cfg, samples, origins, dirs, locals_t, gates_t)

    # no-grad joint occupancy for assignment and argmax bookkeeping
    h_ng = np.zeros((M, R, N), dtype=dtype)
    if cache_full:
        h_rows, o_feats = [], []
        for m, part in enumerate(parts):
            o, feat = nets.occupancy(weights, part.z_s, locals_t[m])
            h = ad.mul(ad.reshape(o, (R, N)), gates_t[m])
            _check_finite("occupancy", h.data, part=m)
            h_rows.append(h)
            o_feats.append(feat)
            h_ng[m] = h.data
        h_full = ad.stack(h_rows, axis=0)
        g_full = ad.stack(gates_t, axis=0)
    else:
        h_full = g_full = None
        for m, part in enumerate(parts):
            g = gates_t[m].data.reshape(-1)
            live = g > GATE_CUT
            if live.any():
                o = nets.occupancy_probe_np(
                    weights, part.z_s.data, locals_t[m].data[live]
                )
                hm = np.zeros(R * N, dtype=dtype)
                hm[live] = (o * g[live]).astype(dtype)
                h_ng[m] = hm.reshape(R, N)
        _check_finite("occupancy", h_ng)

    if assignment is None:
        assigned, psi = assign_rays(h_ng, cfg.assign_threshold)
    else:
        assigned = np.asarray(assignment, dtype=np.int64)
        _, psi = assign_rays(h_ng, cfg.assign_threshold)

    # per-(part, ray) max occupancy values, on tape; saturated maxima (exact
    # 0 or 1 in this precision) carry exactly-zero gradients and stay constants
    argmax_i = h_ng.argmax(axis=2)  # (M, R)
    max_h_rows, max_g_rows = [], []
    for m, part in enumerate(parts):
        gm = ad.max_(gates_t[m], axis=1)
        max_g_rows.append(gm)
        if cache_full:
            max_h_rows.append(ad.max_(h_rows[m], axis=1))
            continue
        row_max = h_ng[m].max(axis=1)
        interior = (row_max > 0.0) & (row_max < 1.0)
        base = Tensor(row_max.copy())
        if not interior.any():
            max_h_rows.append(base)
            continue
        ridx = np.nonzero(interior)[0]
        flat = ridx * N + argmax_i[m][ridx]
        o, _ = nets.occupancy(weights, part.z_s, ad.take(locals_t[m], flat, axis=0))
        g_at = ad.take(ad.reshape(gates_t[m], (R * N,)), flat, axis=0)
        vals = ad.mul(ad.reshape(o, (len(ridx),)), g_at)
        col = ad.reshape(_scatter_rows(ad.reshape(vals, (len(ridx), 1)), ridx, R, 1), (R,))
        max_h_rows.append(ad.where_mask(interior, col, base))
    part_max_h = ad.stack(max_h_rows, axis=0)
    part_max_g = ad.stack(max_g_rows, axis=0)

    # quadrature for assigned rays, one part at a time
    rgb_acc = Tensor(np.zeros((R, 3), dtype=dtype))
    mask_acc = Tensor(np.zeros(R, dtype=dtype))
    w_acc = Tensor(np.zeros((R, N), dtype=dtype))
    n_color_evals = 0
    world_dirs = np.repeat(dirs, N, axis=0)
    for m, part in enumerate(parts):
        rows = np.nonzero(assigned == m)[0]
        if len(rows) == 0:
            continue
        K = len(rows)
        flat = (rows[:, None] * N + np.arange(N)).reshape(-1)
        if cache_full:
            h_m = ad.take(h_rows[m], rows, axis=0)
            feat = ad.take(o_feats[m], flat, axis=0)
            color_live = np.ones(K * N, dtype=bool)
            feat_c = feat
        else:
            # prune to live samples: quadrature weights that are exactly zero
            # (saturated transmittance or empty occupancy) contribute nothing
            # to values or gradients in this precision
            h_rows_ng = h_ng[m][rows]  # (K, N)
            trans_ng = np.concatenate(
                [np.ones((K, 1), dtype=dtype), np.cumprod(1.0 - h_rows_ng, axis=1)[:, :-1]],
                axis=1,
            )
            color_live = ((h_rows_ng * trans_ng) != 0.0).reshape(-1)
            interior = ((h_rows_ng > 0.0) & (h_rows_ng < 1.0)).reshape(-1)
            occ_live = interior | color_live
            base = Tensor(h_rows_ng.reshape(-1, 1).copy())
            if occ_live.any():
                occ_pos = np.nonzero(occ_live)[0]
                o, feat = nets.occupancy(
                    weights, part.z_s, ad.take(locals_t[m], flat[occ_pos], axis=0)
                )
                g_live = ad.take(ad.reshape(gates_t[m], (R * N,)), flat[occ_pos], axis=0)
                v = ad.mul(o, ad.reshape(g_live, (len(occ_pos), 1)))
                scat = _scatter_rows(v, occ_pos, K * N, 1)
                h_m = ad.where_mask(occ_live[:, None], scat, base)
            else:
                feat = None
                h_m = base
            h_m = ad.reshape(h_m, (K, N))
        if part.color_override is None:
            c_pos = np.nonzero(color_live)[0]
            if len(c_pos):
                if cache_full:
                    feat_c = feat
                    c_sel = flat
                else:
                    occ_pos_all = np.nonzero(occ_live)[0]
                    feat_c = ad.take(feat, np.searchsorted(occ_pos_all, c_pos), axis=0)
                    c_sel = flat[c_pos]
                d_local = part_dirs_t(part, world_dirs[c_sel])
                c_live_t = _part_colors(
                    weights, part, ad.take(locals_t[m], c_sel, axis=0), d_local,
                    feat_c, len(c_sel),
                )
                colors = (
                    c_live_t if cache_full
                    else _scatter_rows(c_live_t, c_pos, K * N, 3)
                )
                n_color_evals += len(c_sel)
            else:
                colors = Tensor(np.zeros((K * N, 3), dtype=dtype))
        else:
            colors = _part_colors(weights, part, locals_t[m], None, None, K * N)
        _check_finite("color", colors.data, part=m)
        # mask rides as a fourth all-ones channel so that a white-forced render
        # and the mask take bit-identical reduction paths
        c4 = ad.concat([colors, Tensor(np.ones((K * N, 1), dtype=dtype))], axis=1)
        out4, w_m = render_part(h_m, ad.reshape(c4, (K, N, 4)))
        rgb_m = ad.slice_(out4, (slice(None), slice(0, 3)))
        mask_m = ad.slice_(out4, (slice(None), slice(3, 4)))
        rgb_acc = ad.add(rgb_acc, _scatter_rows(rgb_m, rows, R, 3))
        mask_acc = ad.add(mask_acc, ad.reshape(_scatter_rows(mask_m, rows, R, 1), (R,)))
        w_acc = ad.add(w_acc, _scatter_rows(w_m, rows, R, N))

    bg = _background_rgb(cfg, dtype)
    if np.any(bg != 0):
        none_rows = (assigned == -1).astype(dtype)[:, None]
        rgb_acc = ad.add(rgb_acc, Tensor(none_rows * bg))

    # quadrature roundoff can exceed 1 by an ulp; outputs are [0,1] by contract
    rgb_acc = ad.clip(rgb_acc, 0.0, 1.0)
    mask_acc = ad.clip(mask_acc, 0.0, 1.0)
    return RenderOutput(
        rgb=rgb_acc,
        mask=mask_acc,
        assigned=assigned,
        psi=psi,
        part_max_h=part_max_h,
        part_max_g=part_max_g,
        weights=w_acc,
        samples=samples,
        h_full=h_full,
        g_full=g_full,
        n_color_evals=n_color_evals,
    )


def _render_soft(weights, parts, cfg, samples, origins, dirs, locals_t, gates_t):
    """Ablation mode: joint quadrature over all parts' samples merged in t-order.

    The flattened (sample, part) sequence is ordered sample-major so equal-t
    contributions compose by part index; every part's field shades every ray.
    """
    R, N = samples.ts.shape
    M = len(parts)
    dtype = parts[0].q.dtype
    world_dirs = np.repeat(np.atleast_2d(dirs), N, axis=0)
    h_rows, feats = [], []
    for m, part in enumerate(parts):
        o, feat = nets.occupancy(weights, part.z_s, locals_t[m])
        h = ad.mul(ad.reshape(o, (R, N)), gates_t[m])
        _check_finite("occupancy", h.data, part=m)
        h_rows.append(h)
        feats.append(feat)
    h_all = ad.stack(h_rows, axis=2)  # (R, N, M) sample-major merge order
    h_flat = ad.reshape(h_all, (R, N * M))

    # colors only where the merged quadrature weight is exactly nonzero
    # (zero weights contribute nothing to values or gradients)
    h_ng_flat = h_flat.data
    trans_ng = np.concatenate(
        [np.ones((R, 1), dtype=dtype), np.cumprod(1.0 - h_ng_flat, axis=1)[:, :-1]],
        axis=1,
    )
    live = ((h_ng_flat * trans_ng) != 0.0).reshape(R, N, M)
    color_cols = []
    n_live_total = 0
    for m, part in enumerate(parts):
        sel = np.nonzero(live[:, :, m].reshape(-1))[0]
        n_live_total += len(sel)
        if len(sel) == 0:
            color_cols.append(Tensor(np.zeros((R * N, 3), dtype=dtype)))
            continue
        if part.color_override is None:
            d_local = part_dirs_t(part, world_dirs[sel])
            c = _part_colors(
                weights, part, ad.take(locals_t[m], sel, axis=0), d_local,
                ad.take(feats[m], sel, axis=0), len(sel),
            )
        else:
            c = _part_colors(weights, part, None, None, None, len(sel))
        color_cols.append(_scatter_rows(c, sel, R * N, 3))
    c_all = ad.stack([ad.reshape(c, (R, N, 3)) for c in color_cols], axis=2)
    c_flat = ad.reshape(c_all, (R, N * M, 3))
    c4 = ad.concat([c_flat, Tensor(np.ones((R, N * M, 1), dtype=dtype))], axis=2)
    out4, w_flat = render_part(h_flat, c4)
    rgb = ad.clip(ad.slice_(out4, (slice(None), slice(0, 3))), 0.0, 1.0)
    mask = ad.clip(ad.reshape(ad.slice_(out4, (slice(None), slice(3, 4))), (R,)), 0.0, 1.0)

    max_h = ad.max_(ad.transpose(h_all, (2, 0, 1)), axis=2)
    max_g = ad.stack([ad.max_(g, axis=1) for g in gates_t], axis=0)
    assigned, psi = assign_rays(
        np.stack([h.data for h in h_rows]), cfg.assign_threshold
    )
    return RenderOutput(
        rgb=rgb,
        mask=mask,
        assigned=assigned,
        psi=psi,
        part_max_h=max_h,
        part_max_g=max_g,
        weights=ad.reshape(w_flat, (R, N, M)).sum(axis=2),
        samples=samples,
        n_color_evals=n_live_total,
    )


def render_image(weights, parts, pose, cfg=None, n_samples=None, chunk=4096, mode=None):
    """Render a full image (H, W, 3) plus mask (H, W); deterministic sampling."""
    from .geometry import camera_rays

    cfg = cfg or RenderConfig()
    if mode is not None:
        cfg = RenderConfig(**{**cfg.to_dict(), "mode": mode})
        cfg.background = tuple(cfg.background)
    n = n_samples or cfg.n_samples_infer
    origins, dirs = camera_rays(pose)
    rgbs, masks, assigns = [], [], []
    with ad.no_grad():
        for lo in range(0, len(origins), chunk):
            out = render_rays(
                weights, parts, origins[lo : lo + chunk], dirs[lo : lo + chunk],
                cfg, n_samples=n, stratified=False,
            )
            rgbs.append(out.rgb.data)
            masks.append(out.mask.data)
            assigns.append(out.assigned)
    H, W = pose.height, pose.width
    rgb = np.concatenate(rgbs).reshape(H, W, 3)
    mask = np.concatenate(masks).reshape(H, W)
    assigned = np.concatenate(assigns).reshape(H, W)
    return rgb, mask, assigned
