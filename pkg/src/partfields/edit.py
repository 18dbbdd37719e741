"""Part-level editing, latent-prior sampling, interpolation, and inversion.

An :class:`InstanceState` is an immutable snapshot: every edit returns a new
revision and appends to the edit script, so replaying the script from the
source reproduces renders bit-exactly. Part indices are stable across
removals (parts are deactivated, never dropped), which keeps scripts valid.

Conventions (documented once, tested below):
  * apply_rigid composes the rotation in the part's local axes, q <- dq * q;
    the translation is a world-space displacement d, applied as t <- t - d
    (because x_local = R (x + t));
  * apply_scale multiplies the part's query scale: local query points shrink
    by the factors while the ellipsoid gate grows with them, so the rendered
    part scales without touching the unit quaternion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nets
from .autodiff import Tensor
from .geometry import normalize_quat, quat_multiply, rays_for_pixels
from .losses import LossWeights, RayObservation, compute_losses
from .optim import Adam
from .render import PartView, RenderConfig, render_rays

__all__ = [
    "EditError",
    "PartData",
    "InstanceState",
    "apply_rigid",
    "apply_scale",
    "override_color",
    "clear_color",
    "remove_part",
    "restore_part",
    "add_part",
    "mix",
    "interpolate",
    "LatentPrior",
    "fit_prior",
    "sample_latents",
    "invert_shape",
    "invert_image",
    "apply_script",
    "apply_edit",
]


class EditError(ValueError):
    pass


@dataclass
class PartData:
    """Value-level snapshot of one part (plain arrays, no tape)."""

    z_s: np.ndarray
    z_t: np.ndarray
    q: np.ndarray
    t: np.ndarray
    s: np.ndarray
    query_scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    color_override: np.ndarray | None = None
    active: bool = True

    def copy(self):
        return PartData(
            z_s=self.z_s.copy(), z_t=self.z_t.copy(), q=self.q.copy(),
            t=self.t.copy(), s=self.s.copy(), query_scale=self.query_scale.copy(),
            color_override=None if self.color_override is None else self.color_override.copy(),
            active=self.active,
        )

    def view(self, dtype):
        return PartView(
            z_s=Tensor(self.z_s.astype(dtype)),
            z_t=Tensor(self.z_t.astype(dtype)),
            q=Tensor(self.q.astype(dtype)),
            t=Tensor(self.t.astype(dtype)),
            s=Tensor(self.s.astype(dtype)),
            query_scale=self.query_scale,
            color_override=self.color_override,
        )


class InstanceState:
    """An editable object instance: per-part codes + frames + edit history."""

    def __init__(self, parts, latents=None, source=None, script=None, revision=0):
        self.parts = parts
        self.latents = latents  # (z_s, z_t) instance embeddings when known
        self.source = source or {}
        self.script = list(script or [])
        self.revision = revision

    # -- construction ----------------------------------------------------------

    @classmethod
    def from_latents(cls, weights, z_s, z_t, source=None):
        """Decode embeddings into per-part codes and frames (off-tape)."""
        dt = weights.dtype
        with ad.no_grad():
            zs_parts, zt_parts = nets.decompose(
                weights, Tensor(np.asarray(z_s, dtype=dt)), Tensor(np.asarray(z_t, dtype=dt))
            )
            q, t, s = nets.structure(weights, zs_parts)
        parts = [
            PartData(
                z_s=zs_parts.data[0, m].copy(),
                z_t=zt_parts.data[0, m].copy(),
                q=q.data[0, m].copy(),
                t=t.data[0, m].copy(),
                s=s.data[0, m].copy(),
            )
            for m in range(weights.n_parts)
        ]
        return cls(parts, latents=(np.asarray(z_s, float).copy(), np.asarray(z_t, float).copy()),
                   source=source)

    def _evolve(self, parts, entry):
        new = InstanceState(
            parts, latents=self.latents, source=self.source,
            script=self.script + [dict(entry, revision=self.revision + 1)],
            revision=self.revision + 1,
        )
        return new

    # -- rendering views ----------------------------------------------------------

    def active_parts(self):
        return [p for p in self.parts if p.active]

    def part_views(self, dtype=np.float32):
        views = [p.view(dtype) for p in self.parts if p.active]
        if not views:
            raise EditError("empty instance: no active parts")
        return views

    def check_part(self, m):
        if not 0 <= m < len(self.parts):
            raise EditError(f"no part {m} (instance has {len(self.parts)})")
        return self.parts[m]

    def copy_parts(self):
        return [p.copy() for p in self.parts]


# -- the editing catalog ------------------------------------------------------------


def apply_rigid(state, m, dq=(1.0, 0.0, 0.0, 0.0), dt=(0.0, 0.0, 0.0)):
    part = state.check_part(m)
    if not part.active:
        raise EditError(f"part {m} is inactive")
    parts = state.copy_parts()
    dq = np.asarray(dq, dtype=np.float64)
    if not np.array_equal(dq, [1.0, 0.0, 0.0, 0.0]):  # keep identity edits bit-exact
        dq = normalize_quat(dq)
        parts[m].q = normalize_quat(quat_multiply(dq, parts[m].q))
    parts[m].t = parts[m].t - np.asarray(dt, dtype=np.float64)
    return state._evolve(
        parts, {"op": "rigid", "part": m, "params": {"dq": list(map(float, dq)), "dt": list(map(float, dt))}}
    )


def apply_scale(state, m, factors):
    part = state.check_part(m)
    if not part.active:
        raise EditError(f"part {m} is inactive")
    factors = np.asarray(factors, dtype=np.float64).reshape(3)
    if (factors <= 0).any():
        raise EditError(f"scale factors must be positive, got {factors}")
    parts = state.copy_parts()
    parts[m].query_scale = parts[m].query_scale * factors
    return state._evolve(
        parts, {"op": "scale", "part": m, "params": {"factors": list(map(float, factors))}}
    )


def override_color(state, m, rgb):
    part = state.check_part(m)
    if not part.active:
        raise EditError(f"part {m} is inactive")
    rgb = np.asarray(rgb, dtype=np.float64).reshape(3)
    if (rgb < 0).any() or (rgb > 1).any():
        raise EditError(f"override color must be in [0,1]^3, got {rgb}")
    parts = state.copy_parts()
    parts[m].color_override = rgb
    return state._evolve(parts, {"op": "color", "part": m, "params": {"rgb": list(map(float, rgb))}})


def clear_color(state, m):
    state.check_part(m)
    parts = state.copy_parts()
    parts[m].color_override = None
    return state._evolve(parts, {"op": "clear_color", "part": m, "params": {}})


def remove_part(state, m):
    part = state.check_part(m)
    if not part.active:
        raise EditError(f"part {m} is already inactive")
    if sum(p.active for p in state.parts) == 1:
        raise EditError("cannot remove the last active part (empty instance)")
    parts = state.copy_parts()
    parts[m].active = False
    return state._evolve(parts, {"op": "remove", "part": m, "params": {}})


def restore_part(state, m):
    state.check_part(m)
    parts = state.copy_parts()
    parts[m].active = True
    return state._evolve(parts, {"op": "restore", "part": m, "params": {}})


def add_part(state, part_data=None, copy_of=None, dq=None, dt=None):
    """Append a new active part, either explicit or copied (with a frame nudge)."""
    parts = state.copy_parts()
    if part_data is None:
        if copy_of is None:
            raise EditError("add_part needs part_data or copy_of")
        src = state.check_part(copy_of)
        part_data = src.copy()
        part_data.active = True
    new = part_data.copy()
    if dq is not None:
        new.q = normalize_quat(quat_multiply(normalize_quat(np.asarray(dq, float)), new.q))
    if dt is not None:
        new.t = new.t - np.asarray(dt, dtype=np.float64)
    parts.append(new)
    return state._evolve(
        parts,
        {
            "op": "add",
            "part": len(parts) - 1,
            "params": {
                "copy_of": copy_of,
                "dq": None if dq is None else list(map(float, dq)),
                "dt": None if dt is None else list(map(float, dt)),
            },
        },
    )


EDIT_OPS = {
    "rigid": lambda st, m, p: apply_rigid(st, m, p.get("dq", (1, 0, 0, 0)), p.get("dt", (0, 0, 0))),
    "scale": lambda st, m, p: apply_scale(st, m, p["factors"]),
    "color": lambda st, m, p: override_color(st, m, p["rgb"]),
    "clear_color": lambda st, m, p: clear_color(st, m),
    "remove": lambda st, m, p: remove_part(st, m),
    "restore": lambda st, m, p: restore_part(st, m),
    "add": lambda st, m, p: add_part(st, copy_of=p.get("copy_of"), dq=p.get("dq"), dt=p.get("dt")),
}


def apply_edit(state, op, part, params):
    if op not in EDIT_OPS:
        raise EditError(f"unknown edit op {op!r}")
    return EDIT_OPS[op](state, part, params or {})


def apply_script(source_state, script):
    """Replay a serialized edit script against a source instance."""
    state = source_state
    for entry in script:
        state = apply_edit(state, entry["op"], entry.get("part"), entry.get("params"))
    return state


# -- mixing and interpolation ----------------------------------------------------------


def mix(selections):
    """Assemble a new instance from per-part shape/texture sources.

    Each selection is {"shape": (instance, part), "texture": (instance, part)};
    a missing channel defaults to the other channel's source. Geometry comes
    with the shape source (codes, frame, query scale); appearance (texture
    code, color override) with the texture source.
    """
    if not selections:
        raise EditError("mix needs at least one selection")
    parts = []
    for sel in selections:
        shape_src = sel.get("shape") or sel.get("texture")
        tex_src = sel.get("texture") or sel.get("shape")
        if shape_src is None:
            raise EditError("selection with neither shape nor texture source")
        s_inst, s_m = shape_src
        t_inst, t_m = tex_src
        sp = s_inst.check_part(s_m)
        tp = t_inst.check_part(t_m)
        parts.append(
            PartData(
                z_s=sp.z_s.copy(), z_t=tp.z_t.copy(), q=sp.q.copy(), t=sp.t.copy(),
                s=sp.s.copy(), query_scale=sp.query_scale.copy(),
                color_override=None if tp.color_override is None else tp.color_override.copy(),
            )
        )
    return InstanceState(parts, source={"kind": "mix"})


def _blend(a, b, alpha):
    return (1.0 - alpha) * a + alpha * b


def interpolate(weights, a, b, alpha, scope="whole", channel="both", parts=None):
    """Blend two instances' codes (and frames, for part scope).

    Whole scope blends the source embeddings before decomposition (requires
    both instances to carry latents); part scope blends effective per-part
    codes and frames, preserving a's activity set and overrides.
    """
    if not 0.0 <= alpha <= 1.0:
        raise EditError(f"alpha must be in [0,1], got {alpha}")
    channel = channel.lower()
    if scope == "whole":
        if a.latents is None or b.latents is None:
            raise EditError("whole-instance interpolation needs source latents")
        zs = _blend(a.latents[0], b.latents[0], alpha) if channel in ("shape", "both") else a.latents[0]
        zt = _blend(a.latents[1], b.latents[1], alpha) if channel in ("texture", "both") else a.latents[1]
        return InstanceState.from_latents(weights, zs, zt, source={"kind": "interpolate"})
    if scope != "parts":
        raise EditError(f"unknown interpolation scope {scope!r}")
    idxs = range(min(len(a.parts), len(b.parts))) if parts is None else parts
    out = a.copy_parts()
    for m in idxs:
        pa, pb = a.check_part(m), b.check_part(m)
        if channel in ("shape", "both"):
            out[m].z_s = _blend(pa.z_s, pb.z_s, alpha)
            qb = pb.q if np.dot(pa.q, pb.q) >= 0 else -pb.q  # same hemisphere
            out[m].q = normalize_quat(_blend(pa.q, qb, alpha)) if alpha not in (0.0, 1.0) else (
                pa.q.copy() if alpha == 0.0 else pb.q.copy()
            )
            out[m].t = _blend(pa.t, pb.t, alpha)
            out[m].s = _blend(pa.s, pb.s, alpha)
            out[m].query_scale = _blend(pa.query_scale, pb.query_scale, alpha)
        if channel in ("texture", "both"):
            out[m].z_t = _blend(pa.z_t, pb.z_t, alpha)
    return InstanceState(out, latents=a.latents, source={"kind": "interpolate"})


# -- latent prior -----------------------------------------------------------------------


@dataclass
class LatentPrior:
    mu_s: np.ndarray
    var_s: np.ndarray  # diagonal after shrinkage
    mu_t: np.ndarray
    var_t: np.ndarray

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("mu_s", "var_s", "mu_t", "var_t")}


def fit_prior(embeddings, shrinkage=0.1, floor=1e-4):
    """Mean + shrunk diagonal covariance of the trained embedding table.

    `embeddings` maps object id -> {"s": array-like, "t": array-like}.
    """
    if len(embeddings) < 2:
        raise EditError(f"need at least 2 embeddings to fit a prior, got {len(embeddings)}")

    def stack(key):
        return np.stack(
            [np.asarray(embeddings[oid][key], dtype=np.float64) for oid in sorted(embeddings)]
        )

    out = {}
    for key, names in (("s", ("mu_s", "var_s")), ("t", ("mu_t", "var_t"))):
        z = stack(key)
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        out[names[0]] = mu
        out[names[1]] = (1.0 - shrinkage) * var + shrinkage * floor
    return LatentPrior(**out)


def sample_latents(prior, rng):
    z_s = prior.mu_s + np.sqrt(prior.var_s) * rng.standard_normal(len(prior.mu_s))
    z_t = prior.mu_t + np.sqrt(prior.var_t) * rng.standard_normal(len(prior.mu_t))
    return z_s, z_t


# -- inversion ------------------------------------------------------------------------------


class _FrozenWeights:
    """Temporarily stop gradients at the network weights (auto-decoder freeze)."""

    def __init__(self, weights):
        self.weights = weights

    def __enter__(self):
        self.saved = [(t, t.requires_grad) for t in self.weights.tensors.values()]
        for t, _ in self.saved:
            t.requires_grad = False

    def __exit__(self, *exc):
        for t, was in self.saved:
            t.requires_grad = was


def _balanced_view_rays(view, rng, n_rays):
    half = n_rays // 2
    mask_flat = view["mask"].reshape(-1)
    inside = np.nonzero(mask_flat)[0]
    outside = np.nonzero(~mask_flat)[0]
    n_in = min(half, len(inside))
    n_out = min(n_rays - n_in, len(outside))
    chosen = []
    if n_in:
        chosen.append(rng.choice(inside, size=n_in, replace=False))
    chosen.append(rng.choice(outside, size=n_out, replace=False))
    flat = np.concatenate(chosen)
    W = view["pose"].width
    pixels = np.stack([flat % W, flat // W], axis=-1)
    origins, dirs = rays_for_pixels(view["pose"], pixels)
    colors = (
        view["image"].reshape(-1, 3)[flat]
        if view.get("image") is not None
        else np.zeros((len(flat), 3))
    )
    masks = mask_flat[flat].astype(np.float64)
    return origins, dirs, RayObservation(colors=colors, masks=masks)


def _invert(weights, views, optimize_texture, steps, seed=0, rays_per_step=256,
            n_samples=16, lr=5e-4, prior=None, init=None, progress=None):
    dt = weights.dtype
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(97,)))
    if init is not None:
        z_s0, z_t0 = init
    elif prior is not None:
        z_s0, z_t0 = sample_latents(prior, rng)
    else:
        z_s0, z_t0 = rng.standard_normal(nets.LATENT_DIM), rng.standard_normal(nets.LATENT_DIM)
    z_s = ad.parameter(np.asarray(z_s0, dtype=dt), name="invert.z_s")
    z_t = ad.parameter(np.asarray(z_t0, dtype=dt), name="invert.z_t")

    lw = LossWeights(
        rgb=1.0 if optimize_texture else 0.0, mask=1.0, occ=1.0,
        cov=0.0, overlap=0.0, control=0.0,
        reg_s=1e-4, reg_t=1e-4 if optimize_texture else 0.0,
    )
    opt = Adam()
    render_cfg = RenderConfig(n_samples=n_samples)
    M = weights.n_parts
    initial = None
    history = []
    with _FrozenWeights(weights):
        for step in range(steps):
            view = views[step % len(views)]
            step_rng_ = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step, 7)))
            origins, dirs, obs = _balanced_view_rays(view, step_rng_, rays_per_step)
            zs_parts, zt_parts = nets.decompose(weights, z_s, z_t)
            q, t, s = nets.structure(weights, zs_parts)
            parts = [
                PartView(
                    z_s=ad.reshape(ad.slice_(zs_parts, (0, m)), (nets.LATENT_DIM,)),
                    z_t=ad.reshape(ad.slice_(zt_parts, (0, m)), (nets.LATENT_DIM,)),
                    q=ad.reshape(ad.slice_(q, (0, m)), (4,)),
                    t=ad.reshape(ad.slice_(t, (0, m)), (3,)),
                    s=ad.reshape(ad.slice_(s, (0, m)), (3,)),
                )
                for m in range(M)
            ]
            out = render_rays(weights, parts, origins, dirs, render_cfg,
                              rng=step_rng_, stratified=True)
            total, breakdown = compute_losses(
                out, obs, ad.reshape(s, (M, 3)), [z_s], [z_t], lw
            )
            target = sum(breakdown[k] for k in (("rgb", "mask", "occ") if optimize_texture else ("mask", "occ")))
            if initial is None:
                initial = target
            if target > 10.0 * max(initial, 1e-9) and step > 10:
                raise EditError(
                    f"inversion diverged at step {step}: target loss {target:.4f} "
                    f"vs initial {initial:.4f}"
                )
            params = [z_s, z_t] if optimize_texture else [z_s]
            for p in params:
                p.zero_grad()
            total.backward()
            opt.step(params, [p.grad for p in params], lr)
            history.append(target)
            if progress is not None:
                progress(step, target)
    report = {"initial": initial, "final": history[-1], "history": history}
    return (z_s.data.astype(np.float64), z_t.data.astype(np.float64)), report


def invert_shape(weights, views, steps=700, **kw):
    """Fit the shape embedding to posed masks (texture untouched, weights frozen)."""
    return _invert(weights, views, optimize_texture=False, steps=steps, **kw)


def invert_image(weights, views, steps=2000, **kw):
    """Fit shape + texture embeddings to posed images and masks."""
    return _invert(weights, views, optimize_texture=True, steps=steps, **kw)
