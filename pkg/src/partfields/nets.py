"""The four learned networks and their parameter container.

* decomposition: M linear projections + two multi-head attention transformers
  (no positional encoding) turning an instance's shape/texture embeddings
  into M per-part codes;
* structure: three linear heads mapping a part shape code to a unit
  quaternion, a translation, and a sigmoid-bounded scale;
* occupancy field: point -> (occupancy, 256-d feature), conditioned on the
  part shape code through scale/translate layers;
* color field: (encoded point, encoded direction, texture code, occupancy
  feature) -> rgb.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import GeometryError

__all__ = ["ModelConfig", "ModelWeights", "decompose", "structure", "occupancy", "color"]

LATENT_DIM = 128
OCC_WIDTH = 128
OCC_FEATURE_DIM = 256
OCC_SHARPNESS = 100.0
POSENC_L = 10
ENC_DIM = 3 * (2 * POSENC_L + 1)  # 63
COLOR_IN_DIM = LATENT_DIM + 2 * ENC_DIM + OCC_FEATURE_DIM  # 510
# residual blocks of the color net: output dims of their three linear layers
COLOR_BLOCK_DIMS = [(510, 256, 256), (256, 256, 256), (256, 128, 64)]


@dataclass
class ModelConfig:
    n_parts: int = 16
    latent_dim: int = LATENT_DIM
    n_heads: int = 4
    n_layers: int = 2
    mlp_dim: int = 1024
    shared_projections: bool = True  # one f per slot, reused by shape and texture

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _linear_names(prefix):
    return [f"{prefix}.w", f"{prefix}.b"]


def _transformer_names(prefix, n_layers):
    names = []
    for l in range(n_layers):
        for part in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"):
            names.append(f"{prefix}.{l}.attn.{part}")
        for part in ("w1", "b1", "w2", "b2"):
            names.append(f"{prefix}.{l}.mlp.{part}")
    return names


class ModelWeights:
    """All learned tensors, addressable by name (used by the checkpoint)."""

    def __init__(self, config=None, dtype=np.float32):
        self.config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        self.tensors = {}

    # -- construction ------------------------------------------------------

    @classmethod
    def init(cls, config=None, seed=0, dtype=np.float32):
        w = cls(config, dtype)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        for name, shape in w._shapes():
            w.tensors[name] = ad.parameter(w._init_value(name, shape, rng), dtype=w.dtype, name=name)
        return w

    def _shapes(self):
        """Deterministic (name, shape) declaration order."""
        c = self.config
        L = c.latent_dim
        out = []
        for m in range(c.n_parts):
            out += [(f"proj.{m}.w", (L, L)), (f"proj.{m}.b", (L,))]
        if not c.shared_projections:
            for m in range(c.n_parts):
                out += [(f"proj_t.{m}.w", (L, L)), (f"proj_t.{m}.b", (L,))]
        for tf in ("tf_s", "tf_t"):
            for l in range(c.n_layers):
                for part in ("wq", "wk", "wv", "wo"):
                    out.append((f"{tf}.{l}.attn.{part}", (L, L)))
                for part in ("bq", "bk", "bv", "bo"):
                    out.append((f"{tf}.{l}.attn.{part}", (L,)))
                out += [
                    (f"{tf}.{l}.mlp.w1", (L, c.mlp_dim)),
                    (f"{tf}.{l}.mlp.b1", (c.mlp_dim,)),
                    (f"{tf}.{l}.mlp.w2", (c.mlp_dim, L)),
                    (f"{tf}.{l}.mlp.b2", (L,)),
                ]
        out += [
            ("struct.quat.w", (L, 4)),
            ("struct.quat.b", (4,)),
            ("struct.trans.w", (L, 3)),
            ("struct.trans.b", (3,)),
            ("struct.scale.w", (L, 3)),
            ("struct.scale.b", (3,)),
        ]
        out += [("occ.in.w", (3, OCC_WIDTH)), ("occ.in.b", (OCC_WIDTH,))]
        for blk in range(2):
            for j in (1, 2):
                out += [
                    (f"occ.block{blk}.cst{j}.gw", (L, OCC_WIDTH)),
                    (f"occ.block{blk}.cst{j}.gb", (OCC_WIDTH,)),
                    (f"occ.block{blk}.cst{j}.bw", (L, OCC_WIDTH)),
                    (f"occ.block{blk}.cst{j}.bb", (OCC_WIDTH,)),
                    (f"occ.block{blk}.fc{j}.w", (OCC_WIDTH, OCC_WIDTH)),
                    (f"occ.block{blk}.fc{j}.b", (OCC_WIDTH,)),
                ]
        out += [("occ.out.w", (OCC_WIDTH, 1 + OCC_FEATURE_DIM)), ("occ.out.b", (1 + OCC_FEATURE_DIM,))]
        d_in = COLOR_IN_DIM
        for blk, dims in enumerate(COLOR_BLOCK_DIMS):
            d = d_in
            for j, d_out in enumerate(dims):
                out += [(f"col.block{blk}.l{j}.w", (d, d_out)), (f"col.block{blk}.l{j}.b", (d_out,))]
                d = d_out
            out += [(f"col.block{blk}.skip.w", (d_in, dims[-1])), (f"col.block{blk}.skip.b", (dims[-1],))]
            d_in = dims[-1]
        out += [("col.out.w", (COLOR_BLOCK_DIMS[-1][-1], 3)), ("col.out.b", (3,))]
        return out

    def _init_value(self, name, shape, rng):
        if name.endswith(".b") or name.endswith("b1") or name.endswith("b2") or name.endswith(
            ("bq", "bk", "bv", "bo", "gb", "bb")
        ):
            v = np.zeros(shape)
            if ".cst" in name and name.endswith("gb"):
                v[:] = 1.0  # identity-biased conditioning at start
            if name == "struct.quat.b":
                v[:] = [1.0, 0.0, 0.0, 0.0]  # parts start axis-aligned
            return v
        fan_in = shape[0] if len(shape) > 1 else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    # -- access ---------------------------------------------------------------

    def __getitem__(self, name):
        return self.tensors[name]

    def parameters(self):
        return [self.tensors[k] for k in sorted(self.tensors)]

    def astype(self, dtype):
        """Copy of the weights in another precision (for gradient checks)."""
        out = ModelWeights(self.config, dtype)
        for k, v in self.tensors.items():
            out.tensors[k] = ad.parameter(v.data.astype(dtype), name=k)
        return out

    def copy(self):
        return self.astype(self.dtype)

    @property
    def n_parts(self):
        return self.config.n_parts


def _linear(x, w, b):
    return ad.add(ad.matmul(x, w), b)


def broadcast_rows(t, n):
    """(1, D) or (D,) tensor -> (n, D) with summing backward."""
    if t.ndim == 1:
        t = ad.reshape(t, (1, t.shape[0]))
    return ad.add(t, Tensor(np.zeros((n, 1), dtype=t.dtype)))


# -- decomposition network ----------------------------------------------------


def _attention(w, prefix, x):
    """Pre-norm multi-head self-attention over (B, M, D) tokens."""
    B, M, D = x.shape
    cfg = w.config
    H = cfg.n_heads
    hd = D // H
    h = ad.layer_norm(x, axis=-1)
    h2 = ad.reshape(h, (B * M, D))
    q = _linear(h2, w[f"{prefix}.wq"], w[f"{prefix}.bq"])
    k = _linear(h2, w[f"{prefix}.wk"], w[f"{prefix}.bk"])
    v = _linear(h2, w[f"{prefix}.wv"], w[f"{prefix}.bv"])

    def heads(t):  # (B*M, D) -> (B*H, M, hd)
        t = ad.reshape(t, (B, M, H, hd))
        t = ad.transpose(t, (0, 2, 1, 3))
        return ad.reshape(t, (B * H, M, hd))

    q, k, v = heads(q), heads(k), heads(v)
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(hd))
    attn = ad.softmax(scores, axis=-1)
    mixed = ad.matmul(attn, v)  # (B*H, M, hd)
    mixed = ad.reshape(mixed, (B, H, M, hd))
    mixed = ad.transpose(mixed, (0, 2, 1, 3))
    mixed = ad.reshape(mixed, (B * M, D))
    out = _linear(mixed, w[f"{prefix}.wo"], w[f"{prefix}.bo"])
    return ad.reshape(out, (B, M, D))


def _transformer(w, prefix, x):
    cfg = w.config
    B, M, D = x.shape
    for l in range(cfg.n_layers):
        x = ad.add(x, _attention(w, f"{prefix}.{l}.attn", x))
        h = ad.layer_norm(x, axis=-1)
        h = ad.reshape(h, (B * M, D))
        h = ad.relu(_linear(h, w[f"{prefix}.{l}.mlp.w1"], w[f"{prefix}.{l}.mlp.b1"]))
        h = _linear(h, w[f"{prefix}.{l}.mlp.w2"], w[f"{prefix}.{l}.mlp.b2"])
        x = ad.add(x, ad.reshape(h, (B, M, D)))
    return x


def decompose(w, z_s, z_t):
    """Instance embeddings (B, D) -> per-part codes (B, M, D) for shape and texture."""
    if z_s.ndim == 1:
        z_s = ad.reshape(z_s, (1, z_s.shape[0]))
        z_t = ad.reshape(z_t, (1, z_t.shape[0]))
    M = w.config.n_parts
    t_prefix = "proj" if w.config.shared_projections else "proj_t"

    def project(z, prefix):
        slots = [
            _linear(z, w[f"{prefix}.{m}.w"], w[f"{prefix}.{m}.b"]) for m in range(M)
        ]
        return ad.stack(slots, axis=1)  # (B, M, D)

    zs_hat = project(z_s, "proj")
    zt_hat = project(z_t, t_prefix)
    zs_parts = _transformer(w, "tf_s", zs_hat)
    zt_parts = _transformer(w, "tf_t", zt_hat)
    return zs_parts, zt_parts


# -- structure network ------------------------------------------------------------


def structure(w, zs_parts):
    """Part shape codes (B, M, D) -> frames: unit quats, translations, scales."""
    B, M, D = zs_parts.shape
    flat = ad.reshape(zs_parts, (B * M, D))
    q_raw = _linear(flat, w["struct.quat.w"], w["struct.quat.b"])
    norms = np.linalg.norm(q_raw.data, axis=-1)
    if (norms < 1e-8).any():
        raise GeometryError("structure head produced a degenerate quaternion")
    inv = ad.power(ad.sum_(ad.mul(q_raw, q_raw), axis=-1, keepdims=True), -0.5)
    q = ad.mul(q_raw, inv)
    t = _linear(flat, w["struct.trans.w"], w["struct.trans.b"])
    s = ad.sigmoid(_linear(flat, w["struct.scale.w"], w["struct.scale.b"]))
    return (
        ad.reshape(q, (B, M, 4)),
        ad.reshape(t, (B, M, 3)),
        ad.reshape(s, (B, M, 3)),
    )


# -- occupancy network --------------------------------------------------------------


def _cst(h, z_row, w, prefix):
    """Conditional scale/translate: gamma(z) * h + beta(z), identity-normalized."""
    gamma = _linear(z_row, w[f"{prefix}.gw"], w[f"{prefix}.gb"])
    beta = _linear(z_row, w[f"{prefix}.bw"], w[f"{prefix}.bb"])
    return ad.add(ad.mul(h, gamma), beta)


def occupancy_probe_np(w, z_m, x_local, sharpness=OCC_SHARPNESS):
    """Plain-numpy occupancy values for assignment passes (no feature output).

    Restricts the output layer to its first column, so it is cheaper than the
    tape forward (values may differ from it in the last ulp).
    """
    z = np.atleast_2d(z_m)
    x = np.asarray(x_local)

    def lin(v, name):
        return v @ w[name + ".w"].data + w[name + ".b"].data

    h = lin(x, "occ.in")
    for blk in range(2):
        p = f"occ.block{blk}"
        y = np.maximum(h * (z @ w[f"{p}.cst1.gw"].data + w[f"{p}.cst1.gb"].data)
                       + (z @ w[f"{p}.cst1.bw"].data + w[f"{p}.cst1.bb"].data), 0.0)
        y = lin(y, f"{p}.fc1")
        y = np.maximum(y * (z @ w[f"{p}.cst2.gw"].data + w[f"{p}.cst2.gb"].data)
                       + (z @ w[f"{p}.cst2.bw"].data + w[f"{p}.cst2.bb"].data), 0.0)
        y = lin(y, f"{p}.fc2")
        h = h + y
    logit = h @ w["occ.out.w"].data[:, :1] + w["occ.out.b"].data[:1]
    t = sharpness * logit[:, 0]
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def occupancy(w, z_m, x_local, sharpness=OCC_SHARPNESS):
    """Part-local points (P, 3) + shape code (D,) -> (occupancy (P, 1), feature (P, 256)).

    No positional encoding on the input points.
    """
    if z_m.ndim == 1:
        z_m = ad.reshape(z_m, (1, z_m.shape[0]))
    h = _linear(x_local, w["occ.in.w"], w["occ.in.b"])
    for blk in range(2):
        y = ad.relu(_cst(h, z_m, w, f"occ.block{blk}.cst1"))
        y = _linear(y, w[f"occ.block{blk}.fc1.w"], w[f"occ.block{blk}.fc1.b"])
        y = ad.relu(_cst(y, z_m, w, f"occ.block{blk}.cst2"))
        y = _linear(y, w[f"occ.block{blk}.fc2.w"], w[f"occ.block{blk}.fc2.b"])
        h = ad.add(h, y)
    out = _linear(h, w["occ.out.w"], w["occ.out.b"])
    logit = ad.slice_(out, (slice(None), slice(0, 1)))
    feat = ad.slice_(out, (slice(None), slice(1, None)))
    o = ad.sigmoid(ad.mul(logit, sharpness))
    return o, feat


# -- color network -------------------------------------------------------------------


def color(w, z_t, enc_x, enc_d, feat):
    """Encoded local point/direction + texture code + occupancy feature -> rgb (P, 3)."""
    P = enc_x.shape[0]
    zt_rows = broadcast_rows(z_t, P)
    h = ad.concat([enc_x, enc_d, zt_rows, feat], axis=-1)
    for blk in range(len(COLOR_BLOCK_DIMS)):
        y = h
        for j in range(3):
            y = ad.relu(_linear(y, w[f"col.block{blk}.l{j}.w"], w[f"col.block{blk}.l{j}.b"]))
        skip = _linear(h, w[f"col.block{blk}.skip.w"], w[f"col.block{blk}.skip.b"])
        h = ad.add(y, skip)
    return ad.sigmoid(_linear(h, w["col.out.w"], w["col.out.b"]))
