"""Auto-decoder training: per-object embeddings and shared networks optimized
jointly, with deterministic per-step batching and bit-exact resumability."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import nets
from .autodiff import Tensor
from .dataset import sample_ray_batch
from .losses import LossError, LossWeights, compute_losses
from .optim import Adam, CosineWarmupSchedule
from .render import PartView, RenderConfig, render_rays

log = logging.getLogger(__name__)

__all__ = ["TrainConfig", "TrainState", "train_step", "fit", "TrainStepError"]


class TrainStepError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    n_parts: int = 16
    rays_per_image: int = 512
    n_samples: int = 64
    batch_size: int = 32  # views per step
    total_steps: int = 125_000
    warmup_steps: int = 500
    eta_max: float = 5e-4
    eta_min: float = 5e-6
    seed: int = 0
    precision: str = "f32"  # "f32" | "f64"
    loss: LossWeights = field(default_factory=LossWeights)
    assign_threshold: float = 0.5
    checkpoint_every: int = 0  # 0 = only at the end
    max_retries: int = 3
    holdout_views: dict = field(default_factory=dict)  # object id -> [view names]

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    def to_dict(self):
        d = dict(self.__dict__)
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["loss"] = LossWeights.from_dict(d.get("loss", {}))
        d["holdout_views"] = d.get("holdout_views", {}) or {}
        return cls(**d)


def step_rng(seed, step, lane=0):
    """Deterministic per-step generator; makes resume bit-exact by design.

    Lanes keep the batch-sampling stream independent from the ray-jitter one.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step, lane)))


class TrainState:
    def __init__(self, config, weights, embeddings, optimizer, schedule, step=0):
        self.config = config
        self.weights = weights
        self.embeddings = embeddings  # oid -> {"s": Tensor, "t": Tensor}
        self.optimizer = optimizer
        self.schedule = schedule
        self.step = step

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, config, object_ids):
        dtype = config.dtype
        weights = nets.ModelWeights.init(
            nets.ModelConfig(n_parts=config.n_parts), seed=config.seed, dtype=dtype
        )
        emb_rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(1 << 32,)))
        embeddings = {}
        for oid in sorted(object_ids):
            embeddings[oid] = {
                "s": ad.parameter(emb_rng.standard_normal(nets.LATENT_DIM), dtype=dtype, name=f"emb.{oid}.s"),
                "t": ad.parameter(emb_rng.standard_normal(nets.LATENT_DIM), dtype=dtype, name=f"emb.{oid}.t"),
            }
        schedule = CosineWarmupSchedule(
            eta_max=config.eta_max, eta_min=config.eta_min,
            warmup_steps=config.warmup_steps, total_steps=config.total_steps,
        )
        return cls(config, weights, embeddings, Adam(), schedule, step=0)

    def parameters(self):
        params = self.weights.parameters()
        for oid in sorted(self.embeddings):
            params += [self.embeddings[oid]["s"], self.embeddings[oid]["t"]]
        return params

    # -- instance assembly -----------------------------------------------------

    def decode_object(self, oid):
        """Embeddings -> per-part codes and frames (on the tape)."""
        z_s = self.embeddings[oid]["s"]
        z_t = self.embeddings[oid]["t"]
        zs_parts, zt_parts = nets.decompose(self.weights, z_s, z_t)
        q, t, s = nets.structure(self.weights, zs_parts)
        M = self.config.n_parts
        parts = []
        for m in range(M):
            parts.append(
                PartView(
                    z_s=ad.reshape(ad.slice_(zs_parts, (0, m)), (nets.LATENT_DIM,)),
                    z_t=ad.reshape(ad.slice_(zt_parts, (0, m)), (nets.LATENT_DIM,)),
                    q=ad.reshape(ad.slice_(q, (0, m)), (4,)),
                    t=ad.reshape(ad.slice_(t, (0, m)), (3,)),
                    s=ad.reshape(ad.slice_(s, (0, m)), (3,)),
                )
            )
        scales = ad.reshape(s, (M, 3))
        return parts, scales, z_s, z_t

    # -- persistence -------------------------------------------------------------

    def tensor_dict(self):
        out = {f"weights.{k}": v.data for k, v in self.weights.tensors.items()}
        for oid, e in self.embeddings.items():
            out[f"emb.{oid}.s"] = e["s"].data
            out[f"emb.{oid}.t"] = e["t"].data
        out.update(self.optimizer.state_tensors(self.parameters()))
        return out

    def save(self, path):
        meta = {
            "config": self.config.to_dict(),
            "model_config": self.weights.config.to_dict(),
            "objects": sorted(self.embeddings),
            "step": self.step,
        }
        ckpt.save_checkpoint(path, self.tensor_dict(), meta)

    @classmethod
    def load(cls, path):
        tensors, meta = ckpt.load_checkpoint(path)
        config = TrainConfig.from_dict(meta["config"])
        state = cls.init(config, meta["objects"])
        state.step = meta["step"]
        for k, t in state.weights.tensors.items():
            t.data = tensors[f"weights.{k}"].astype(config.dtype)
        for oid, e in state.embeddings.items():
            e["s"].data = tensors[f"emb.{oid}.s"].astype(config.dtype)
            e["t"].data = tensors[f"emb.{oid}.t"].astype(config.dtype)
        adam_arrays = {k: v for k, v in tensors.items() if k.startswith("adam.")}
        state.optimizer.load_state(state.parameters(), adam_arrays)
        return state


def train_step(state, batch):
    """One optimization step over a sampled ray batch.

    Renders each view against its object's decoded parts, composes the
    objective, backpropagates, and applies one lazy-Adam update to the
    network weights and the batch objects' embeddings. A non-finite loss
    aborts before any mutation (state rolled back by construction).
    """
    cfg = state.config
    render_cfg = RenderConfig(
        n_samples=cfg.n_samples, assign_threshold=cfg.assign_threshold
    )
    rng = step_rng(cfg.seed, state.step, lane=1)

    decoded = {}
    totals = []
    breakdowns = []
    flags = dict(batch.flags)
    try:
        for group in batch.groups:
            oid = group["oid"]
            if oid not in decoded:
                decoded[oid] = state.decode_object(oid)
            parts, scales, z_s, z_t = decoded[oid]
            out = render_rays(
                state.weights, parts, group["origins"], group["dirs"],
                render_cfg, rng=rng, stratified=True,
            )
            total, breakdown = compute_losses(
                out, group["obs"], scales, [z_s], [z_t], cfg.loss
            )
            totals.append(total)
            breakdowns.append(breakdown)
            if (group["obs"].labels == 1).sum() == 0:
                flags["zero_inside_batch"] = True
    except LossError as exc:
        raise TrainStepError(f"step {state.step} aborted: {exc}") from exc

    loss = totals[0] if len(totals) == 1 else ad.mul(sum(totals[1:], totals[0]), 1.0)
    loss = ad.mul(loss, 1.0 / len(totals))
    if not np.isfinite(loss.data):
        raise TrainStepError(f"step {state.step} aborted: non-finite total loss")

    params = state.weights.parameters()
    for oid in sorted(decoded):
        params += [state.embeddings[oid]["s"], state.embeddings[oid]["t"]]
    for p in params:
        p.zero_grad()
    loss.backward()
    grads = [p.grad for p in params]
    if any(g is not None and not np.isfinite(g).all() for g in grads):
        raise TrainStepError(f"step {state.step} aborted: non-finite gradient")

    lr = state.schedule.lr_at(state.step)
    if lr > 0:
        state.optimizer.step(params, grads, lr)
    state.step += 1

    avg = {k: float(np.mean([b[k] for b in breakdowns])) for k in breakdowns[0]}
    avg["total"] = float(loss.data)
    avg["lr"] = lr
    return avg, flags


def fit(config, index, steps=None, checkpoint_path=None, progress=None):
    """Run the training loop over a dataset index; returns the final state."""
    state = TrainState.init(config, index.object_ids)
    return fit_resume(state, index, steps=steps, checkpoint_path=checkpoint_path, progress=progress)


def fit_resume(state, index, steps=None, checkpoint_path=None, progress=None):
    cfg = state.config
    end = cfg.total_steps if steps is None else state.step + steps
    retries = 0
    while state.step < end:
        rng = step_rng(cfg.seed, state.step)
        batch = sample_ray_batch(
            index, rng, rays_per_image=cfg.rays_per_image,
            batch_size=cfg.batch_size, holdout=cfg.holdout_views,
        )
        try:
            metrics, flags = train_step(state, batch)
            retries = 0
        except TrainStepError as exc:
            log.error("%s", exc)
            retries += 1
            if retries > cfg.max_retries:
                raise
            state.step += 1  # move on to the next batch
            continue
        if progress is not None:
            progress(state.step, metrics, flags)
        if checkpoint_path and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
            state.save(checkpoint_path)
    if checkpoint_path:
        state.save(checkpoint_path)
    return state
