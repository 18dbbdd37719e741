"""Adam optimizer and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import GradcoreError, Tensor

__all__ = ["Adam", "CosineWarmupSchedule"]


class Adam:
    """Bias-corrected Adam with lazy (sparse) per-parameter state.

    Moments and step counts are kept per parameter and advance only when a
    gradient is supplied for that parameter, so parameters outside a batch
    (e.g. embeddings of objects not sampled this step) stay bit-unchanged.
    """

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.steps = {}

    def step(self, params, grads, lr):
        """Update `params` in place from aligned `grads` (numpy arrays)."""
        if lr <= 0:
            raise GradcoreError(f"learning rate must be positive, got {lr}")
        for p, g in zip(params, grads):
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise GradcoreError(
                    f"gradient shape {g.shape} does not match parameter {p.data.shape}"
                )
            key = id(p) if p.name is None else p.name
            m = self.m.get(key)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
                self.m[key], self.v[key] = m, v
                self.steps[key] = 0
            else:
                v = self.v[key]
            t = self.steps[key] + 1
            self.steps[key] = t
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def state_tensors(self, params):
        """Expose moment/step state as named tensors for checkpointing."""
        out = {}
        for p in params:
            key = id(p) if p.name is None else p.name
            if key in self.m:
                out[f"adam.m.{key}"] = self.m[key]
                out[f"adam.v.{key}"] = self.v[key]
                out[f"adam.t.{key}"] = np.array([self.steps[key]], dtype=np.float64)
        return out

    def load_state(self, params, arrays):
        for p in params:
            key = id(p) if p.name is None else p.name
            mk = f"adam.m.{key}"
            if mk in arrays:
                self.m[key] = np.array(arrays[mk], copy=True)
                self.v[key] = np.array(arrays[f"adam.v.{key}"], copy=True)
                self.steps[key] = int(arrays[f"adam.t.{key}"][0])


class CosineWarmupSchedule:
    """Linear warmup to `eta_max`, then cosine decay to `eta_min`."""

    def __init__(self, eta_max=5e-4, eta_min=5e-6, warmup_steps=500, total_steps=125_000):
        if total_steps <= warmup_steps:
            raise GradcoreError(
                f"total_steps ({total_steps}) must exceed warmup_steps ({warmup_steps})"
            )
        self.eta_max = eta_max
        self.eta_min = eta_min
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps

    def lr_at(self, step):
        if step < 0:
            raise GradcoreError(f"step must be >= 0, got {step}")
        if step < self.warmup_steps:
            return self.eta_max * step / self.warmup_steps
        progress = (step - self.warmup_steps) / (self.total_steps - self.warmup_steps)
        progress = min(progress, 1.0)
        return self.eta_min + 0.5 * (self.eta_max - self.eta_min) * (
            1.0 + math.cos(math.pi * progress)
        )
