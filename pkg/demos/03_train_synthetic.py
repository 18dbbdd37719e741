"""End-to-end: generate an exact synthetic scene, train briefly, render.

This is a scaled-down version of the overfit run in the acceptance suite
(a few hundred steps instead of thousands) so it finishes in a couple of
minutes; expect a blurry but recognizable reconstruction.

Run:  python demos/03_train_synthetic.py
"""

import os
import tempfile

import numpy as np

from partfields import pngio, synthetic
from partfields.dataset import load_dataset, sample_ray_batch
from partfields.losses import LossWeights
from partfields.metrics import iou, psnr
from partfields.render import render_image
from partfields.training import TrainConfig, TrainState, step_rng, train_step

root = os.path.join(tempfile.gettempdir(), "partfields_demo_scene")
synthetic.generate_dataset(root, n_objects=1, n_views=6, resolution=48, n_ellipsoids=2, seed=3)
index = load_dataset(root)
print(f"dataset at {root}: {sum(len(o.views) for o in index.objects)} views")

# a gentle warmup matters here: the translation heads are high-gain (they
# contract 128 dims), and slamming them early can throw parts out of the
# scene before the inside-ray losses anchor them
cfg = TrainConfig(
    n_parts=3, rays_per_image=128, n_samples=12, batch_size=1,
    total_steps=800, warmup_steps=300, eta_max=2e-4, seed=0, loss=LossWeights(k=8),
)
state = TrainState.init(cfg, index.object_ids)

for step in range(800):
    batch = sample_ray_batch(index, step_rng(cfg.seed, state.step), cfg.rays_per_image, cfg.batch_size)
    metrics, _ = train_step(state, batch)
    if (step + 1) % 100 == 0:
        print(f"step {step + 1}: total={metrics['total']:.4f} rgb={metrics['rgb']:.4f} "
              f"mask={metrics['mask']:.4f}")

view = index.objects[0].views[0]
parts, _, _, _ = state.decode_object(index.objects[0].oid)
rgb, mask, assigned = render_image(state.weights, parts, view.pose, n_samples=32)
print(f"\ntrain view after 800 steps: psnr={psnr(rgb, view.image.astype(np.float64)):.2f} dB, "
      f"mask iou={iou(mask > 0.5, view.mask):.3f}")
out = os.path.join(tempfile.gettempdir(), "partfields_demo_render.png")
pngio.write_png(out, pngio.float_to_u8(rgb))
print(f"render written to {out}")
