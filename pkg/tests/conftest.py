"""Shared fixtures: the cached overfit checkpoint used by the slow criteria."""

import hashlib
import json
import os

import numpy as np
import pytest

CACHE_DIR = os.path.join(os.path.dirname(__file__), os.pardir, ".cache")


def overfit_config():
    from partfields.losses import LossWeights
    from partfields.training import TrainConfig

    # tuned for the synthetic overfit scene on a small CPU budget; paper-scale
    # defaults live in TrainConfig itself
    return TrainConfig(
        n_parts=4,
        rays_per_image=256,
        n_samples=20,
        batch_size=2,
        total_steps=14_000,
        warmup_steps=500,
        eta_max=4e-4,
        seed=1,
        loss=LossWeights(k=16),
    )


def _config_key(cfg, data_seed):
    blob = json.dumps({**cfg.to_dict(), "data_seed": data_seed}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def heldout_eval_views(data_dir, resolution=64):
    """Exact analytic renders of each object from a camera outside the
    training set (the generator is a closed-form oracle for any pose)."""
    from partfields.geometry import CameraPose, look_at
    from partfields.synthetic import SceneSpec, render_analytic

    with open(os.path.join(data_dir, "scene_specs.json")) as fh:
        specs = {k: SceneSpec.from_dict(v) for k, v in json.load(fh).items()}
    az, el, radius = np.radians(205.0), np.radians(38.0), 2.6
    eye = radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    focal = 1.45 * resolution
    pose = CameraPose(
        fx=focal, fy=focal, cx=resolution / 2, cy=resolution / 2,
        width=resolution, height=resolution, cam_to_world=look_at(eye),
    )
    out = {}
    for oid, spec in specs.items():
        rgb, mask = render_analytic(spec, pose)
        out[oid] = {"pose": pose, "image": rgb, "mask": mask}
    return out


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """Synthetic scene + trained checkpoint for A3/A4/A9/A10 (disk-cached)."""
    from partfields.cli import main as cli_main
    from partfields.dataset import load_dataset
    from partfields.training import TrainState, fit

    data_seed = 9
    cfg = overfit_config()
    key = _config_key(cfg, data_seed)
    os.makedirs(CACHE_DIR, exist_ok=True)
    data_dir = os.path.join(CACHE_DIR, f"scene_{data_seed}")
    ckpt = os.path.join(CACHE_DIR, f"overfit_{key}.ckpt")
    marker = os.path.join(CACHE_DIR, f"overfit_{key}.json")

    if not os.path.isdir(data_dir):
        rc = cli_main([
            "--seed", str(data_seed), "gen-data", "--out", data_dir,
            "--objects", "2", "--views", "8", "--res", "64",
            "--min-parts", "2", "--max-parts", "3",
        ])
        assert rc == 0
    index = load_dataset(data_dir)

    if os.path.isfile(ckpt) and os.path.isfile(marker):
        state = TrainState.load(ckpt)
        info = json.load(open(marker))
    else:
        import time

        t0 = time.perf_counter()
        losses = []
        state = fit(cfg, index, progress=lambda step, m, f: losses.append(m["total"]))
        elapsed = time.perf_counter() - t0
        state.save(ckpt)
        info = {"train_seconds": elapsed, "steps": state.step, "losses": losses}
        json.dump(info, open(marker, "w"))
    return {
        "state": state,
        "index": index,
        "ckpt": ckpt,
        "info": info,
        "data_dir": data_dir,
        "eval_views": heldout_eval_views(data_dir),
    }
