"""Analytic multi-ellipsoid scenes: exact renders, masks, and cameras.

The generator writes datasets in the training layout. Images come from
closed-form ray/ellipsoid intersection with flat shading, so they are exact
oracles for the learned renderer: masks are pixel-perfect and every color is
a constant.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import pngio
from .geometry import CameraPose, camera_rays, look_at

__all__ = ["Ellipsoid", "SceneSpec", "render_analytic", "generate_dataset"]


@dataclass
class Ellipsoid:
    center: np.ndarray
    radii: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(3)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)
        if (self.radii <= 0).any():
            raise ValueError(f"ellipsoid radii must be positive, got {self.radii}")


@dataclass
class SceneSpec:
    ellipsoids: list = field(default_factory=list)

    def to_dict(self):
        return {
            "ellipsoids": [
                {
                    "center": e.center.tolist(),
                    "radii": e.radii.tolist(),
                    "color": e.color.tolist(),
                }
                for e in self.ellipsoids
            ]
        }

    @classmethod
    def from_dict(cls, d):
        return cls([Ellipsoid(e["center"], e["radii"], e["color"]) for e in d["ellipsoids"]])


def ray_ellipsoid_hits(origins, dirs, ell):
    """Nearest positive hit parameter per ray (inf when missed)."""
    p = (origins - ell.center) / ell.radii
    q = dirs / ell.radii
    a = (q * q).sum(-1)
    b = (p * q).sum(-1)
    c = (p * p).sum(-1) - 1.0
    disc = b * b - a * c
    t = np.full(len(origins), np.inf)
    ok = disc >= 0
    root = np.sqrt(np.maximum(disc, 0.0))
    t_near = (-b - root) / a
    t_far = (-b + root) / a
    # take the nearest intersection in front of the origin
    cand = np.where(t_near > 1e-9, t_near, t_far)
    valid = ok & (cand > 1e-9)
    t[valid] = cand[valid]
    return t


def render_analytic(spec, pose):
    """Exact flat-shaded render of a scene from a camera; returns (rgb, mask)."""
    origins, dirs = camera_rays(pose)
    n = len(origins)
    best_t = np.full(n, np.inf)
    rgb = np.zeros((n, 3))
    for ell in spec.ellipsoids:
        t = ray_ellipsoid_hits(origins, dirs, ell)
        closer = t < best_t
        best_t[closer] = t[closer]
        rgb[closer] = ell.color
    mask = np.isfinite(best_t)
    H, W = pose.height, pose.width
    return rgb.reshape(H, W, 3), mask.reshape(H, W)


def random_scene(rng, n_ellipsoids, non_overlapping=True, max_tries=600):
    """Colored ellipsoids inside the unit cube, optionally pairwise separated.

    Crowded draws shrink progressively so placement always succeeds while
    staying deterministic in the rng stream.
    """
    if not 1 <= n_ellipsoids <= 8:
        raise ValueError("scenes support 1..8 ellipsoids")
    ells = []
    tries = 0
    while len(ells) < n_ellipsoids:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not place non-overlapping ellipsoids")
        shrink = 0.93 ** (tries // 50)
        radii = rng.uniform(0.26, 0.4, 3) * shrink
        center = rng.uniform(-0.42, 0.42, 3)
        if non_overlapping and any(
            np.linalg.norm(center - e.center) < 1.1 * (radii.max() + e.radii.max())
            for e in ells
        ):
            continue
        color = rng.uniform(0.25, 1.0, 3)
        ells.append(Ellipsoid(center, radii, color))
    return SceneSpec(ells)


def hemisphere_poses(rng, n_views, radius=2.6, width=64, height=64):
    """Cameras sampled on the upper hemisphere, looking at the origin."""
    poses = []
    for _ in range(n_views):
        az = rng.uniform(0, 2 * np.pi)
        el = rng.uniform(np.radians(12), np.radians(70))
        eye = radius * np.array(
            [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
        )
        focal = 1.45 * max(width, height)
        poses.append(
            CameraPose(
                fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
                width=width, height=height, cam_to_world=look_at(eye),
            )
        )
    return poses


def generate_dataset(
    root,
    n_objects=2,
    n_views=8,
    resolution=64,
    n_ellipsoids=(2, 3),
    seed=0,
    radius=2.6,
    non_overlapping=True,
):
    """Write a full synthetic dataset; returns the per-object scene specs."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    os.makedirs(os.path.join(root, "objects"), exist_ok=True)
    specs = {}
    lo, hi = (n_ellipsoids, n_ellipsoids) if isinstance(n_ellipsoids, int) else n_ellipsoids
    for i in range(n_objects):
        oid = f"obj{i:03d}"
        n_e = int(rng.integers(lo, hi + 1))
        spec = random_scene(rng, n_e, non_overlapping)
        poses = hemisphere_poses(rng, n_views, radius, resolution, resolution)

        obj_dir = os.path.join(root, "objects", oid)
        os.makedirs(os.path.join(obj_dir, "images"), exist_ok=True)
        os.makedirs(os.path.join(obj_dir, "masks"), exist_ok=True)
        views = []
        for v, pose in enumerate(poses):
            rgb, mask = render_analytic(spec, pose)
            if not mask.any():
                import warnings

                warnings.warn(f"{oid} view {v} is empty (all background)")
            name = f"view{v:03d}"
            pngio.write_png(os.path.join(obj_dir, "images", name + ".png"), pngio.float_to_u8(rgb))
            pngio.write_png(
                os.path.join(obj_dir, "masks", name + ".png"),
                (mask * 255).astype(np.uint8),
            )
            views.append(pose.to_dict(name))
        with open(os.path.join(obj_dir, "cameras.json"), "w") as fh:
            json.dump({"views": views}, fh, indent=1, sort_keys=True)
        specs[oid] = spec
    with open(os.path.join(root, "scene_specs.json"), "w") as fh:
        json.dump({k: v.to_dict() for k, v in specs.items()}, fh, indent=1, sort_keys=True)
    return specs
