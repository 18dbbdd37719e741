"""Dataset ingestion and balanced inside/outside ray batching.

Expected layout (bit-exact):
    root/objects/<id>/images/<view>.png   8-bit RGB, black background
    root/objects/<id>/masks/<view>.png    8-bit gray, 0 or 255
    root/objects/<id>/cameras.json        {"views": [{name, width, height,
                                           fx, fy, cx, cy, cam_to_world}]}
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import pngio
from .geometry import CameraPose, GeometryError, rays_for_pixels
from .losses import RayObservation

__all__ = ["IngestError", "View", "DatasetIndex", "load_dataset", "sample_ray_batch", "RayBatch"]


class IngestError(ValueError):
    pass


@dataclass
class View:
    name: str
    pose: CameraPose
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    mask: np.ndarray  # (H, W) bool
    inside: np.ndarray  # flat pixel ids with mask on
    outside: np.ndarray

    def pixels_from_flat(self, flat_ids):
        u = flat_ids % self.pose.width
        v = flat_ids // self.pose.width
        return np.stack([u, v], axis=-1)


@dataclass
class ObjectEntry:
    oid: str
    views: list


@dataclass
class DatasetIndex:
    root: str
    objects: list  # list[ObjectEntry], sorted by id

    @property
    def object_ids(self):
        return [o.oid for o in self.objects]

    def all_views(self):
        return [(o.oid, v) for o in self.objects for v in o.views]


def load_dataset(root):
    objects_dir = os.path.join(root, "objects")
    if not os.path.isdir(objects_dir):
        raise IngestError(f"no objects directory under {root}")
    oids = sorted(d for d in os.listdir(objects_dir) if os.path.isdir(os.path.join(objects_dir, d)))
    if not oids:
        raise IngestError(f"no objects in {objects_dir}")
    objects = []
    for oid in oids:
        obj_dir = os.path.join(objects_dir, oid)
        cam_path = os.path.join(obj_dir, "cameras.json")
        if not os.path.isfile(cam_path):
            raise IngestError(f"missing cameras.json for {oid}: {cam_path}")
        with open(cam_path) as fh:
            cams = json.load(fh)
        views = []
        for vd in cams["views"]:
            name = vd["name"]
            img_path = os.path.join(obj_dir, "images", name + ".png")
            mask_path = os.path.join(obj_dir, "masks", name + ".png")
            if not os.path.isfile(img_path):
                raise IngestError(f"missing image file {img_path}")
            if not os.path.isfile(mask_path):
                raise IngestError(f"missing mask file {mask_path}")
            try:
                pose = CameraPose.from_dict(vd)
            except GeometryError as exc:
                raise IngestError(f"bad camera for {oid}/{name}: {exc}") from exc
            img = pngio.read_png(img_path)
            mask_u8 = pngio.read_png(mask_path)
            if img.ndim != 3 or img.shape[2] != 3:
                raise IngestError(f"image {img_path} is not RGB")
            if mask_u8.ndim != 2:
                raise IngestError(f"mask {mask_path} is not single-channel")
            if img.shape[:2] != mask_u8.shape:
                raise IngestError(
                    f"size mismatch between {img_path} {img.shape[:2]} and "
                    f"{mask_path} {mask_u8.shape}"
                )
            if img.shape[0] != pose.height or img.shape[1] != pose.width:
                raise IngestError(f"camera/image size mismatch for {img_path}")
            if not np.isin(np.unique(mask_u8), (0, 255)).all():
                raise IngestError(f"mask {mask_path} has values other than 0/255")
            mask = mask_u8 == 255
            flat = np.arange(mask.size, dtype=np.int64)
            inside = flat[mask.reshape(-1)]
            outside = flat[~mask.reshape(-1)]
            if len(inside) == 0:
                warnings.warn(f"view {oid}/{name} has an all-black mask")
            views.append(
                View(
                    name=name,
                    pose=pose,
                    image=pngio.u8_to_float(img),
                    mask=mask,
                    inside=inside,
                    outside=outside,
                )
            )
        objects.append(ObjectEntry(oid=oid, views=views))
    return DatasetIndex(root=root, objects=objects)


@dataclass
class RayBatch:
    """One training batch: rays grouped per selected view."""

    groups: list  # list of dicts: oid, origins, dirs, obs (RayObservation)
    flags: dict = field(default_factory=dict)

    @property
    def n_rays(self):
        return sum(len(g["origins"]) for g in self.groups)


def sample_ray_batch(index, rng, rays_per_image=512, batch_size=32, holdout=None):
    """Balanced ray batch: for each drawn view, half inside + half outside pixels.

    Views are drawn uniformly over all (object, view) pairs; `holdout` maps
    object id -> set of view names excluded from training.
    """
    if rays_per_image % 2 != 0:
        raise IngestError("rays_per_image must be even (half inside, half outside)")
    half = rays_per_image // 2
    pool = [
        (oid, v)
        for oid, v in index.all_views()
        if holdout is None or v.name not in holdout.get(oid, ())
    ]
    picks = rng.integers(0, len(pool), size=batch_size)
    groups = []
    flags = {"outside_only_views": 0}
    for pick in picks:
        oid, view = pool[pick]
        if len(view.inside) == 0:
            flags["outside_only_views"] += 1
            chosen_in = np.empty(0, dtype=np.int64)
            n_out = min(rays_per_image, len(view.outside))
        else:
            chosen_in = rng.choice(view.inside, size=min(half, len(view.inside)), replace=False)
            n_out = min(half, len(view.outside))
        chosen_out = rng.choice(view.outside, size=n_out, replace=False)
        flat = np.concatenate([chosen_in, chosen_out])
        pixels = view.pixels_from_flat(flat)
        origins, dirs = rays_for_pixels(view.pose, pixels)
        colors = view.image.reshape(-1, 3)[flat].astype(np.float64)
        masks = view.mask.reshape(-1)[flat].astype(np.float64)
        groups.append(
            {
                "oid": oid,
                "view": view.name,
                "origins": origins,
                "dirs": dirs,
                "obs": RayObservation(colors=colors, masks=masks),
            }
        )
    return RayBatch(groups=groups, flags=flags)
