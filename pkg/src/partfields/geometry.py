"""Cameras, rays, part coordinate frames, ellipsoid gates, positional encoding.

Plain-numpy functions carry the no-grad paths (sampling, assignment, meshing);
``*_t`` variants build the same math on the autodiff tape for the
differentiable rendering/loss path.

Conventions fixed here and used everywhere:
  * quaternions are (w, x, y, z), right-handed, active rotations;
  * a part frame maps world points to part-local ones via x_local = R (x + t),
    directions via d_local = R d (re-normalized);
  * the scene is the axis-aligned cube [-1, 1]^3; per-ray sampling bounds come
    from the ray/cube intersection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

SCENE_BOUND = 1.0
ELLIPSOID_SHARPNESS = 100.0

__all__ = [
    "CameraPose",
    "Ray",
    "RaySamples",
    "PartFrame",
    "GeometryError",
    "normalize_quat",
    "quat_to_rotation",
    "quat_multiply",
    "quat_conjugate",
    "quat_from_axis_angle",
    "rays_for_pixels",
    "camera_rays",
    "orbit_pose",
    "ray_cube_bounds",
    "sample_along_ray",
    "positional_encoding",
    "ellipsoid_occupancy",
]


class GeometryError(ValueError):
    pass


# -- cameras -------------------------------------------------------------------


@dataclass
class CameraPose:
    """Pinhole camera with a rigid camera-to-world transform.

    The optical axis is +z in the camera frame; pixel (u, v) indexes
    column u, row v, and rays pass through pixel centers (u+0.5, v+0.5).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    cam_to_world: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.cam_to_world = np.asarray(self.cam_to_world, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        R = self.cam_to_world[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-5:
            raise GeometryError("camera rotation block is not orthonormal")

    @property
    def center(self):
        return self.cam_to_world[:3, 3]

    def to_dict(self, name=""):
        return {
            "name": name,
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "cam_to_world": [float(v) for v in self.cam_to_world.reshape(-1)],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            fx=d["fx"],
            fy=d["fy"],
            cx=d["cx"],
            cy=d["cy"],
            width=d["width"],
            height=d["height"],
            cam_to_world=np.asarray(d["cam_to_world"], dtype=np.float64).reshape(4, 4),
        )


@dataclass
class Ray:
    origin: np.ndarray
    dir: np.ndarray


def rays_for_pixels(pose, pixels):
    """Rays through the centers of (u, v) pixels; origins at the camera center.

    Returns (origins, dirs) as (K, 3) float64 arrays with unit dirs.
    """
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if (
        (px[:, 0] < 0).any()
        or (px[:, 0] >= pose.width).any()
        or (px[:, 1] < 0).any()
        or (px[:, 1] >= pose.height).any()
    ):
        raise GeometryError("pixel outside image bounds")
    x = (px[:, 0] + 0.5 - pose.cx) / pose.fx
    y = (px[:, 1] + 0.5 - pose.cy) / pose.fy
    d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    R = pose.cam_to_world[:3, :3]
    d = d_cam @ R.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.center, d.shape).copy()
    return o, d


def camera_rays(pose):
    """Rays for every pixel, row-major; returns (origins, dirs) of shape (H*W, 3)."""
    u, v = np.meshgrid(np.arange(pose.width), np.arange(pose.height))
    pixels = np.stack([u.reshape(-1), v.reshape(-1)], axis=-1)
    return rays_for_pixels(pose, pixels)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """Camera-to-world matrix with +z looking from eye toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-8:  # looking straight along up; pick another basis
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        nr = np.linalg.norm(right)
    right /= nr
    down = np.cross(fwd, right)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = down
    m[:3, 2] = fwd
    m[:3, 3] = eye
    return m


def orbit_pose(azimuth, elevation, radius, width=128, height=128, focal=None):
    """Camera on a sphere around the origin, looking at it (angles in degrees)."""
    az, el = np.radians(azimuth), np.radians(elevation)
    eye = radius * np.array(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
    )
    focal = focal if focal is not None else 1.2 * max(width, height)
    return CameraPose(
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
        cam_to_world=look_at(eye),
    )


# -- quaternions -----------------------------------------------------------------


def normalize_quat(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if (n < 1e-8).any():
        raise GeometryError("degenerate quaternion (norm < 1e-8)")
    return q / n


def quat_to_rotation(q):
    """Unit quaternion (w, x, y, z) -> 3x3 proper rotation matrix."""
    w, x, y, z = normalize_quat(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = angle / 2.0
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


# -- part frames -----------------------------------------------------------------


@dataclass
class PartFrame:
    """Pose and extent of one part: x_local = R(q) (x + t), gated by scale s."""

    q: np.ndarray
    t: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.q = normalize_quat(self.q)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.s = np.asarray(self.s, dtype=np.float64).reshape(3)
        if (self.s <= 0).any():
            raise GeometryError(f"scale must be positive, got {self.s}")

    @property
    def rotation(self):
        return quat_to_rotation(self.q)

    def to_local(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x + self.t) @ self.rotation.T

    def dir_to_local(self, d):
        d = np.asarray(d, dtype=np.float64) @ self.rotation.T
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def to_world(self, x_local):
        return np.asarray(x_local, dtype=np.float64) @ self.rotation - self.t

    def copy(self):
        return PartFrame(self.q.copy(), self.t.copy(), self.s.copy())


def ellipsoid_occupancy(frame, x, beta=ELLIPSOID_SHARPNESS):
    """Soft inside/outside of the part's ellipsoid at world point(s) x."""
    if beta <= 0:
        raise GeometryError(f"sharpness must be positive, got {beta}")
    if (frame.s == 0).any():
        raise GeometryError("degenerate part: zero scale component")
    xl = frame.to_local(x)
    f = ((xl / frame.s) ** 2).sum(axis=-1)
    return _sigmoid_np(beta * (1.0 - f))


def _sigmoid_np(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# -- positional encoding ------------------------------------------------------------


def positional_encoding(v, L):
    """Per-component lift [p, sin(2^0 pi p), cos(2^0 pi p), ...], grouped per dim."""
    v = np.asarray(v, dtype=np.float64)
    if L == 0:
        return v.copy()
    freqs = np.pi * (2.0 ** np.arange(L))
    u = v[..., None] * freqs  # (..., D, L)
    sc = np.stack([np.sin(u), np.cos(u)], axis=-1).reshape(*u.shape[:-1], 2 * L)
    out = np.concatenate([v[..., None], sc], axis=-1)
    return out.reshape(*v.shape[:-1], v.shape[-1] * (2 * L + 1))


def positional_encoding_t(v, L):
    """Tape version of :func:`positional_encoding` (same layout)."""
    if L == 0:
        return v
    freqs = np.pi * (2.0 ** np.arange(L, dtype=np.float64))
    d = v.shape[-1]
    u = ad.mul(ad.reshape(v, (*v.shape, 1)), ad.Tensor(freqs.reshape(1, L).astype(v.dtype)))
    sc = ad.stack([ad.sin(u), ad.cos(u)], axis=-1)
    sc = ad.reshape(sc, (*v.shape, 2 * L))
    out = ad.concat([ad.reshape(v, (*v.shape, 1)), sc], axis=-1)
    return ad.reshape(out, (*v.shape[:-1], d * (2 * L + 1)))


# -- ray sampling --------------------------------------------------------------------


def ray_cube_bounds(origins, dirs, bound=SCENE_BOUND):
    """Slab intersection of rays with the cube [-bound, bound]^3.

    Returns (near, far, hit); near is clamped to t >= 0.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t0 = (-bound - origins) * inv
    t1 = (bound - origins) * inv
    parallel = dirs == 0
    inside = (np.abs(origins) <= bound) | ~parallel
    lo = np.where(parallel, -np.inf, np.minimum(t0, t1))
    hi = np.where(parallel, np.inf, np.maximum(t0, t1))
    near = np.maximum(lo.max(axis=-1), 0.0)
    far = hi.min(axis=-1)
    hit = (near < far) & inside.all(axis=-1) & np.isfinite(far)
    # a parallel ray outside its slab never hits
    miss_slab = (parallel & (np.abs(origins) > bound)).any(axis=-1)
    hit &= ~miss_slab
    return near, far, hit


@dataclass
class RaySamples:
    """Ordered quadrature points along a batch of rays.

    Rays that miss the scene cube have ``hit=False`` and carry no usable
    samples (their rows are zero-filled and must not be interpreted).
    """

    ts: np.ndarray  # (R, N)
    points: np.ndarray  # (R, N, 3)
    deltas: np.ndarray  # (R, N)
    near: np.ndarray  # (R,)
    far: np.ndarray  # (R,)
    hit: np.ndarray  # (R,) bool

    @property
    def n_samples(self):
        return self.ts.shape[1]


def sample_along_ray(origins, dirs, n, rng=None, stratified=True, bound=SCENE_BOUND):
    """Sample n points per ray inside the scene cube.

    Stratified mode draws one uniform t per equal bin of [near, far];
    otherwise bin midpoints are used (deterministic).
    """
    if n < 1:
        raise GeometryError(f"need at least one sample, got {n}")
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    near, far, hit = ray_cube_bounds(origins, dirs, bound)
    R = origins.shape[0]
    span = np.where(hit, far - near, 0.0)
    if stratified:
        if rng is None:
            raise GeometryError("stratified sampling requires an rng")
        u = rng.random((R, n))
    else:
        u = np.full((R, n), 0.5)
    ts = near[:, None] + span[:, None] * (np.arange(n) + u) / n
    ts = np.where(hit[:, None], ts, 0.0)
    points = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    deltas = np.empty_like(ts)
    deltas[:, :-1] = ts[:, 1:] - ts[:, :-1]
    deltas[:, -1] = np.where(hit, far - ts[:, -1], 0.0)
    return RaySamples(ts=ts, points=points, deltas=deltas, near=near, far=far, hit=hit)
