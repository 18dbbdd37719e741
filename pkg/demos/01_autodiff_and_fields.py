"""Tour of the core: the autodiff tape, part frames, and the field networks.

Run:  python demos/01_autodiff_and_fields.py
"""

import numpy as np

from partfields import autodiff as ad
from partfields import nets
from partfields.autodiff import Tensor
from partfields.geometry import PartFrame, ellipsoid_occupancy, quat_from_axis_angle

# -- the tape ---------------------------------------------------------------
# every op records how to push gradients back; backward() walks the tape

x = ad.parameter(np.array([3.0]), dtype=np.float64, name="x")
y = ad.mul(x, x)  # y = x^2
y.backward()
print(f"d/dx x^2 at x=3  ->  {x.grad[0]}   (expect 6)")

# gradients match finite differences for every primitive; see
# tests/test_autodiff.py for the full check

# -- part frames and the ellipsoid gate ----------------------------------------

frame = PartFrame(
    q=quat_from_axis_angle([0, 0, 1], np.pi / 4),
    t=[-0.2, 0.0, 0.0],
    s=[0.5, 0.3, 0.4],
)
center = -frame.t  # the frame maps world points by x_local = R (x + t)
print(f"gate at part center: {ellipsoid_occupancy(frame, center):.4f}   (expect ~1)")
surface = center + frame.rotation.T @ np.array([0.5, 0.0, 0.0])
print(f"gate on the surface: {ellipsoid_occupancy(frame, surface):.4f}   (expect 0.5)")

# -- the four networks -----------------------------------------------------------

weights = nets.ModelWeights.init(nets.ModelConfig(n_parts=4), seed=0)
rng = np.random.default_rng(0)
z_s = Tensor(rng.standard_normal(128).astype(np.float32))
z_t = Tensor(rng.standard_normal(128).astype(np.float32))

zs_parts, zt_parts = nets.decompose(weights, z_s, z_t)
print(f"decomposition: one embedding -> {zs_parts.shape[1]} per-part codes")

q, t, s = nets.structure(weights, zs_parts)
print(f"structure: quaternions unit-norm? {np.allclose(np.linalg.norm(q.data, axis=-1), 1.0)}")
print(f"           scales in (0,1)?      {bool((s.data > 0).all() and (s.data < 1).all())}")

pts = Tensor(rng.uniform(-0.5, 0.5, (5, 3)).astype(np.float32))
o, feat = nets.occupancy(weights, Tensor(zs_parts.data[0, 0]), pts)
print(f"occupancy head: o in [0,1] (sharpened sigmoid), feature dim {feat.shape[1]}")
