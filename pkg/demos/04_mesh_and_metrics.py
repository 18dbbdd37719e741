"""Isosurface extraction and generative metrics on analytic fields.

Run:  python demos/04_mesh_and_metrics.py
"""

import numpy as np

from partfields.mesh import dense_marching_cubes, extract_mesh, mesh_to_obj, sample_surface
from partfields.metrics import chamfer, coverage, mmd


def ellipsoid(radii, beta=100.0):
    radii = np.asarray(radii, dtype=np.float64)

    def field(pts):
        pts = np.atleast_2d(pts)
        f = ((pts / radii) ** 2).sum(axis=-1)
        t = beta * (1.0 - f)
        out = np.empty_like(t)
        pos = t >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
        e = np.exp(t[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    return field


# multiresolution extraction: coarse grid, refine straddling cells, marching
# cubes, then bisection pulls vertices onto the exact iso surface
field = ellipsoid((0.5, 0.3, 0.4))
mesh = extract_mesh(field, initial_res=32, refinement_levels=1)
f_err = np.abs(((mesh.vertices / [0.5, 0.3, 0.4]) ** 2).sum(axis=1) - 1.0).max()
print(f"MISE mesh: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
print(f"worst vertex iso error |f-1|: {f_err:.5f}")

dense = dense_marching_cubes(field, res=64)
print(f"agrees with dense marching cubes: chamfer {chamfer(mesh.vertices, dense.vertices):.2e}")

sphere = extract_mesh(ellipsoid((0.5, 0.5, 0.5)), initial_res=32, refinement_levels=1)
print(f"sphere area {sphere.surface_area():.4f} vs 4*pi*r^2 = {4 * np.pi * 0.25:.4f}")

# surface sampling + the generation metrics
clouds_ref = [sample_surface(extract_mesh(ellipsoid(r), 32, 0), 512, seed=i)
              for i, r in enumerate([(0.5, 0.3, 0.4), (0.3, 0.5, 0.3), (0.4, 0.4, 0.25)])]
clouds_gen = [c + np.random.default_rng(9).normal(0, 0.01, c.shape) for c in clouds_ref]
print(f"\nmmd (noisy copies vs originals): {mmd(clouds_gen, clouds_ref):.5f}")
print(f"coverage: {coverage(clouds_gen, clouds_ref):.2f}  (each copy matches its original)")

print("\nfirst OBJ lines:")
print("\n".join(mesh_to_obj(mesh).splitlines()[:3]))
