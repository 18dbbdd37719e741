"""Isosurface extraction against analytic ellipsoids."""

import numpy as np
import pytest

from partfields import mesh as M
from partfields.metrics import chamfer


def ellipsoid_field(radii, beta=100.0):
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


def analytic_surface_points(radii, n, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * np.asarray(radii)


@pytest.fixture(scope="module")
def ellipsoid_mesh():
    return M.extract_mesh(ellipsoid_field((0.5, 0.3, 0.4)), initial_res=32, refinement_levels=1)


class TestExtractMesh:
    def test_constant_zero_field_gives_empty_mesh(self):
        m = M.extract_mesh(lambda p: np.zeros(len(np.atleast_2d(p))), initial_res=16)
        assert m.empty

    def test_vertices_lie_on_the_iso_surface(self, ellipsoid_mesh):
        radii = np.array([0.5, 0.3, 0.4])
        f = ((ellipsoid_mesh.vertices / radii) ** 2).sum(axis=1)
        assert np.abs(f - 1.0).max() <= 0.02

    def test_chamfer_to_analytic_samples(self, ellipsoid_mesh):
        pts = analytic_surface_points((0.5, 0.3, 0.4), 10_000)
        cd = chamfer(ellipsoid_mesh.vertices, pts)
        assert cd < 1e-3

    def test_mise_equals_dense_marching_cubes(self, ellipsoid_mesh):
        dense = M.dense_marching_cubes(ellipsoid_field((0.5, 0.3, 0.4)), res=64)
        assert len(dense.triangles) == len(ellipsoid_mesh.triangles)
        cd = chamfer(ellipsoid_mesh.vertices, dense.vertices)
        assert cd < 1e-3

    def test_sphere_surface_area(self):
        m = M.extract_mesh(ellipsoid_field((0.5, 0.5, 0.5)), initial_res=32, refinement_levels=1)
        want = 4.0 * np.pi * 0.25
        assert abs(m.surface_area() - want) / want < 0.03

    def test_closed_surface_edge_sharing(self, ellipsoid_mesh):
        edges = {}
        for tri in ellipsoid_mesh.triangles:
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                edges[key] = edges.get(key, 0) + 1
        counts = np.array(list(edges.values()))
        assert (counts == 2).all()

    def test_no_degenerate_triangles(self, ellipsoid_mesh):
        assert (ellipsoid_mesh.triangle_areas() > 0).all()

    def test_field_nan_raises_with_location(self):
        def bad(pts):
            out = np.ones(len(np.atleast_2d(pts)))
            out[0] = np.nan
            return out

        from partfields.nets import ModelWeights, ModelConfig
        from partfields.render import PartView
        from partfields.autodiff import Tensor

        w = ModelWeights.init(ModelConfig(n_parts=1), seed=0)
        part = PartView(
            z_s=Tensor(np.full(128, np.nan, dtype=np.float32)),
            z_t=Tensor(np.zeros(128, dtype=np.float32)),
            q=Tensor(np.array([1, 0, 0, 0], dtype=np.float32)),
            t=Tensor(np.zeros(3, dtype=np.float32)),
            s=Tensor(np.full(3, 0.5, dtype=np.float32)),
        )
        f = M.part_occupancy(w, part)
        with pytest.raises(M.MeshError, match="non-finite"):
            f(np.zeros((4, 3)))


class TestObjectOccupancy:
    def make_parts(self):
        from partfields.nets import ModelWeights, ModelConfig
        from partfields.render import PartView
        from partfields.autodiff import Tensor

        w = ModelWeights.init(ModelConfig(n_parts=2), seed=0, dtype=np.float64)
        rng = np.random.default_rng(4)

        def part(center):
            return PartView(
                z_s=Tensor(rng.standard_normal(128)),
                z_t=Tensor(rng.standard_normal(128)),
                q=Tensor(np.array([1.0, 0, 0, 0])),
                t=Tensor(-np.asarray(center, dtype=np.float64)),
                s=Tensor(np.array([0.3, 0.3, 0.3])),
            )

        return w, [part([-0.4, 0, 0]), part([0.4, 0, 0])]

    def test_single_part_equals_its_field(self):
        w, parts = self.make_parts()
        pts = np.random.default_rng(5).uniform(-1, 1, (40, 3))
        whole = M.object_occupancy(w, parts[:1])(pts)
        single = M.part_occupancy(w, parts[0])(pts)
        np.testing.assert_array_equal(whole, single)

    def test_max_composition(self):
        w, parts = self.make_parts()
        pts = np.random.default_rng(6).uniform(-1, 1, (60, 3))
        whole = M.object_occupancy(w, parts)(pts)
        h0 = M.part_occupancy(w, parts[0])(pts)
        h1 = M.part_occupancy(w, parts[1])(pts)
        np.testing.assert_array_equal(whole, np.maximum(h0, h1))

    def test_removing_a_part_never_increases(self):
        w, parts = self.make_parts()
        pts = np.random.default_rng(7).uniform(-1, 1, (60, 3))
        whole = M.object_occupancy(w, parts)(pts)
        reduced = M.object_occupancy(w, parts[:1])(pts)
        assert (reduced <= whole + 1e-15).all()


class TestSampleSurface:
    def test_single_triangle_barycentric_validity(self):
        tri = M.Mesh(
            vertices=np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1.0, 0]]),
            triangles=np.array([[0, 1, 2]]),
        )
        pts = M.sample_surface(tri, 500, seed=1)
        assert (pts[:, 2] == 0).all()
        assert (pts[:, 0] >= 0).all() and (pts[:, 1] >= 0).all()
        assert (pts[:, 0] + pts[:, 1] <= 1.0 + 1e-12).all()

    def test_area_weighting(self):
        mesh = M.Mesh(
            vertices=np.array(
                [[0, 0, 0], [1, 0, 0], [0, 1, 0], [10, 10, 0], [13, 10, 0], [10, 12, 0]],
                dtype=np.float64,
            ),
            triangles=np.array([[0, 1, 2], [3, 4, 5]]),
        )
        pts = M.sample_surface(mesh, 100_000, seed=2)
        frac_small = (pts[:, 0] < 5).mean()
        # areas 0.5 and 3.0 -> expected fraction 1/7
        assert abs(frac_small - 1 / 7) < 0.05 * (1 / 7) + 0.01

    def test_fixed_seed_reproduces(self):
        tri = M.Mesh(
            vertices=np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1.0, 0]]),
            triangles=np.array([[0, 1, 2]]),
        )
        a = M.sample_surface(tri, 64, seed=3)
        b = M.sample_surface(tri, 64, seed=3)
        np.testing.assert_array_equal(a, b)

    def test_empty_mesh_rejected(self):
        with pytest.raises(M.MeshError):
            M.sample_surface(M.Mesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64)), 10)


class TestObjExport:
    def test_format(self):
        tri = M.Mesh(
            vertices=np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1.0, 0]]),
            triangles=np.array([[0, 1, 2]]),
        )
        text = M.mesh_to_obj(tri)
        lines = text.strip().split("\n")
        assert lines[0].startswith("v ") and lines[-1] == "f 1 2 3"
        assert text.endswith("\n") and "\r" not in text

    def test_groups(self):
        m = M.merge_meshes(
            [
                M.Mesh(np.eye(3), np.array([[0, 1, 2]])),
                M.Mesh(np.eye(3) * 2, np.array([[0, 1, 2]])),
            ],
            part_ids=[0, 3],
        )
        text = M.mesh_to_obj(m, groups=True)
        assert "g part_0" in text and "g part_3" in text
