"""Network architecture contracts: shapes, dataflow, equivariance, gradients."""

import numpy as np
import pytest

from partfields import autodiff as ad
from partfields import nets
from partfields.geometry import GeometryError, positional_encoding_t


@pytest.fixture(scope="module")
def small_weights():
    return nets.ModelWeights.init(nets.ModelConfig(n_parts=16), seed=0, dtype=np.float64)


def embeddings(seed=1, dtype=np.float64):
    rng = np.random.default_rng(seed)
    z_s = ad.parameter(rng.standard_normal(128), dtype=dtype, name="z_s")
    z_t = ad.parameter(rng.standard_normal(128), dtype=dtype, name="z_t")
    return z_s, z_t


class TestDecompose:
    def test_sixteen_tokens_out(self, small_weights):
        z_s, z_t = embeddings()
        zs, zt = nets.decompose(small_weights, z_s, z_t)
        assert zs.shape == (1, 16, 128) and zt.shape == (1, 16, 128)

    def test_zeroed_mixing_layers_pass_projections_through(self):
        w = nets.ModelWeights.init(nets.ModelConfig(n_parts=4), seed=0, dtype=np.float64)
        for name, t in w.tensors.items():
            if ".attn.wo" in name or ".mlp.w2" in name:
                t.data[:] = 0.0
        z_s, z_t = embeddings(2)
        zs, _ = nets.decompose(w, z_s, z_t)
        want = np.stack(
            [
                z_s.data @ w[f"proj.{m}.w"].data + w[f"proj.{m}.b"].data
                for m in range(4)
            ]
        )
        np.testing.assert_allclose(zs.data[0], want, atol=1e-12)

    def test_permutation_equivariance(self):
        # permuting the projection slots permutes the output tokens identically
        cfg = nets.ModelConfig(n_parts=5)
        w = nets.ModelWeights.init(cfg, seed=3, dtype=np.float64)
        z_s, z_t = embeddings(4)
        zs_a, _ = nets.decompose(w, z_s, z_t)

        perm = [3, 0, 4, 1, 2]
        w2 = w.copy()
        for dst, src in enumerate(perm):
            w2.tensors[f"proj.{dst}.w"].data[:] = w[f"proj.{src}.w"].data
            w2.tensors[f"proj.{dst}.b"].data[:] = w[f"proj.{src}.b"].data
        zs_b, _ = nets.decompose(w2, z_s, z_t)
        np.testing.assert_allclose(zs_b.data[0], zs_a.data[0][perm], atol=1e-10)

    def test_gradient_reaches_embeddings_and_transformer(self, small_weights):
        z_s, z_t = embeddings(5)
        zs, zt = nets.decompose(small_weights, z_s, z_t)
        loss = ad.sum_(ad.mul(zs, zs)) + ad.sum_(zt)
        loss.backward()
        assert np.abs(z_s.grad).max() > 0
        assert np.abs(small_weights["tf_s.0.attn.wq"].grad).max() > 0
        for t in small_weights.parameters():
            t.zero_grad()


class TestStructure:
    def test_same_code_same_frame(self, small_weights):
        rng = np.random.default_rng(6)
        z = rng.standard_normal(128)
        zs = ad.Tensor(np.stack([z, z])[None], dtype=np.float64)
        q, t, s = nets.structure(small_weights, zs)
        np.testing.assert_array_equal(q.data[0, 0], q.data[0, 1])
        np.testing.assert_array_equal(t.data[0, 0], t.data[0, 1])

    def test_quaternions_unit_and_scales_bounded(self, small_weights):
        rng = np.random.default_rng(7)
        zs = ad.Tensor(rng.standard_normal((1, 16, 128)), dtype=np.float64)
        q, t, s = nets.structure(small_weights, zs)
        np.testing.assert_allclose(np.linalg.norm(q.data, axis=-1), 1.0, atol=1e-12)
        assert (s.data > 0).all() and (s.data < 1).all()

    def test_zeroed_heads_raise_degenerate_quaternion(self):
        w = nets.ModelWeights.init(nets.ModelConfig(n_parts=2), seed=0, dtype=np.float64)
        w.tensors["struct.quat.w"].data[:] = 0.0
        w.tensors["struct.quat.b"].data[:] = 0.0
        zs = ad.Tensor(np.zeros((1, 2, 128)), dtype=np.float64)
        with pytest.raises(GeometryError):
            nets.structure(w, zs)


class TestOccupancy:
    def test_outputs_in_unit_interval(self, small_weights):
        rng = np.random.default_rng(8)
        z = ad.Tensor(rng.standard_normal(128), dtype=np.float64)
        x = ad.Tensor(rng.uniform(-1, 1, (50, 3)), dtype=np.float64)
        o, feat = nets.occupancy(small_weights, z, x)
        # the sharpened sigmoid saturates to the interval ends in float
        assert ((o.data >= 0) & (o.data <= 1)).all() and np.isfinite(o.data).all()

    def test_feature_dim_256(self, small_weights):
        z = ad.Tensor(np.zeros(128), dtype=np.float64)
        x = ad.Tensor(np.zeros((3, 3)), dtype=np.float64)
        o, feat = nets.occupancy(small_weights, z, x)
        assert feat.shape == (3, 256)

    def test_zero_logit_gives_half(self):
        w = nets.ModelWeights.init(nets.ModelConfig(n_parts=2), seed=1, dtype=np.float64)
        w.tensors["occ.out.w"].data[:, 0] = 0.0
        w.tensors["occ.out.b"].data[0] = 0.0
        z = ad.Tensor(np.ones(128), dtype=np.float64)
        x = ad.Tensor(np.zeros((1, 3)), dtype=np.float64)
        o, _ = nets.occupancy(w, z, x)
        assert o.data[0, 0] == pytest.approx(0.5)


class TestColor:
    def run_color(self, w, z_s, z_t, pts, dirs):
        o, feat = nets.occupancy(w, z_s, pts)
        enc_x = positional_encoding_t(pts, 10)
        enc_d = positional_encoding_t(dirs, 10)
        return nets.color(w, z_t, enc_x, enc_d, feat), o

    def test_rgb_bounded(self, small_weights):
        rng = np.random.default_rng(9)
        z_s = ad.Tensor(rng.standard_normal(128), dtype=np.float64)
        z_t = ad.Tensor(rng.standard_normal(128), dtype=np.float64)
        pts = ad.Tensor(rng.uniform(-1, 1, (17, 3)), dtype=np.float64)
        dirs = ad.Tensor(rng.standard_normal((17, 3)), dtype=np.float64)
        rgb, _ = self.run_color(small_weights, z_s, z_t, pts, dirs)
        assert rgb.shape == (17, 3)
        assert ((rgb.data > 0) & (rgb.data < 1)).all()

    def test_input_concat_dim_is_510(self):
        assert nets.COLOR_IN_DIM == 510

    def test_texture_code_never_touches_occupancy(self, small_weights):
        rng = np.random.default_rng(10)
        z_s = ad.Tensor(rng.standard_normal(128), dtype=np.float64)
        pts = ad.Tensor(rng.uniform(-1, 1, (9, 3)), dtype=np.float64)
        dirs = ad.Tensor(rng.standard_normal((9, 3)), dtype=np.float64)

        za = ad.Tensor(rng.standard_normal(128), dtype=np.float64)
        zb = ad.Tensor(rng.standard_normal(128), dtype=np.float64)
        rgb_a, o_a = self.run_color(small_weights, z_s, za, pts, dirs)
        rgb_b, o_b = self.run_color(small_weights, z_s, zb, pts, dirs)
        assert np.array_equal(o_a.data, o_b.data)  # bit-identical occupancies
        assert np.abs(rgb_a.data - rgb_b.data).max() > 0  # colors differ


def test_forward_passes_are_deterministic(small_weights):
    z_s, z_t = embeddings(11)
    a = nets.decompose(small_weights, z_s, z_t)[0].data
    b = nets.decompose(small_weights, z_s, z_t)[0].data
    assert np.array_equal(a, b)


def test_parameter_layout_matches_declared_dims(small_weights):
    assert small_weights["occ.out.w"].shape == (128, 257)
    assert small_weights["col.block0.l0.w"].shape == (510, 510)
    assert small_weights["col.block0.l1.w"].shape == (510, 256)
    assert small_weights["col.block2.l2.w"].shape == (128, 64)
    assert small_weights["col.out.w"].shape == (64, 3)
    assert small_weights["tf_s.0.mlp.w1"].shape == (128, 1024)


def test_probe_forward_matches_tape_occupancy(small_weights):
    from partfields.nets import occupancy_probe_np

    rng = np.random.default_rng(21)
    z = rng.standard_normal(128)
    x = rng.uniform(-1, 1, (40, 3))
    o_tape, _ = nets.occupancy(small_weights, ad.Tensor(z), ad.Tensor(x))
    o_probe = occupancy_probe_np(small_weights, z, x)
    np.testing.assert_allclose(o_probe, o_tape.data[:, 0], rtol=1e-9, atol=1e-12)
