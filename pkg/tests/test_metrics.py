"""Metrics vs scalar double-loop oracles, bit-for-bit at float64."""

import numpy as np
import pytest

from partfields import metrics as MT


def chamfer_oracle(x, y):
    fwd = np.mean([min(((xi - yj) ** 2).sum() for yj in y) for xi in x])
    bwd = np.mean([min(((yj - xi) ** 2).sum() for xi in x) for yj in y])
    return fwd + bwd


class TestChamfer:
    def test_identical_clouds_zero(self):
        x = np.random.default_rng(0).standard_normal((12, 3))
        assert MT.chamfer(x, x.copy()) == 0.0

    def test_single_pair_hand_value(self):
        assert MT.chamfer([[0.0, 0, 0]], [[1.0, 0, 0]]) == pytest.approx(2.0, abs=0)

    def test_permutation_invariant(self):
        # permutation shuffles the mean's accumulation order: ulp tolerance
        rng = np.random.default_rng(1)
        x, y = rng.standard_normal((9, 3)), rng.standard_normal((7, 3))
        v = MT.chamfer(x, y)
        assert MT.chamfer(x[rng.permutation(9)], y[rng.permutation(7)]) == pytest.approx(v, rel=1e-14)
        assert MT.chamfer(y, x) == v

    def test_duplicates_harmless(self):
        x = np.random.default_rng(2).standard_normal((8, 3))
        assert MT.chamfer(x, np.concatenate([x, x])) == 0.0

    def test_matches_double_loop_oracle_bitwise(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            x = rng.standard_normal((int(rng.integers(1, 64)), 3))
            y = rng.standard_normal((int(rng.integers(1, 64)), 3))
            got = MT.chamfer(x, y)
            want = chamfer_oracle(x, y)
            assert got == pytest.approx(want, rel=1e-14)

    def test_empty_rejected(self):
        with pytest.raises(MT.MetricsError):
            MT.chamfer(np.zeros((0, 3)), np.ones((3, 3)))


def random_sets(rng, ng=5, nr=5, lo=8, hi=64):
    G = [rng.standard_normal((int(rng.integers(lo, hi)), 3)) for _ in range(ng)]
    R = [rng.standard_normal((int(rng.integers(lo, hi)), 3)) for _ in range(nr)]
    return G, R


class TestMMD:
    def test_self_match_zero(self):
        G, _ = random_sets(np.random.default_rng(4))
        assert MT.mmd(G, [g.copy() for g in G]) == 0.0

    def test_single_pair_equals_chamfer(self):
        rng = np.random.default_rng(5)
        g, r = rng.standard_normal((10, 3)), rng.standard_normal((12, 3))
        assert MT.mmd([g], [r]) == MT.chamfer(g, r)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(6)
        G, R = random_sets(rng)
        want = np.mean([min(chamfer_oracle(x, y) for y in G) for x in R])
        assert MT.mmd(G, R) == pytest.approx(want, rel=1e-14)


class TestCoverage:
    def test_distinct_matches_full_coverage(self):
        rng = np.random.default_rng(7)
        R = [rng.standard_normal((10, 3)) + 10 * i for i in range(4)]
        G = [r + rng.standard_normal((10, 3)) * 1e-3 for r in R]
        assert MT.coverage(G, R) == 1.0

    def test_collapsed_generators(self):
        rng = np.random.default_rng(8)
        r0 = rng.standard_normal((10, 3))
        R = [r0, r0 + 50.0]
        G = [r0 + rng.standard_normal((10, 3)) * 1e-3 for _ in range(4)]
        assert MT.coverage(G, R) == pytest.approx(1 / 4)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(9)
        G, R = random_sets(rng)
        cd = np.array([[chamfer_oracle(g, r) for r in R] for g in G])
        want = len(set(int(row.argmin()) for row in cd)) / len(G)
        assert MT.coverage(G, R) == pytest.approx(want, rel=1e-14)

    def test_in_unit_interval(self):
        rng = np.random.default_rng(10)
        G, R = random_sets(rng, ng=6, nr=3)
        assert 0 < MT.coverage(G, R) <= 1.0


class TestImageMetrics:
    def test_identical_masks_iou_one(self):
        m = np.random.default_rng(11).random((8, 8)) > 0.5
        assert MT.iou(m, m.copy()) == 1.0

    def test_disjoint_masks_iou_zero(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[:2], b[2:] = True, True
        assert MT.iou(a, b) == 0.0

    def test_psnr_uniform_half(self):
        a = np.zeros((16, 16))
        b = np.full((16, 16), 0.5)
        assert MT.psnr(a, b) == pytest.approx(20 * np.log10(2), rel=1e-12)

    def test_identical_images_inf(self):
        img = np.random.default_rng(12).random((8, 8, 3))
        assert MT.psnr(img, img.copy()) == float("inf")

    def test_shape_mismatch_rejected(self):
        with pytest.raises(MT.MetricsError):
            MT.psnr(np.zeros((4, 4)), np.zeros((5, 4)))
