import math

import numpy as np
import pytest

from oracles import brute_signed_rank_sums, kernel_loop
from submodcrf import (KernelMixture, build_stereo_model, energy_eval, kernel_value,
                       signed_rank_sums, weighted_sum)
from submodcrf.densekernel import (BackendUnavailable, rank_order, read_image, stereo_features,
                                   stereo_unaries, to_gray, write_pgm, write_ppm)
from submodcrf.model import ModelError


def mixture(*pairs):
    return KernelMixture(tuple(w for w, _ in pairs), tuple(np.asarray(f, float) for _, f in pairs))


class TestKernelValue:
    def test_identical_features(self):
        assert kernel_value(mixture((1.0, [[0.3, 1.0], [0.3, 1.0]])), 0, 1) == 1.0

    def test_closed_form(self):
        km = mixture((1.0, [[0.0, 0.0], [1.0, 1.0]]))
        assert kernel_value(km, 0, 1) == pytest.approx(math.exp(-1), rel=1e-15)
        assert kernel_value(km, 0, 1) == pytest.approx(0.367879, abs=1e-6)

    def test_mixture_limits(self):
        km = mixture((1.0, [[0.0], [100.0]]), (2.0, [[5.0], [5.0]]))
        assert kernel_value(km, 0, 1) == pytest.approx(2.0)

    def test_self_interaction_rejected(self):
        with pytest.raises(ModelError):
            kernel_value(mixture((1.0, [[0.0], [1.0]])), 1, 1)

    def test_matrix_matches_loop(self, rng):
        f1, f2 = rng.normal(size=(20, 3)), rng.normal(size=(20, 2))
        km = mixture((0.7, f1), (1.3, f2))
        K = kernel_loop([km.features[0], km.features[1]], km.weights)
        assert np.allclose(km.matrix, K, rtol=1e-14, atol=0)
        assert np.array_equal(km.matrix, km.matrix.T)
        assert np.all(np.diag(km.matrix) == 0)
        assert kernel_value(km, 3, 7) == pytest.approx(K[3, 7], rel=1e-14)

    @pytest.mark.parametrize("weights,features", [
        ((), ()),
        ((-1.0,), (np.zeros((2, 1)),)),
        ((1.0, 1.0), (np.zeros((2, 1)), np.zeros((3, 1)))),
        ((1.0,), (np.array([[0.0], [np.inf]]),)),
        ((1.0,), (np.zeros((2, 0)),)),
    ])
    def test_invalid_mixtures(self, weights, features):
        with pytest.raises(ModelError):
            KernelMixture(weights, features)


class TestWeightedSum:
    def test_zero_vector(self, rng):
        km = mixture((1.0, rng.normal(size=(6, 2))))
        assert np.all(weighted_sum(km, np.zeros(6)) == 0)

    def test_two_points(self):
        km = mixture((1.0, [[0.0], [1.0]]))
        k = math.exp(-0.5)
        assert np.allclose(weighted_sum(km, [2.0, 3.0]), [3 * k, 2 * k])

    def test_against_loop(self, rng):
        f = rng.normal(size=(50, 5))
        km = mixture((1.0, f))
        v = rng.normal(size=50)
        assert np.allclose(weighted_sum(km, v), kernel_loop([km.features[0]], (1.0,)) @ v,
                           rtol=0, atol=1e-12)

    @pytest.mark.parametrize("backend", ["lattice", "gpu"])
    def test_other_backends(self, backend):
        with pytest.raises(BackendUnavailable):
            weighted_sum(mixture((1.0, [[0.0], [1.0]])), [1.0, 1.0], backend=backend)


class TestSignedRankSums:
    def test_constant_pair(self):
        km = mixture((1.0, [[0.0], [1.0]]))
        k = math.exp(-0.5)
        assert list(signed_rank_sums(km, [0.3, 0.3])) == [k, -k]

    def test_rank_order_tie_break(self):
        assert list(rank_order([0.2, 0.5, 0.2, 0.5])) == [1, 3, 0, 2]

    def test_increasing_column(self, rng):
        km = mixture((1.0, rng.normal(size=(8, 2))))
        K = km.matrix
        col = np.arange(8.0)               # variable 7 ranks first
        out = signed_rank_sums(km, col)
        for a in range(8):
            expected = K[a, :a].sum() - K[a, a + 1:].sum()
            assert out[a] == pytest.approx(expected, abs=1e-14)

    def test_against_double_loop(self, rng):
        km = mixture((1.0, rng.normal(size=(30, 3))), (0.5, rng.normal(size=(30, 2))))
        for col in (rng.uniform(size=30), np.round(rng.uniform(size=30), 1), np.zeros(30)):
            assert np.allclose(signed_rank_sums(km, col), brute_signed_rank_sums(km.matrix, col),
                               atol=1e-12, rtol=0)

    def test_antisymmetric_total(self, rng):
        km = mixture((1.0, rng.normal(size=(25, 2))))
        assert abs(signed_rank_sums(km, rng.uniform(size=25)).sum()) <= 1e-12


class TestStereo:
    def test_identical_images(self, rng):
        img = rng.integers(0, 256, size=(6, 7)).astype(float)
        phi = stereo_unaries(img, img, 4)
        assert phi.shape == (42, 4) and np.all(phi[:, 0] == 0)

    def test_shifted_pair(self, rng):
        base = rng.uniform(0, 255, size=(10, 23))
        left, right = base[:, :20], base[:, 3:23]
        phi = stereo_unaries(left, right, 5).reshape(10, 20, 5)
        assert np.all(phi[:, 4:].argmin(axis=2) == 3)

    def test_two_pixel_instance_by_hand(self):
        left = np.array([[10.0, 50.0]])
        right = np.array([[50.0, 90.0]])
        inst = build_stereo_model(left, right, 2, theta_spatial=3.0, theta_color=10.0,
                                  kernel_weights=(1.0, 1.0))
        # column x - d is clamped at 0
        assert inst.unaries.tolist() == [[40.0, 40.0], [40.0, 0.0]]
        k = math.exp(-0.5 * (1 / 9 + 3 * 16.0)) + math.exp(-0.5 / 9)
        assert inst.kernel.matrix[0, 1] == pytest.approx(k, rel=1e-14)
        assert energy_eval(inst, [0, 1]) == pytest.approx(40 + k)
        assert energy_eval(inst, [1, 1]) == pytest.approx(40.0)

    def test_features_scaled(self):
        rgb = np.zeros((2, 3, 3))
        rgb[1, 2] = [10, 20, 30]
        km = stereo_features(rgb, theta_spatial=2.0, theta_color=10.0, kernel_weights=(1.0,))
        assert len(km.features) == 1
        assert km.features[0][5].tolist() == [1.0, 0.5, 1.0, 2.0, 3.0]

    def test_grayscale_weights(self):
        assert to_gray(np.array([[[100.0, 0, 0]]]))[0, 0] == pytest.approx(29.9)
        assert to_gray(np.array([[[0, 100.0, 0]]]))[0, 0] == pytest.approx(58.7)
        assert to_gray(np.array([[[0, 0, 100.0]]]))[0, 0] == pytest.approx(11.4)

    def test_errors(self):
        with pytest.raises(ModelError):
            stereo_unaries(np.zeros((2, 3)), np.zeros((3, 2)), 2)
        with pytest.raises(ModelError):
            stereo_unaries(np.zeros((2, 3)), np.zeros((2, 3)), 0)
        with pytest.raises(ModelError):
            stereo_features(np.zeros((2, 2)), 1.0, 1.0, kernel_weights=(1.0, 1.0, 1.0))


class TestImages:
    def test_pgm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(5, 9))
        write_pgm(tmp_path / "a.pgm", img)
        back = read_image(tmp_path / "a.pgm")
        assert back.dtype == np.uint8 and np.array_equal(back, img)
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5")

    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(4, 6, 3))
        write_ppm(tmp_path / "a.ppm", img)
        assert np.array_equal(read_image(tmp_path / "a.ppm"), img)
        assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")

    def test_not_an_image(self, tmp_path):
        path = tmp_path / "junk.pgm"
        path.write_bytes(b"hello")
        with pytest.raises((OSError, ModelError)):
            read_image(path)
