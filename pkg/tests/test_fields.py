import numpy as np
import pytest

from treewae import fields as fl
from treewae import metric as mt
from treewae import topology as tp


class TestFieldIO:
    def test_round_trip(self, tmp_path):
        sf = fl.ScalarField((2, 2, 1), [0.0, 1.0, 2.0, 3.0])
        path = tmp_path / "f.sfld"
        fl.save_field(sf, path)
        back = fl.load_field(path)
        assert back.dims == (2, 2, 1)
        assert np.array_equal(back.values, [0, 1, 2, 3])

    def test_value_count_mismatch(self, tmp_path):
        path = tmp_path / "bad.sfld"
        path.write_bytes(b"SFLD1 2 2 1\n" + b"\x00" * 24)  # 3 values, 4 declared
        with pytest.raises(fl.FieldFormatError, match="value count mismatch"):
            fl.load_field(path)

    def test_non_finite_value(self, tmp_path):
        import struct

        path = tmp_path / "nan.sfld"
        payload = struct.pack("<4d", 0.0, float("nan"), 2.0, 3.0)
        path.write_bytes(b"SFLD1 2 2 1\n" + payload)
        with pytest.raises(fl.FieldFormatError, match="non-finite value"):
            fl.load_field(path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "hdr.sfld"
        path.write_bytes(b"WRONG 2 2\n")
        with pytest.raises(fl.FieldFormatError, match="byte 0"):
            fl.load_field(path)


class TestGaussianMixture:
    def test_single_gaussian_peak_at_center(self):
        spec = fl.GaussianSpec([(0.5, 0.5)], [1.0], [0.2])
        sf = fl.generate_gaussian_mixture(spec, (21, 21, 1))
        peak = int(np.argmax(sf.values))
        y, x = divmod(peak, 21)
        assert (x, y) == (10, 10)

    def test_two_separated_gaussians_two_leaves(self):
        spec = fl.GaussianSpec([(0.25, 0.5), (0.75, 0.5)], [1.0, 0.5], [0.08, 0.08])
        sf = fl.generate_gaussian_mixture(spec, (41, 41, 1))
        tree = tp.compute_merge_tree(sf, "split")
        diag = tp.simplify(tp.persistence_pairs(tree), 0.0)
        salient = [p for p in diag.points if p.persistence > 0.01]
        assert len(salient) == 2

    def test_zero_amplitude_constant_field(self):
        spec = fl.GaussianSpec([(0.5, 0.5)], [0.0], [0.2])
        sf = fl.generate_gaussian_mixture(spec, (8, 8, 1))
        assert np.allclose(sf.values, 0.0)

    def test_empty_spec_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            fl.generate_gaussian_mixture(fl.GaussianSpec([], [], []), (8, 8, 1))

    def test_mismatched_spec_rejected(self):
        with pytest.raises(ValueError):
            fl.GaussianSpec([(0.5, 0.5)], [1.0, 2.0], [0.1])


class TestUniformNoise:
    def test_zero_eps_identity(self):
        sf = fl.ScalarField((3, 3, 1), np.arange(9, dtype=float))
        out = fl.add_uniform_noise(sf, 0.0, 7)
        assert np.array_equal(out.values, sf.values)

    def test_amplitude_bound(self):
        sf = fl.ScalarField((10, 10, 1), np.linspace(0, 2, 100))
        out = fl.add_uniform_noise(sf, 0.1, 7)
        assert np.abs(out.values - sf.values).max() <= 0.05 * 2.0 + 1e-15

    def test_seed_reproducible(self):
        sf = fl.ScalarField((10, 10, 1), np.linspace(0, 1, 100))
        a = fl.add_uniform_noise(sf, 0.3, 11)
        b = fl.add_uniform_noise(sf, 0.3, 11)
        assert np.array_equal(a.values, b.values)

    def test_preserves_dims(self):
        sf = fl.ScalarField((4, 5, 1), np.zeros(20))
        out = fl.add_uniform_noise(sf, 0.0, 1)
        assert out.dims == sf.dims and out.values.size == 20


@pytest.fixture(scope="module")
def ensemble():
    return fl.generate_stability_ensemble(0.0, 1)


class TestStabilityEnsemble:
    def test_shape_and_labels(self, ensemble):
        fields, labels, target = ensemble
        assert len(fields) == 16
        assert labels == [0] * 4 + [1] * 4 + [2] * 4 + [3] * 4
        assert target.shape == (16, 16)

    def test_analytic_outer_square(self, ensemble):
        _, _, target = ensemble
        i00, i10, i11, i01 = 0, 5, 10, 15  # corner members f_(0,0), f_(1,0), f_(1,1), f_(0,1)
        assert target[i00, i10] == pytest.approx(1.0, abs=1e-12)
        assert target[i00, i01] == pytest.approx(1.0, abs=1e-12)
        assert target[i10, i11] == pytest.approx(1.0, abs=1e-12)
        assert target[i01, i11] == pytest.approx(1.0, abs=1e-12)
        assert target[i00, i11] == pytest.approx(np.sqrt(2), abs=1e-12)
        assert target[i10, i01] == pytest.approx(np.sqrt(2), abs=1e-12)

    def test_analytic_inner_square_sides(self, ensemble):
        _, _, target = ensemble
        assert target[0, 1] == pytest.approx(0.15, abs=1e-12)
        assert target[1, 2] == pytest.approx(0.15, abs=1e-12)
        assert target[2, 3] == pytest.approx(0.15, abs=1e-12)
        assert target[3, 0] == pytest.approx(0.15, abs=1e-12)

    def test_realized_distances_match_analytic(self, ensemble):
        fields, _, target = ensemble
        diagrams = []
        for sf in fields:
            tree = tp.compute_merge_tree(sf, "split")
            diagrams.append(tp.simplify(tp.persistence_pairs(tree), 0.0025))
        for i in range(16):
            for j in range(i + 1, 16):
                d, _ = mt.wasserstein_diagrams(diagrams[i], diagrams[j])
                assert d == pytest.approx(target[i, j], abs=2e-3), (i, j)

    def test_same_seed_bit_identical(self):
        a, _, _ = fl.generate_stability_ensemble(0.05, 3)
        b, _, _ = fl.generate_stability_ensemble(0.05, 3)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.values, fb.values)

    def test_noise_changes_fields(self):
        a, _, _ = fl.generate_stability_ensemble(0.0, 3)
        b, _, _ = fl.generate_stability_ensemble(0.1, 3)
        assert not np.array_equal(a[0].values, b[0].values)
