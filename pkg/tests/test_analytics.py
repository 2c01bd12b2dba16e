import numpy as np
import pytest

from treewae import analytics as an
from treewae import metric as mt
from treewae import topology as tp
from treewae import wae
from treewae.metric import DistanceMatrix
from treewae.topology import BDT
from treewae.wae import TrainConfig


def star(points, scale=(0.0, 1.0)):
    births = [0.0] + [p[0] for p in points]
    deaths = [1.0] + [p[1] for p in points]
    return BDT(births, deaths, [tp.NONE] + [0] * len(points),
               normalized=True, scale=scale)


@pytest.fixture(scope="module")
def small_model():
    rng = np.random.Generator(np.random.PCG64(1))
    ens = []
    for _ in range(5):
        pts = [(b, b + p) for b, p in rng.uniform(0.05, 0.4, (3, 2))]
        ens.append(star(pts))
    cfg = TrainConfig(d_latent=2, d_out=4, seed=3, max_epochs=30,
                      stop_rel_decrease=0.0)
    model = wae.train(ens, cfg)
    return model, ens


class TestCompression:
    def test_round_trip_equals_reconstruction(self, small_model):
        model, ens = small_model
        c = an.compress(model, ens)
        out = an.decompress(c)
        ref = an.reconstructions(model, ens)
        for a, b in zip(out, ref):
            assert np.array_equal(a.births, b.births)
            assert np.array_equal(a.deaths, b.deaths)

    def test_payload_has_no_encoder(self, small_model):
        model, ens = small_model
        c = an.compress(model, ens)
        # payload holds exactly one origin and one basis, nothing per-layer
        assert c.coeffs.shape == (5, model.network.layers[-1].dim)
        assert c.basis_vectors.shape[0] == 2 * c.origin.size

    def test_member_count_preserved(self, small_model):
        model, ens = small_model
        assert len(an.decompress(an.compress(model, ens))) == len(ens)

    def test_zero_coeffs_give_projected_origin(self, small_model):
        model, ens = small_model
        c = an.compress(model, ens)
        c.coeffs = np.zeros_like(c.coeffs)
        outs = an.decompress(c)
        base = wae.gamma(c.origin)
        base.scale = tuple(model.member_scales[0])
        expect = tp.denormalize(base)
        assert np.allclose(outs[0].births, expect.births)

    def test_outputs_valid(self, small_model):
        model, ens = small_model
        for t in an.decompress(an.compress(model, ens)):
            assert np.all(t.births <= t.deaths + 1e-12)

    def test_file_round_trip(self, small_model, tmp_path):
        model, ens = small_model
        c = an.compress(model, ens)
        path = tmp_path / "payload.json"
        an.save_compressed(c, path)
        back = an.load_compressed(path)
        assert np.array_equal(back.coeffs, c.coeffs)
        assert np.array_equal(back.basis_vectors, c.basis_vectors)
        assert back.member_names == c.member_names

    def test_compression_factor(self):
        assert an.compression_factor(1000, 100) == 10
        assert an.compression_factor(5, 5) == 1
        with pytest.raises(ValueError):
            an.compression_factor(0, 5)

    def test_factor_above_one_on_ground_truth_ensemble(self):
        from treewae import fields as fl

        fields, _, _ = fl.generate_stability_ensemble(0.0, 1)
        ens = []
        for sf in fields:
            tree = tp.compute_merge_tree(sf, "split")
            bdt = tp.simplify(tp.branch_decomposition(tree), 0.0025)
            ens.append(tp.normalize(tp.merge_saddles(bdt, 1.0)))
        cfg = TrainConfig(d_latent=2, d_out=3, seed=1, max_epochs=20,
                          stop_rel_decrease=0.0)
        model = wae.train(ens, cfg)
        payload = an.compress(model, ens)
        original = sum(an.bdt_binary_size(b) for b in ens)
        factor = an.compression_factor(original, an.compressed_binary_size(payload))
        assert factor > 1.0


class TestLayout:
    def test_identical_members_coincide(self):
        b = star([(0.2, 0.7)])
        cfg = TrainConfig(d_latent=2, d_out=4, seed=1, max_epochs=5,
                          stop_rel_decrease=0.0)
        model = wae.train([b.copy(), b.copy()], cfg)
        pts = an.layout2d(model)
        assert np.allclose(pts[0], pts[1], atol=1e-9)

    def test_point_count(self, small_model):
        model, ens = small_model
        assert an.layout2d(model).shape == (5, 2)

    def test_rejects_non_2d_latent(self, small_model):
        model, _ = small_model
        model2 = wae.TrainedModel(model.network, TrainConfig(d_latent=3),
                                  model.energy_trace, model.latent_coords,
                                  model.last_coeffs, model.member_scales,
                                  model.member_names)
        with pytest.raises(ValueError):
            an.layout2d(model2)


class TestPcvFli:
    def test_pcv_perfect_correlation(self, small_model):
        model, ens = small_model
        pts = an.pcv(model, ens, top_k=3)
        assert all(-1 - 1e-9 <= p.rho1 <= 1 + 1e-9 for p in pts)
        assert all(-1 - 1e-9 <= p.rho2 <= 1 + 1e-9 for p in pts)

    def test_pcv_flags_constant_persistence(self, small_model):
        model, ens = small_model
        # the root branch is (0,1) in every member: zero variance
        pts = an.pcv(model, ens, top_k=1)
        assert pts[0].degenerate
        assert pts[0].rho1 == 0.0 and pts[0].rho2 == 0.0

    def test_fli_nonnegative(self, small_model):
        model, ens = small_model
        report = an.fli(model, ens)
        assert all(f >= 0 for f in report.fli)

    def test_pcv_fli_deterministic(self, small_model):
        model, ens = small_model
        a1 = an.pcv(model, ens, top_k=3)
        a2 = an.pcv(model, ens, top_k=3)
        assert [(p.branch, p.rho1, p.rho2) for p in a1] == \
               [(p.branch, p.rho1, p.rho2) for p in a2]
        f1, f2 = an.fli(model, ens), an.fli(model, ens)
        assert f1.fli == f2.fli

    def test_fli_identity_network(self):
        b = star([(0.2, 0.7), (0.4, 0.6)])
        from treewae.geometry import BDTBasis
        from treewae.wae import Layer, Network, SubLayer

        eye = np.eye(2 * b.size)

        def sub(kind):
            origin = b.copy()
            return SubLayer(origin, BDTBasis(origin, eye.copy(), checked=False), kind)

        layer1 = Layer(sub("input"), sub("output"), 2 * b.size)
        # identity network: chain assignments keep every branch, ratio 1
        net = Network([layer1], 1, 0)
        net2 = Network.__new__(Network)
        net2.layers, net2.n_e, net2.n_d = [layer1, layer1], 1, 1
        model = wae.TrainedModel(net2, TrainConfig(d_latent=2), [(0, 0, 0)],
                                 np.zeros((1, 2)), np.zeros((1, 2)),
                                 [(0.0, 1.0)], ["m"])
        report = an.fli(model, [b], reference=b)
        assert np.allclose(report.fli, 1.0)


class TestTracking:
    def test_constant_sequence_constant_chains(self):
        b = star([(0.1, 0.9), (0.3, 0.6)])
        chains = an.track_features([b.copy() for _ in range(4)], top_k=2)
        for chain in chains:
            assert len(chain) == 4
            branches = {br for _, br in chain}
            assert len(branches) == 1

    def test_chain_terminates_on_diagonal(self):
        a = star([(0.1, 0.9), (0.45, 0.55)])
        b = star([(0.1, 0.9)])  # second feature vanished
        chains = an.track_features([a, b], top_k=3)
        lengths = sorted(len(c) for c in chains)
        assert lengths == [1, 2, 2]

    def test_chain_length_bounded(self):
        rng = np.random.Generator(np.random.PCG64(7))
        seq = [star([(b, b + p) for b, p in rng.uniform(0.05, 0.4, (2, 2))])
               for _ in range(5)]
        for chain in an.track_features(seq, top_k=2):
            assert len(chain) <= 5


class TestScores:
    def test_identical_partitions(self):
        assert an.nmi([0, 0, 1, 1], [0, 0, 1, 1]) == pytest.approx(1.0)
        assert an.ari([0, 0, 1, 1], [0, 0, 1, 1]) == pytest.approx(1.0)

    def test_label_permutation_invariance(self):
        assert an.nmi([0, 0, 1, 1], [1, 1, 0, 0]) == pytest.approx(1.0)
        assert an.ari([0, 0, 1, 1], [1, 1, 0, 0]) == pytest.approx(1.0)

    def test_independent_partitions(self):
        value = an.ari([0, 0, 1, 1], [0, 1, 0, 1])
        assert value == pytest.approx(-0.5, abs=1e-12)
        assert value <= 1e-9

    def test_against_reference_implementation(self):
        from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

        rng = np.random.Generator(np.random.PCG64(11))
        for _ in range(20):
            n = int(rng.integers(4, 12))
            a = rng.integers(0, 3, n).tolist()
            b = rng.integers(0, 3, n).tolist()
            assert an.nmi(a, b) == pytest.approx(
                normalized_mutual_info_score(a, b), abs=1e-9)
            assert an.ari(a, b) == pytest.approx(
                adjusted_rand_score(a, b), abs=1e-9)

    def test_sim_identical(self):
        d = DistanceMatrix(3, np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0.]]))
        assert an.sim(d, d) == 1.0

    def test_sim_zero_layout(self):
        d = DistanceMatrix(2, np.array([[0, 1], [1, 0.]]))
        z = DistanceMatrix(2, np.zeros((2, 2)))
        assert an.sim(d, z) == 0.0

    def test_sim_range(self):
        rng = np.random.Generator(np.random.PCG64(13))
        m = rng.uniform(0, 2, (4, 4))
        m = (m + m.T) / 2
        np.fill_diagonal(m, 0)
        d1 = DistanceMatrix(4, m)
        m2 = rng.uniform(0, 2, (4, 4))
        m2 = (m2 + m2.T) / 2
        np.fill_diagonal(m2, 0)
        d2 = DistanceMatrix(4, m2)
        assert 0.0 <= an.sim(d1, d2) <= 1.0

    def test_sim_both_zero(self):
        z = DistanceMatrix(2, np.zeros((2, 2)))
        assert an.sim(z, z) == 1.0

    def test_scale_aligned_sim_scale_invariant(self):
        rng = np.random.Generator(np.random.PCG64(17))
        pts = rng.normal(size=(5, 2))
        dm = an.layout_distance_matrix(pts)
        assert an.scale_aligned_sim(dm, 7.3 * pts) == pytest.approx(1.0, abs=1e-9)
