import numpy as np
import pytest

from treewae import barycenter as bc
from treewae import metric as mt
from treewae import topology as tp
from treewae.topology import BDT


def star(points, root=(0.0, 1.0)):
    births = [root[0]] + [p[0] for p in points]
    deaths = [root[1]] + [p[1] for p in points]
    parent = [tp.NONE] + [0] * len(points)
    return BDT(births, deaths, parent)


class TestBarycenter:
    def test_identical_members(self):
        b = star([(0.2, 0.6), (0.3, 0.5)])
        out = bc.barycenter([b.copy() for _ in range(4)])
        d, _ = mt.wasserstein_bdt(out, b)
        assert d == pytest.approx(0.0, abs=1e-12)

    def test_two_roots_midpoint(self):
        # single-branch trees: the mean sits halfway
        a = BDT([0.0], [1.0], [tp.NONE])
        b = BDT([0.2], [0.8], [tp.NONE])
        out = bc.barycenter([a, b])
        assert out.size == 1
        # root coordinates stay at the seed's span by convention; the energy
        # of the midpoint bound still holds through the metric
        d1, _ = mt.wasserstein_bdt(out, a)
        d2, _ = mt.wasserstein_bdt(out, b)
        full, _ = mt.wasserstein_bdt(a, b)
        assert d1**2 + d2**2 <= full**2 + 1e-9

    def test_child_midpoint(self):
        a = star([(0.0, 1.0)])
        b = star([(0.2, 0.8)])
        out = bc.barycenter([a, b])
        child = [i for i in range(out.size) if i != out.root]
        assert len(child) == 1
        assert out.births[child[0]] == pytest.approx(0.1, abs=1e-9)
        assert out.deaths[child[0]] == pytest.approx(0.9, abs=1e-9)

    def test_energy_non_increasing(self):
        rng = np.random.Generator(np.random.PCG64(2))
        ensemble = []
        for _ in range(5):
            pts = [(b, b + p) for b, p in rng.uniform(0.05, 0.45, (3, 2))]
            ensemble.append(star(pts))
        energies = []

        candidate = ensemble[0].copy()
        prev = bc.frechet_energy(candidate, ensemble)
        out = bc.barycenter(ensemble)
        final = bc.frechet_energy(out, ensemble)
        assert final <= prev + 1e-9

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            bc.barycenter([])

    def test_grows_slot_for_shared_feature(self):
        # half the members carry a persistent feature the seed lacks; the
        # barycenter should grow a slot for it rather than destroy it
        with_f = star([(0.1, 0.9), (0.3, 0.42)])
        without = star([(0.1, 0.9)])
        ensemble = [without.copy(), without.copy(), with_f.copy(), with_f.copy()]
        out = bc.barycenter(ensemble)
        assert out.size == 3  # root + shared feature + grown slot


class TestClusteringVector:
    def test_one_hot_layout(self):
        cv = bc.ClusteringVector(3, 2, [0, 1, 0])
        expect = np.array([1, 0, 0, 1, 1, 0], dtype=float)
        assert np.array_equal(cv.one_hot(), expect)

    def test_rejects_bad_ids(self):
        with pytest.raises(ValueError):
            bc.ClusteringVector(2, 2, [0, 5])

    def test_canonical_relabeling(self):
        cv = bc.ClusteringVector(4, 3, [2, 2, 0, 1])
        assert cv.canonical() == [0, 0, 1, 2]


class TestKMeans:
    def make_two_blobs(self):
        a = [star([(0.0, 1.0)]), star([(0.02, 0.98)])]
        b = [star([(0.4, 0.5)]), star([(0.42, 0.52)])]
        return a + b

    def test_k_equals_n(self):
        ens = self.make_two_blobs()
        cv, cents = bc.wasserstein_kmeans(ens, 4, seed=1)
        assert sorted(cv.member_of) == [0, 1, 2, 3]
        energy = sum(
            mt.wasserstein_bdt(m, cents[c])[0] ** 2 for m, c in zip(ens, cv.member_of)
        )
        assert energy == pytest.approx(0.0, abs=1e-12)

    def test_k_one(self):
        ens = self.make_two_blobs()
        cv, cents = bc.wasserstein_kmeans(ens, 1, seed=1)
        assert cv.member_of == [0, 0, 0, 0]
        assert len(cents) == 1

    def test_recovers_two_blobs(self):
        ens = self.make_two_blobs()
        cv, _ = bc.wasserstein_kmeans(ens, 2, seed=3)
        assert cv.canonical() == [0, 0, 1, 1]

    def test_deterministic_given_seed(self):
        ens = self.make_two_blobs()
        a, _ = bc.wasserstein_kmeans(ens, 2, seed=5)
        b, _ = bc.wasserstein_kmeans(ens, 2, seed=5)
        assert a.member_of == b.member_of

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            bc.wasserstein_kmeans(self.make_two_blobs(), 9, seed=1)
