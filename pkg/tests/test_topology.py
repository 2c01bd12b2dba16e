import numpy as np
import pytest

from treewae.fields import ScalarField
from treewae import topology as tp


def line_field(values):
    return ScalarField((len(values), 2, 1), np.array(list(values) * 2, dtype=float))


def field_1d(values):
    # nx >= 2 required; embed a 1D profile as a 2-row strip with identical rows
    return line_field(values)


class TestComputeMergeTree:
    def test_split_tree_two_peaks(self):
        # hand union-find sweep on [0,3,1,2,0]: leaves at 3 and 2, saddle 1, root 0
        sf = ScalarField((5, 2, 1), np.array([0, 3, 1, 2, 0, 0, 3, 1, 2, 0], float))
        tree = tp.compute_merge_tree(sf, "split")
        kinds = sorted(n.kind for n in tree.nodes)
        assert kinds == ["leaf", "leaf", "root", "saddle"]
        leaf_vals = sorted(n.scalar for n in tree.nodes if n.kind == "leaf")
        assert leaf_vals == [2.0, 3.0]
        assert [n.scalar for n in tree.nodes if n.kind == "saddle"] == [1.0]
        assert [n.scalar for n in tree.nodes if n.kind == "root"] == [0.0]

    def test_monotone_field_single_leaf(self):
        tree = tp.compute_merge_tree(field_1d([0, 1, 2, 3]), "split")
        assert sum(n.kind == "leaf" for n in tree.nodes) == 1
        assert sum(n.kind == "saddle" for n in tree.nodes) == 0

    def test_constant_field_tie_breaking(self):
        tree = tp.compute_merge_tree(field_1d([1.0, 1.0, 1.0]), "split")
        leaves = [n for n in tree.nodes if n.kind == "leaf"]
        assert len(leaves) == 1
        assert leaves[0].vertex == 0  # lowest index wins under the total order

    def test_join_tree_mirrors_split(self):
        sf = field_1d([3, 0, 2, 1, 3])
        tree = tp.compute_merge_tree(sf, "join")
        leaf_vals = sorted(n.scalar for n in tree.nodes if n.kind == "leaf")
        assert leaf_vals == [0.0, 1.0]

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            tp.compute_merge_tree(field_1d([0, 1]), "contour")

    def test_3d_six_connectivity(self):
        # two maxima in separate z-slabs of a 3x3x3 volume
        values = np.zeros(27)
        values[0] = 2.0   # (0,0,0)
        values[26] = 3.0  # (2,2,2)
        sf = ScalarField((3, 3, 3), values)
        tree = tp.compute_merge_tree(sf, "split")
        assert sum(n.kind == "leaf" for n in tree.nodes) == 2
        diag = tp.persistence_pairs(tree)
        assert sorted(p.death for p in diag.points) == [2.0, 3.0]


class TestPersistencePairs:
    def test_elder_rule_pairing(self):
        tree = tp.compute_merge_tree(field_1d([0, 3, 1, 2, 0]), "split")
        diag = tp.persistence_pairs(tree)
        pts = sorted((p.birth, p.death) for p in diag.points)
        assert pts == [(0.0, 3.0), (1.0, 2.0)]

    def test_single_leaf_full_range(self):
        tree = tp.compute_merge_tree(field_1d([0, 1, 2, 3]), "split")
        diag = tp.persistence_pairs(tree)
        assert [(p.birth, p.death) for p in diag.points] == [(0.0, 3.0)]

    def test_equal_maxima_survivor_by_index(self):
        tree = tp.compute_merge_tree(field_1d([2, 0, 2]), "split")
        diag = tp.persistence_pairs(tree)
        root_vertex = next(n.vertex for n in tree.nodes if n.kind == "root")
        full_range = [p for p in diag.points if p.paired_vertex == root_vertex]
        assert len(full_range) == 1
        assert full_range[0].extremum_vertex == 0  # lower index survives

    def test_pair_count_matches_leaves(self):
        rng = np.random.Generator(np.random.PCG64(7))
        vals = rng.random(40)
        tree = tp.compute_merge_tree(field_1d(vals), "split")
        diag = tp.persistence_pairs(tree)
        n_leaves = sum(n.kind == "leaf" for n in tree.nodes)
        assert len(diag.points) == n_leaves


class TestBranchDecomposition:
    def test_matches_hand_example(self):
        tree = tp.compute_merge_tree(field_1d([0, 3, 1, 2, 0]), "split")
        bdt = tp.branch_decomposition(tree)
        assert bdt.size == 2
        root = bdt.root
        child = 1 - root
        assert (bdt.births[root], bdt.deaths[root]) == (0.0, 3.0)
        assert (bdt.births[child], bdt.deaths[child]) == (1.0, 2.0)
        assert bdt.parent[child] == root

    def test_single_leaf_single_branch(self):
        tree = tp.compute_merge_tree(field_1d([0, 1, 2]), "split")
        bdt = tp.branch_decomposition(tree)
        assert bdt.size == 1

    def test_branch_count_equals_diagram_and_multiset(self):
        rng = np.random.Generator(np.random.PCG64(3))
        sf = ScalarField((12, 12, 1), rng.random(144))
        tree = tp.compute_merge_tree(sf, "split")
        diag = tp.persistence_pairs(tree)
        bdt = tp.branch_decomposition(tree)
        assert bdt.size == len(diag.points)
        a = sorted((p.birth, p.death) for p in diag.points)
        b = sorted(zip(bdt.births.tolist(), bdt.deaths.tolist()))
        assert a == b

    def test_nesting_invariant(self):
        rng = np.random.Generator(np.random.PCG64(11))
        sf = ScalarField((16, 16, 1), rng.random(256))
        bdt = tp.branch_decomposition(tp.compute_merge_tree(sf, "split"))
        bdt.validate_nesting()


class TestSimplify:
    def test_zero_threshold_is_identity(self):
        diag = tp.PersistenceDiagram([tp.DiagramPoint(0, 1), tp.DiagramPoint(0.4, 0.401)])
        out = tp.simplify(diag, 0.0)
        assert len(out.points) == 2

    def test_drops_low_persistence_point(self):
        diag = tp.PersistenceDiagram([tp.DiagramPoint(0, 1), tp.DiagramPoint(0.4, 0.401)])
        out = tp.simplify(diag, 0.0025)
        assert [(p.birth, p.death) for p in out.points] == [(0, 1)]

    def test_root_branch_never_removed(self):
        bdt = tp.BDT([0.0, 0.5], [1e-6, 0.5001], [tp.NONE, 0])
        out = tp.simplify(bdt, 0.9)
        assert out.size >= 1
        assert out.births[out.root] == 0.0

    def test_bdt_reattaches_orphans(self):
        # root <- mid (tiny) <- leaf: dropping mid moves the leaf under the
        # root (simplify works on structure alone, nesting not required)
        with_mid = tp.BDT([0.0, 0.2, 0.3], [1.0, 0.205, 0.45], [tp.NONE, 0, 1])
        out = tp.simplify(with_mid, 0.1)
        assert out.size == 2
        assert out.parent[1] == 0  # orphan now under the root


class TestMergeSaddles:
    def test_eps_zero_identity(self):
        tree = tp.compute_merge_tree(field_1d([0, 3, 1, 2, 0]), "split")
        out = tp.merge_saddles(tree, 0.0)
        assert len(out.nodes) == len(tree.nodes)

    def test_eps_one_star_tree(self):
        rng = np.random.Generator(np.random.PCG64(5))
        sf = ScalarField((10, 10, 1), rng.random(100))
        tree = tp.compute_merge_tree(sf, "split")
        out = tp.merge_saddles(tree, 1.0)
        assert sum(n.kind == "saddle" for n in out.nodes) <= 1

    def test_close_saddles_merge(self):
        vals = [0, 1.0, 0.50, 0.9, 0.51, 0.8, 0.0]
        tree = tp.compute_merge_tree(field_1d(vals), "split")
        assert sum(n.kind == "saddle" for n in tree.nodes) == 2
        out = tp.merge_saddles(tree, 0.05)
        assert sum(n.kind == "saddle" for n in out.nodes) == 1

    def test_bdt_variant_preserves_pairs_and_stars(self):
        rng = np.random.Generator(np.random.PCG64(9))
        sf = ScalarField((12, 12, 1), rng.random(144))
        bdt = tp.branch_decomposition(tp.compute_merge_tree(sf, "split"))
        star = tp.merge_saddles(bdt, 1.0)
        assert np.array_equal(star.births, bdt.births)
        assert np.array_equal(star.deaths, bdt.deaths)
        root = star.root
        assert all(star.parent[i] == root for i in range(star.size) if i != root)

    def test_bdt_merge_after_decomposition_is_star(self):
        rng = np.random.Generator(np.random.PCG64(13))
        sf = ScalarField((10, 10, 1), rng.random(100))
        bdt = tp.branch_decomposition(tp.compute_merge_tree(sf, "split"))
        star = tp.merge_saddles(bdt, 1.0)
        non_root = [i for i in range(star.size) if i != star.root]
        assert all(star.parent[i] == star.root for i in non_root)


class TestNormalize:
    def test_unit_parent_unchanged(self):
        bdt = tp.BDT([0.0, 0.25], [1.0, 0.75], [tp.NONE, 0])
        out = tp.normalize(bdt)
        assert np.allclose([out.births[1], out.deaths[1]], [0.25, 0.75])
        assert (out.births[out.root], out.deaths[out.root]) == (0.0, 1.0)

    def test_direct_substitution(self):
        bdt = tp.BDT([0.5, 0.6], [1.5, 1.0], [tp.NONE, 0])
        out = tp.normalize(bdt)
        assert np.allclose([out.births[1], out.deaths[1]], [0.1, 0.5])

    def test_outputs_in_unit_square(self):
        rng = np.random.Generator(np.random.PCG64(21))
        sf = ScalarField((14, 14, 1), rng.random(196))
        bdt = tp.branch_decomposition(tp.compute_merge_tree(sf, "split"))
        out = tp.normalize(bdt)
        assert np.all(out.births >= -1e-12) and np.all(out.deaths <= 1 + 1e-12)
        assert np.all(out.births <= out.deaths)

    def test_zero_persistence_parent_errors(self):
        bdt = tp.BDT([0.0, 0.5, 0.5], [1.0, 0.5, 0.5], [tp.NONE, 0, 1])
        with pytest.raises(ValueError, match="branch"):
            tp.normalize(bdt)

    def test_round_trip_identity(self):
        tree = tp.compute_merge_tree(field_1d([0, 3, 1, 2, 0]), "split")
        bdt = tp.branch_decomposition(tree)
        back = tp.denormalize(tp.normalize(bdt))
        assert np.allclose(back.births, bdt.births, atol=1e-12)
        assert np.allclose(back.deaths, bdt.deaths, atol=1e-12)

    def test_denormalize_scale(self):
        bdt = tp.BDT([0.0], [1.0], [tp.NONE], normalized=True, scale=(2.0, 3.0))
        out = tp.denormalize(bdt)
        assert (out.births[0], out.deaths[0]) == (2.0, 5.0)

    def test_denormalize_preserves_nesting(self):
        rng = np.random.Generator(np.random.PCG64(23))
        sf = ScalarField((14, 14, 1), rng.random(196))
        bdt = tp.branch_decomposition(tp.compute_merge_tree(sf, "split"))
        tp.denormalize(tp.normalize(bdt)).validate_nesting()


class TestBdtRoundTrips:
    def test_bdt_to_merge_tree_hand_example(self):
        bdt = tp.BDT([0.0, 1.0], [3.0, 2.0], [tp.NONE, 0])
        tree = tp.bdt_to_merge_tree(bdt)
        leaf_vals = sorted(n.scalar for n in tree.nodes if n.kind == "leaf")
        assert leaf_vals == [2.0, 3.0]
        assert [n.scalar for n in tree.nodes if n.kind == "saddle"] == [1.0]

    def test_single_branch_single_arc(self):
        tree = tp.bdt_to_merge_tree(tp.BDT([0.0], [1.0], [tp.NONE]))
        assert len(tree.arcs) == 1

    def test_decomposition_round_trip(self):
        rng = np.random.Generator(np.random.PCG64(31))
        sf = ScalarField((12, 12, 1), rng.random(144))
        bdt = tp.branch_decomposition(tp.compute_merge_tree(sf, "split"))
        back = tp.branch_decomposition(tp.bdt_to_merge_tree(bdt))
        a = sorted(zip(bdt.births.tolist(), bdt.deaths.tolist()))
        b = sorted(zip(back.births.tolist(), back.deaths.tolist()))
        assert np.allclose(a, b)

    def test_nesting_violation_raises(self):
        bad = tp.BDT([0.0, -0.5], [1.0, 2.0], [tp.NONE, 0])
        with pytest.raises(ValueError, match="nesting"):
            tp.bdt_to_merge_tree(bad)

    def test_bdt_to_diagram(self):
        bdt = tp.BDT([0.0, 1.0], [3.0, 2.0], [tp.NONE, 0])
        diag = tp.bdt_to_diagram(bdt)
        assert sorted((p.birth, p.death) for p in diag.points) == [(0, 3), (1, 2)]

    def test_json_round_trip(self, tmp_path):
        bdt = tp.normalize(tp.BDT([0.0, 1.0], [3.0, 2.0], [tp.NONE, 0]))
        path = tmp_path / "b.json"
        tp.save_bdt(bdt, path)
        back = tp.load_bdt(path)
        assert np.array_equal(back.births, bdt.births)
        assert back.normalized and back.scale == bdt.scale
