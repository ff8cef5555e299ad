import numpy as np
import pytest

from topickg import autodiff as ad
from topickg.autodiff import Tensor
from topickg.taxonomy import (CycleError, TaxonomyError, TopicTree,
                              adaptive_adjacency, build_tree, load_lexicon,
                              load_tree, revise_adjacency, save_lexicon,
                              save_tree, to_matrices)


class TestBuildTree:
    def test_hypernym_chain(self):
        tree = build_tree(["bed", "bunkbed"],
                          [("bed", "furniture"), ("bunkbed", "bed")],
                          max_layers=2)
        assert tree.layers[0] == ["bed", "bunkbed"]
        assert tree.layers[1] == ["bed"]
        assert tree.layers[2] == ["furniture"]
        # bunkbed -> bed -> furniture, and leaf bed promoted through bed@1
        bed_w, bunk_w = 0, 1
        bed_t = tree.gid(1, 0)
        furn = tree.gid(2, 0)
        assert (bed_t, bunk_w) in tree.edges
        assert (bed_t, bed_w) in tree.edges
        assert (furn, bed_t) in tree.edges

    def test_word_without_entry_reported(self):
        tree = build_tree(["bed", "sofa"], [("bed", "furniture")], max_layers=1)
        assert tree.report["excluded_words"] == ["sofa"]
        # sofa stays in the word layer but has no parent edge
        assert not any(c == 1 for _p, c in tree.edges)

    def test_empty_intersection_errors(self):
        with pytest.raises(TaxonomyError):
            build_tree(["x"], [("a", "b")], max_layers=1)

    def test_cycle_detected(self):
        with pytest.raises(CycleError) as exc:
            build_tree(["a"], [("a", "b"), ("b", "c"), ("c", "b")], max_layers=2)
        assert "b" in exc.value.cycle

    def test_long_chain_collapsed_from_top(self):
        pairs = [("w", "t1"), ("t1", "t2"), ("t2", "t3"), ("t3", "t4")]
        tree = build_tree(["w"], pairs, max_layers=2)
        assert tree.num_layers == 2
        assert len(tree.layers[2]) == 1  # t2..t4 merged into the root
        assert tree.layers[1] == ["t1"]

    def test_short_chain_padded(self):
        pairs = [("w", "top"), ("v", "mid"), ("mid", "top")]
        tree = build_tree(["w", "v"], pairs, max_layers=2)
        # w jumps straight to the root; a copy of w bridges layer 1
        assert "w" in tree.layers[1]
        assert tree.layers[2] == ["top"]

    def test_single_root(self):
        pairs = [("a", "p"), ("b", "q")]
        tree = build_tree(["a", "b"], pairs, max_layers=2)
        assert len(tree.layers[-1]) == 1

    def test_concepts_default_to_name(self):
        tree = build_tree(["bed", "bunkbed"],
                          [("bed", "furniture"), ("bunkbed", "bed")],
                          max_layers=2)
        bed_t = tree.gid(1, 0)
        assert tree.concepts[bed_t] == [0]

    def test_concepts_from_definitions(self):
        tree = build_tree(["bed", "bunkbed"],
                          [("bed", "furniture"), ("bunkbed", "bed")],
                          max_layers=2,
                          defs={"furniture": "a bed or bunkbed for rooms"})
        furn = tree.gid(2, 0)
        assert tree.concepts[furn] == [0, 1]


class TestMatrices:
    def chain_tree(self):
        return TopicTree(layers=[["w"], ["mid"], ["top"]],
                         edges={(1, 0), (2, 1)})

    def test_chain_nonzeros(self):
        mats = to_matrices(self.chain_tree())
        assert np.count_nonzero(mats.A) == 7  # 3 self-loops + 2 edges both ways

    def test_two_node_normalization(self):
        tree = TopicTree(layers=[["w"], ["t"]], edges={(1, 0)})
        mats = to_matrices(tree)
        np.testing.assert_allclose(mats.A_norm, [[0.5, 0.5], [0.5, 0.5]])

    def test_s_matrix_orientation(self):
        mats = to_matrices(self.chain_tree())
        assert mats.S[0][0, 0] == 1.0  # child w of topic mid
        assert mats.S[1][0, 0] == 1.0

    def test_concept_edges_in_a(self):
        tree = TopicTree(layers=[["w", "v"], ["t"]], edges={(2, 0)},
                         concepts={2: [1]})
        mats = to_matrices(tree)
        assert mats.C[0][1, 0] == 1.0
        assert mats.A[1, 2] == 1.0 and mats.A[2, 1] == 1.0

    def test_random_tree_spectrum(self):
        rng = np.random.Generator(np.random.PCG64(0))
        vocab = [f"w{i}" for i in range(12)]
        pairs = [(w, f"t{rng.integers(3)}") for w in vocab]
        pairs += [(f"t{i}", "root") for i in range(3)]
        tree = build_tree(vocab, pairs, max_layers=2)
        mats = to_matrices(tree)
        np.testing.assert_allclose(mats.A_norm, mats.A_norm.T, atol=1e-12)
        eig = np.linalg.eigvalsh(mats.A_norm)
        assert eig.min() >= -1 - 1e-9 and eig.max() <= 1 + 1e-9

    def test_round_trip_tree_file(self, tmp_path):
        tree = build_tree(["bed", "bunkbed"],
                          [("bed", "furniture"), ("bunkbed", "bed")],
                          max_layers=2, defs={"furniture": "things like a bed"})
        path = tmp_path / "tree.txt"
        save_tree(tree, path)
        again = load_tree(path)
        assert again.layers == tree.layers
        assert again.edges == tree.edges
        assert again.concepts == tree.concepts
        assert again.defs == tree.defs
        m1, m2 = to_matrices(tree), to_matrices(again)
        for a, b in zip(m1.S, m2.S):
            assert np.array_equal(a, b)
        for a, b in zip(m1.C, m2.C):
            assert np.array_equal(a, b)
        assert np.array_equal(m1.A, m2.A)

    def test_lexicon_round_trip(self, tmp_path):
        pairs = [("a", "b"), ("c", "d")]
        save_lexicon(pairs, tmp_path / "lex.txt")
        assert load_lexicon(tmp_path / "lex.txt") == pairs


class TestAdaptiveAdjacency:
    def test_identical_columns_uniform(self):
        e = Tensor(np.ones((3, 4)))
        out = adaptive_adjacency(e)
        np.testing.assert_allclose(out.data, 0.25, atol=1e-12)

    def test_orthogonal_two_nodes(self):
        e = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        out = adaptive_adjacency(e)
        expect = np.exp(1.0) / (np.exp(1.0) + 1.0)
        np.testing.assert_allclose(out.data[0], [expect, 1 - expect], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.Generator(np.random.PCG64(2))
        out = adaptive_adjacency(Tensor(rng.normal(size=(5, 9))))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)

    def test_zero_norm_column_safe(self):
        e = np.ones((3, 4))
        e[:, 2] = 0.0
        out = adaptive_adjacency(Tensor(e, requires_grad=True))
        assert np.all(np.isfinite(out.data))
        ad.backward(ad.tsum(ad.mul(out, out)))

    def test_permutation_equivariance(self):
        rng = np.random.Generator(np.random.PCG64(4))
        e = rng.normal(size=(4, 6))
        perm = rng.permutation(6)
        a = adaptive_adjacency(Tensor(e)).data
        b = adaptive_adjacency(Tensor(e[:, perm])).data
        np.testing.assert_allclose(b, a[np.ix_(perm, perm)], atol=1e-12)


class TestReviseAdjacency:
    def test_additive_identity(self):
        a = np.array([[0.3, 0.7], [0.7, 0.3]])
        out = revise_adjacency(a, Tensor(np.zeros((2, 2))))
        np.testing.assert_array_equal(out.data, a)

    def test_addition(self):
        out = revise_adjacency(np.full((2, 2), 0.5), Tensor(np.full((2, 2), 0.5)))
        np.testing.assert_allclose(out.data, 1.0)

    def test_dominates_prior(self):
        rng = np.random.Generator(np.random.PCG64(6))
        prior = np.abs(rng.normal(size=(5, 5)))
        ada = adaptive_adjacency(Tensor(rng.normal(size=(3, 5))))
        out = revise_adjacency(prior, ada)
        assert np.all(out.data >= prior)

    def test_shape_mismatch(self):
        with pytest.raises(ad.ShapeMismatch):
            revise_adjacency(np.ones((2, 2)), Tensor(np.ones((3, 3))))
