"""
SVD Embedding Tests
"""
import numpy as np
import pytest
from scipy import sparse as sp

from app.core.exceptions import ConfigError, EmptyProfileError
from app.models.schemas import StudentQuery, Variant
from app.services.svd_embed import (
    SvdEmbedding,
    SvdRecommender,
    build_cooccurrence,
    fit_svd,
    l1_scale_rows,
    svd_rank,
    truncated_svd,
)


@pytest.fixture
def toy_embedding():
    """Fixture for a hand-built embedding over four courses"""
    P = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]])
    S = np.array([[0.0, 0.0], [2.0, 2.0], [1.0, 1.0], [1.0, 1.0]])
    return SvdEmbedding(P, S, np.array([2.0, 1.0]), courses=["a", "b", "c", "d"])


class TestCooccurrence:
    """Test co-occurrence counting"""

    def test_single_good_pair(self, make_instance):
        cooc = build_cooccurrence([make_instance(context=["a"], good=["b"])], Variant.PLUS)
        assert cooc.courses == ["a", "b"]
        assert cooc.entry("a", "b") == 1.0
        assert cooc.matrix.sum() == 1.0

    def test_variants_combine_counts(self, make_instance):
        instances = [
            make_instance(context=["a"], good=["b"], student="s1"),
            make_instance(context=["a"], bad=["b"], student="s2"),
        ]
        assert build_cooccurrence(instances, Variant.PLUSMINUS).entry("a", "b") == 0.0
        assert build_cooccurrence(instances, Variant.PLUSPLUS).entry("a", "b") == 2.0
        assert build_cooccurrence(instances, Variant.PLUS).entry("a", "b") == 1.0

    def test_repeated_context_counts_once(self, make_instance):
        cooc = build_cooccurrence([make_instance(context=["a", "a"], good=["b"])], Variant.PLUS)
        assert cooc.entry("a", "b") == 1.0

    def test_empty_targets(self, make_instance):
        cooc = build_cooccurrence([make_instance(context=["a"])], Variant.PLUSPLUS)
        assert cooc.matrix.nnz == 0

    def test_plusminus_matches_counting(self, small_corpus):
        """Signed matrix equals good-only minus bad-only counts computed independently"""
        from app.services.corpus import build_instances, parse_transcripts
        from io import StringIO

        text = small_corpus.transcripts.to_csv(index=False)
        instances = build_instances(parse_transcripts(StringIO(text)))[:300]
        cooc = build_cooccurrence(instances, Variant.PLUSMINUS)
        expected = {}
        for inst in instances:
            for i in set(inst.context):
                for j in inst.good:
                    expected[(i, j)] = expected.get((i, j), 0) + 1
                for j in inst.bad:
                    expected[(i, j)] = expected.get((i, j), 0) - 1
        dense = cooc.matrix.toarray()
        for (i, j), value in expected.items():
            assert dense[cooc.index[i], cooc.index[j]] == value
        assert np.abs(dense).sum() == sum(abs(v) for v in expected.values())


class TestScaling:
    """Test L1 row scaling"""

    def test_rows(self):
        scaled = l1_scale_rows(np.array([[2.0, 2.0], [3.0, -1.0], [0.0, 0.0]]))
        np.testing.assert_allclose(scaled, [[0.5, 0.5], [0.75, -0.25], [0.0, 0.0]])

    def test_sparse_input(self):
        scaled = l1_scale_rows(sp.csr_matrix(np.array([[3.0, -1.0], [0.0, 0.0]])))
        assert sp.issparse(scaled)
        np.testing.assert_allclose(scaled.toarray(), [[0.75, -0.25], [0.0, 0.0]])


class TestTruncatedSvd:
    """Test the factorization"""

    def test_diagonal(self):
        emb = truncated_svd(np.diag([3.0, 2.0, 1.0]), d=2)
        np.testing.assert_allclose(emb.sigma, [3.0, 2.0])

    def test_rank_one(self):
        rng = np.random.default_rng(0)
        u, v = rng.normal(size=8), rng.normal(size=8)
        X = np.outer(u, v)
        emb = truncated_svd(X, d=1)
        assert np.linalg.norm(emb.reconstruct() - X) <= 1e-8

    def test_full_rank_reconstruction(self):
        X = np.random.default_rng(1).normal(size=(50, 50))
        emb = truncated_svd(X, d=50)
        assert np.linalg.norm(emb.reconstruct() - X) <= 1e-8
        np.testing.assert_allclose(emb.sigma, np.linalg.svd(X, compute_uv=False), atol=1e-6)

    def test_sigma_descending(self):
        X = np.random.default_rng(2).normal(size=(30, 30))
        sigma = truncated_svd(X, d=10).sigma
        assert np.all(np.diff(sigma) <= 0)
        assert np.all(sigma >= 0)

    def test_sqrt_split(self):
        X = np.random.default_rng(3).normal(size=(20, 20))
        emb = truncated_svd(X, d=5)
        U, s, Vt = np.linalg.svd(X)
        np.testing.assert_allclose(emb.reconstruct(), (U[:, :5] * s[:5]) @ Vt[:5], atol=1e-10)

    def test_iterative_path_matches_dense(self):
        """Large sparse input goes through the iterative solver"""
        X = sp.random(600, 600, density=0.02, random_state=4, format="csr")
        emb = truncated_svd(X, d=5, seed=11)
        dense = np.linalg.svd(X.toarray(), compute_uv=False)[:5]
        np.testing.assert_allclose(emb.sigma, dense, atol=1e-6)
        again = truncated_svd(X, d=5, seed=11)
        np.testing.assert_array_equal(emb.P, again.P)

    def test_sign_convention(self):
        X = np.random.default_rng(5).normal(size=(10, 10))
        emb = truncated_svd(X, d=4)
        for k in range(4):
            column = emb.P[:, k]
            assert column[np.argmax(np.abs(column))] >= 0

    @pytest.mark.parametrize("d", [0, 4])
    def test_bad_dimension(self, d):
        with pytest.raises(ConfigError):
            truncated_svd(np.eye(3), d=d)


class TestSvdRank:
    """Test profile ranking"""

    def test_single_context_profile(self, toy_embedding):
        ranked = svd_rank(toy_embedding, ["a"], ["b", "c"])
        # profile = P_a = (1, 0)
        assert ranked == [("b", 2.0), ("c", 1.0)]

    def test_collinear_targets(self, toy_embedding):
        ranked = svd_rank(toy_embedding, ["a", "b"], ["c", "b"])
        assert [c for c, _ in ranked] == ["b", "c"]

    def test_tie_breaks_by_course_id(self, toy_embedding):
        ranked = svd_rank(toy_embedding, ["c"], ["d", "c"])
        assert ranked[0][1] == ranked[1][1]
        assert [c for c, _ in ranked] == ["c", "d"]

    def test_unknown_context_skipped(self, toy_embedding):
        assert svd_rank(toy_embedding, ["a", "zz"], ["b"]) == svd_rank(toy_embedding, ["a"], ["b"])

    def test_all_unknown_context(self, toy_embedding):
        with pytest.raises(EmptyProfileError):
            svd_rank(toy_embedding, ["zz"], ["b"])

    def test_positive_scaling_keeps_order(self, toy_embedding):
        scaled = SvdEmbedding(toy_embedding.P, 3.0 * toy_embedding.S, toy_embedding.sigma, toy_embedding.courses)
        order = [c for c, _ in svd_rank(toy_embedding, ["a", "b"], ["b", "c", "d"])]
        assert order == [c for c, _ in svd_rank(scaled, ["a", "b"], ["b", "c", "d"])]


class TestSvdRecommender:
    """Test the backend wrapper"""

    def test_fit_and_score(self, make_instance):
        instances = [
            make_instance(context=["a"], good=["b"], bad=["c"], student=f"s{i}") for i in range(3)
        ]
        emb = fit_svd(instances, Variant.PLUSMINUS, d=2)
        backend = SvdRecommender(emb)
        assert backend.name == "svd-plusminus"
        scores = backend.score(StudentQuery(student="x", term=3, context=("a",)), ["b", "c"])
        assert scores["b"] > scores["c"]
