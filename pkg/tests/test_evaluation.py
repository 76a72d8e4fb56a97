"""
Evaluation Tests
"""
import math

import numpy as np
import pytest

from app.core.exceptions import EmptyProfileError, RecommendationError
from app.services.corpus import Offerings
from app.services.evaluation import (
    Evaluator,
    cohort_stats,
    degree_similarity,
    difficulty_summary,
    evaluations_frame,
    gpa_impact,
    gpa_type,
    grade_deviation_histogram,
    group_breakdown,
    popularity_table,
    recall_metrics,
    summarize,
    term_coverage,
)
from app.services.ranker import Recommender


class OracleBackend:
    """Ranks the actual good courses first and the actual bad ones last"""

    name = "oracle"

    def score(self, query, candidates):
        return {c: 1.0 if c in query.good else (-1.0 if c in query.bad else 0.0) for c in candidates}


class EmptyBackend:
    name = "empty"

    def score(self, query, candidates):
        raise EmptyProfileError("nothing known")


@pytest.fixture
def held_out(make_instance):
    """Fixture for two held-out terms, one of them too early to evaluate"""
    priors = (("p1", 3.0), ("p2", 3.0), ("p3", 3.0))
    evaluable = make_instance(
        context=["p1", "p2", "p3"],
        good=["g1", "g2"],
        bad=["b1"],
        student="s1",
        prior_grades=priors,
        prior_mean=3.0,
        target_grades=(("b1", 2.0), ("g1", 3.333), ("g2", 3.667)),
    )
    early = make_instance(
        context=["p1"],
        good=["g1"],
        student="s2",
        prior_grades=(("p1", 3.0),),
        prior_mean=3.0,
        target_grades=(("g1", 3.0),),
    )
    return [evaluable, early]


def _evaluation(good_hits, bad_hits, n_good, n_bad, **attrs):
    good = [f"g{i}" for i in range(n_good)]
    bad = [f"b{i}" for i in range(n_bad)]
    listed = good[:good_hits] + bad[:bad_hits]
    listed += [f"x{i}" for i in range(n_good + n_bad - len(listed))]
    return recall_metrics(good, bad, listed, **attrs)


class TestRecall:
    """Test per-term recall"""

    def test_hand_example(self):
        e = recall_metrics({"a", "b"}, {"c", "d"}, ["a", "b", "c", "x"])
        assert (e.recall_good, e.recall_bad, e.recall_diff) == (1.0, 0.5, 0.5)
        assert e.n_taken == 4 and e.good_hits == 2 and e.bad_hits == 1

    def test_disjoint_list(self):
        e = recall_metrics({"a"}, {"b"}, ["x", "y"])
        assert (e.recall_good, e.recall_bad, e.recall_diff) == (0.0, 0.0, 0.0)

    def test_list_equals_actuals(self):
        e = recall_metrics({"a"}, {"b"}, ["a", "b"])
        assert (e.recall_good, e.recall_bad, e.recall_diff) == (1.0, 1.0, 0.0)

    def test_undefined_side(self):
        e = recall_metrics({"a", "b"}, set(), ["a", "x"])
        assert e.recall_good == 0.5
        assert e.recall_bad is None and e.recall_diff is None

    def test_short_list_keeps_denominators(self):
        """Too few candidates give a shorter list, scored against the full actuals"""
        e = recall_metrics({"a", "b", "c"}, {"d"}, ["a"])
        assert (e.recall_good, e.recall_bad) == (pytest.approx(1 / 3), 0.0)
        assert e.n_taken == 4 and e.recommended == ("a",)

    def test_list_too_long(self):
        with pytest.raises(RecommendationError):
            recall_metrics({"a"}, set(), ["a", "b"])


class TestGpaImpact:
    """Test GPA increase and decrease"""

    def test_increase(self):
        inc, dec = gpa_impact({"a": 3.3, "b": 1.0}, {"a"}, {"b"}, ["a"], 3.0)
        assert inc == pytest.approx(10.0)
        assert dec is None

    def test_no_change(self):
        inc, _ = gpa_impact({"a": 3.0}, {"a"}, set(), ["a"], 3.0)
        assert inc == pytest.approx(0.0)

    def test_decrease(self):
        _, dec = gpa_impact({"a": 2.4}, set(), {"a"}, ["a"], 3.0)
        assert dec == pytest.approx(20.0)

    def test_no_prior_gpa(self):
        assert gpa_impact({"a": 2.4}, set(), {"a"}, ["a"], 0.0) == (None, None)


class TestAggregation:
    """Test coverage and summaries"""

    def test_coverage(self):
        evaluations = [
            _evaluation(1, 0, 2, 1),
            _evaluation(0, 1, 1, 1),
            _evaluation(2, 1, 2, 2),
            _evaluation(0, 0, 1, 1),
        ]
        assert term_coverage(evaluations) == (2, 2)
        assert term_coverage([_evaluation(0, 0, 1, 1)]) == (0, 0)
        full = [_evaluation(2, 0, 2, 1), _evaluation(1, 0, 1, 0)]
        assert term_coverage(full)[0] == len(full)

    def test_diff_identity(self):
        rng = np.random.default_rng(0)
        evaluations = []
        for _ in range(50):
            n_good, n_bad = int(rng.integers(0, 4)), int(rng.integers(0, 4))
            if n_good + n_bad == 0:
                continue
            hits_good = int(rng.integers(0, n_good + 1))
            hits_bad = int(rng.integers(0, n_bad + 1))
            evaluations.append(_evaluation(hits_good, hits_bad, n_good, n_bad))
        summary = summarize(evaluations)
        assert abs(summary.recall_diff - (summary.recall_good - summary.recall_bad)) <= 1e-12
        for e in evaluations:
            assert 0.0 <= (e.recall_good if e.recall_good is not None else 0.0) <= 1.0
            if e.recall_diff is not None:
                assert abs(e.recall_diff - (e.recall_good - e.recall_bad)) <= 1e-12

    def test_sides_average_separately(self):
        summary = summarize([_evaluation(1, 0, 1, 0), _evaluation(0, 1, 1, 1)])
        assert summary.n_terms_good == 2 and summary.n_terms_bad == 1
        assert summary.recall_good == pytest.approx(0.5)
        assert summary.recall_bad == pytest.approx(1.0)

    def test_gpa_type_thresholds(self):
        assert gpa_type(3.8) == "A"
        assert gpa_type(3.667) == "A"
        assert gpa_type(3.0) == "B"
        assert gpa_type(2.0) == "C"
        assert gpa_type(None) == ""


class TestGroupBreakdown:
    """Test per-group tables"""

    def test_single_group_matches_overall(self):
        evaluations = [_evaluation(1, 0, 2, 1, major="M"), _evaluation(0, 1, 1, 2, major="M")]
        rows = group_breakdown(evaluations, "major")
        assert len(rows) == 1
        overall = summarize(evaluations).model_dump()
        assert {k: v for k, v in rows[0].model_dump().items() if k in overall} == overall

    def test_weighted_mean_identity(self):
        evaluations = [
            _evaluation(1, 0, 2, 1, major="M1"),
            _evaluation(2, 1, 2, 2, major="M1"),
            _evaluation(0, 0, 3, 1, major="M2"),
        ]
        rows = group_breakdown(evaluations, "major")
        total = sum(r.n_terms_good for r in rows)
        weighted = sum(r.recall_good * r.n_terms_good for r in rows) / total
        assert summarize(evaluations).recall_good == pytest.approx(weighted)

    def test_levels_and_types(self):
        evaluations = [_evaluation(1, 0, 1, 1, level="junior", gpa_type="A")]
        assert [r.group for r in group_breakdown(evaluations, "academic-level")] == ["junior"]
        assert [r.group for r in group_breakdown(evaluations, "gpa-type")] == ["A"]
        assert group_breakdown([], "major") == []

    def test_unknown_grouping(self):
        with pytest.raises(ValueError):
            group_breakdown([], "colour")


class TestDegreeSimilarity:
    """Test degree-plan similarity"""

    PLAN = {"a": 1, "b": 1, "c": 2, "d": 4}

    def test_identical_plans(self):
        assert degree_similarity(self.PLAN, dict(self.PLAN)) == 1.0

    def test_reversed_pair(self):
        assert degree_similarity({"x": 1, "y": 2}, {"x": 2, "y": 1}) == 0.0

    def test_gap_mismatch(self):
        assert degree_similarity({"x": 1, "y": 2}, {"x": 1, "y": 3}, lam=0.5) == pytest.approx(math.exp(-0.5))

    def test_same_term_against_ordered(self):
        assert degree_similarity({"x": 1, "y": 1}, {"x": 1, "y": 2}) == 0.0

    def test_too_few_common_courses(self):
        assert degree_similarity({"x": 1, "y": 2}, {"x": 1, "z": 2}) is None

    def test_symmetric_bounded_and_decreasing(self):
        rng = np.random.default_rng(1)
        courses = list("abcdefgh")
        for _ in range(20):
            p1 = {c: int(rng.integers(1, 6)) for c in courses}
            p2 = {c: int(rng.integers(1, 6)) for c in courses}
            s = degree_similarity(p1, p2)
            assert s == degree_similarity(p2, p1)
            assert 0.0 <= s <= 1.0
        p1, p2 = {"a": 1, "b": 2, "c": 3}, {"a": 1, "b": 3, "c": 4}
        assert degree_similarity(p1, p2, lam=1.0) < degree_similarity(p1, p2, lam=0.5)

    def test_cohort_stats(self, sample_histories):
        frame = cohort_stats(sample_histories, lam=0.5, max_pairs=10, seed=1)
        row = frame.iloc[0]
        assert row["major"] == "CS"
        assert row["n_students"] == 2
        assert row["common_course_pct"] == pytest.approx(80.0)
        assert row["degree_similarity"] == pytest.approx(1.0)
        # s1 finishes with 3.6 (type B), s2 with 2.6 (type C)
        assert row["similarity_B_C"] == pytest.approx(1.0)


class TestTables:
    """Test distribution and difficulty tables"""

    def test_histogram_bins(self):
        frame = grade_deviation_histogram([0.0, 0.1, -0.2, 1.0, 10.0])
        assert len(frame) == 26
        assert frame["count"].sum() == 4
        zero_bin = frame[(frame["bin_low"] <= 0.05) & (frame["bin_high"] > 0.05)]
        assert int(zero_bin["count"].iloc[0]) == 2

    def test_difficulty_summary(self):
        frame = difficulty_summary(["a", "a", "zz"], {"a": 2.0, "b": 4.0})
        rec, everything = frame.iloc[0], frame.iloc[1]
        assert rec["population"] == "recommended" and rec["n"] == 2 and rec["mean"] == 2.0
        assert everything["mean"] == 3.0

    def test_popularity_table(self, held_out):
        evaluation = recall_metrics({"g1", "g2"}, {"b1"}, ["g1", "b1", "x"], student="s1", term=2)
        frame = popularity_table([evaluation], held_out)
        table = frame.set_index("course_id")
        assert table.loc["g1", "actual_good"] == 2
        assert table.loc["g1", "recommended_good"] == 1
        assert table.loc["g2", "recommended_good"] == 0


class TestEvaluator:
    """Test the evaluation harness"""

    @pytest.fixture
    def offerings(self):
        return Offerings({2: ["g1", "g2", "b1", "n1", "n2", "n3"]})

    def test_perfect_oracle(self, held_out, offerings):
        evaluator = Evaluator(offerings, [])
        evaluations = evaluator.evaluate(Recommender(OracleBackend(), offerings), held_out)
        assert len(evaluations) == 1
        e = evaluations[0]
        assert e.recommended == ("g1", "g2", "n1")
        assert (e.recall_good, e.recall_bad) == (1.0, 0.0)
        assert e.pct_gpa_increase == pytest.approx((3.5 - 3.0) / 3.0 * 100.0)
        assert e.pct_gpa_decrease is None

    def test_empty_profile_gives_empty_list(self, held_out, offerings):
        evaluator = Evaluator(offerings, [])
        e = evaluator.evaluate(Recommender(EmptyBackend(), offerings), held_out)[0]
        assert e.recommended == ()
        assert e.recall_good == 0.0 and e.pct_gpa_increase is None

    def test_summary_and_frame(self, held_out, offerings):
        evaluator = Evaluator(offerings, [])
        evaluations = evaluator.evaluate(Recommender(OracleBackend(), offerings), held_out)
        summary = Evaluator.summary(evaluations, "oracle", "test", {"g1": 3.0, "g2": 2.0, "n1": 4.0})
        assert summary.method == "oracle"
        assert summary.recall_diff == 1.0
        assert summary.mean_recommended_difficulty == pytest.approx(3.0)
        frame = evaluations_frame(evaluations)
        assert frame.loc[0, "recommended"] == "g1 g2 n1"
