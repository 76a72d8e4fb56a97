"""
Evaluation Service
Grade-aware recall, GPA impact, coverage, group breakdowns and degree-plan analysis
"""
import math
from collections import Counter, defaultdict
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.exceptions import EmptyProfileError, RecommendationError
from app.core.logging import get_logger
from app.models.schemas import (
    EvaluationSummary,
    GroupRow,
    MetricSummary,
    StudentHistory,
    TermEvaluation,
    TrainingInstance,
)
from app.services.corpus import Offerings, degree_plan
from app.services.ranker import Recommender

_log = get_logger(__name__)

GROUPINGS = {"major": "major", "gpa-type": "gpa_type", "academic-level": "level"}
HISTOGRAM_BIN = 1.0 / 3.0


# ==================== Per-term metrics ====================

def recall_metrics(
    good: Iterable[str],
    bad: Iterable[str],
    recommended: Sequence[str],
    method: str = "",
    student: str = "",
    term: int = 0,
    **attrs,
) -> TermEvaluation:
    """
    Hits of a list sized to the term load against the actual good and bad courses

    The list may be shorter than the load when the filter leaves fewer
    candidates; the recalls still divide by the actual good and bad counts.
    Longer lists are rejected.
    """
    good, bad = set(good), set(bad)
    n_taken = len(good | bad)
    if len(recommended) > n_taken:
        raise RecommendationError(f"list of {len(recommended)} courses exceeds the term load {n_taken}")
    listed = set(recommended)
    good_hits, bad_hits = len(listed & good), len(listed & bad)
    recall_good = good_hits / len(good) if good else None
    recall_bad = bad_hits / len(bad) if bad else None
    diff = recall_good - recall_bad if recall_good is not None and recall_bad is not None else None
    return TermEvaluation(
        method=method,
        student=student,
        term=term,
        n_taken=n_taken,
        n_good=len(good),
        n_bad=len(bad),
        good_hits=good_hits,
        bad_hits=bad_hits,
        recall_good=recall_good,
        recall_bad=recall_bad,
        recall_diff=diff,
        recommended=tuple(recommended),
        **attrs,
    )


def gpa_impact(
    target_grades: Mapping[str, float],
    good: Iterable[str],
    bad: Iterable[str],
    recommended: Sequence[str],
    prior_gpa: Optional[float],
) -> Tuple[Optional[float], Optional[float]]:
    """(% increase over recommended good courses, % decrease over recommended bad courses)"""
    if not prior_gpa or prior_gpa <= 0:
        return None, None
    listed = set(recommended)
    rec_good = [target_grades[c] for c in sorted(listed & set(good))]
    rec_bad = [target_grades[c] for c in sorted(listed & set(bad))]
    inc = (np.mean(rec_good) - prior_gpa) / prior_gpa * 100.0 if rec_good else None
    dec = (prior_gpa - np.mean(rec_bad)) / prior_gpa * 100.0 if rec_bad else None
    return (float(inc) if inc is not None else None, float(dec) if dec is not None else None)


def term_coverage(evaluations: Iterable[TermEvaluation]) -> Tuple[int, int]:
    evaluations = list(evaluations)
    return (
        sum(1 for e in evaluations if e.good_hits > 0),
        sum(1 for e in evaluations if e.bad_hits > 0),
    )


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def summarize(evaluations: Sequence[TermEvaluation]) -> MetricSummary:
    """Per-term averages; each side averages only terms where it is defined"""
    rg = [e.recall_good for e in evaluations if e.recall_good is not None]
    rb = [e.recall_bad for e in evaluations if e.recall_bad is not None]
    good_mean, bad_mean = _mean(rg), _mean(rb)
    cov_good, cov_bad = term_coverage(evaluations)
    return MetricSummary(
        n_terms=len(evaluations),
        n_terms_good=len(rg),
        n_terms_bad=len(rb),
        recall_good=good_mean,
        recall_bad=bad_mean,
        recall_diff=good_mean - bad_mean if good_mean is not None and bad_mean is not None else None,
        pct_gpa_increase=_mean([e.pct_gpa_increase for e in evaluations if e.pct_gpa_increase is not None]),
        pct_gpa_decrease=_mean([e.pct_gpa_decrease for e in evaluations if e.pct_gpa_decrease is not None]),
        coverage_good=cov_good,
        coverage_bad=cov_bad,
    )


def gpa_type(final_gpa: Optional[float], type_a: float = 3.667, type_b: float = 2.667) -> str:
    if final_gpa is None:
        return ""
    if final_gpa >= type_a - 1e-9:
        return "A"
    if final_gpa >= type_b - 1e-9:
        return "B"
    return "C"


def group_breakdown(evaluations: Sequence[TermEvaluation], grouping: str) -> List[GroupRow]:
    """Summary per value of ``grouping`` (major, gpa-type or academic-level)"""
    if grouping not in GROUPINGS:
        raise ValueError(f"unknown grouping {grouping!r}")
    attr = GROUPINGS[grouping]
    buckets: Dict[str, List[TermEvaluation]] = defaultdict(list)
    for e in evaluations:
        buckets[getattr(e, attr)].append(e)
    return [
        GroupRow(grouping=grouping, group=group, **summarize(rows).model_dump())
        for group, rows in sorted(buckets.items())
        if rows
    ]


# ==================== Degree plans ====================

def degree_similarity(plan1: Mapping[str, int], plan2: Mapping[str, int], lam: float = 0.5) -> Optional[float]:
    """
    Mean timing agreement over unordered pairs of common courses

    A pair scores 1 when both plans take the two courses in the same term,
    exp(-lam * |gap1 - gap2|) when both order them the same way, 0 otherwise.
    None when the plans share fewer than two courses.
    """
    common = sorted(set(plan1) & set(plan2))
    if len(common) < 2:
        return None
    total = 0.0
    for x, y in combinations(common, 2):
        dt1 = plan1[y] - plan1[x]
        dt2 = plan2[y] - plan2[x]
        if dt1 == 0 and dt2 == 0:
            total += 1.0
        elif dt1 * dt2 >= 1:
            total += math.exp(-lam * abs(dt1 - dt2))
    return total / (len(common) * (len(common) - 1) / 2)


def _sample_pairs(n_left: int, n_right: Optional[int], max_pairs: int, rng: np.random.Generator) -> List[Tuple[int, int]]:
    if n_right is None:
        pairs = list(combinations(range(n_left), 2))
    else:
        pairs = [(i, j) for i in range(n_left) for j in range(n_right)]
    if len(pairs) > max_pairs:
        picks = rng.choice(len(pairs), size=max_pairs, replace=False)
        pairs = [pairs[i] for i in sorted(picks)]
    return pairs


def cohort_stats(
    histories: Sequence[StudentHistory],
    lam: float = 0.5,
    type_a: float = 3.667,
    type_b: float = 2.667,
    max_pairs: int = 2000,
    seed: int = 42,
) -> pd.DataFrame:
    """
    Per major: mean pairwise % of common courses and mean degree similarity,
    plus mean degree similarity between GPA-type groups
    """
    rng = np.random.default_rng(seed)
    by_major: Dict[str, List[StudentHistory]] = defaultdict(list)
    for h in histories:
        by_major[h.major].append(h)

    rows = []
    for major, members in sorted(by_major.items()):
        plans = [degree_plan(h) for h in members]
        jaccard, sims = [], []
        for i, j in _sample_pairs(len(plans), None, max_pairs, rng):
            a, b = set(plans[i]), set(plans[j])
            if a | b:
                jaccard.append(len(a & b) / len(a | b) * 100.0)
            s = degree_similarity(plans[i], plans[j], lam)
            if s is not None:
                sims.append(s)
        row = {
            "major": major,
            "n_students": len(members),
            "common_course_pct": _mean(jaccard),
            "degree_similarity": _mean(sims),
        }
        by_type: Dict[str, List[Dict[str, int]]] = defaultdict(list)
        for h, plan in zip(members, plans):
            by_type[gpa_type(h.final_gpa, type_a, type_b)].append(plan)
        for left, right in (("A", "B"), ("A", "C"), ("B", "C")):
            cross = []
            for i, j in _sample_pairs(len(by_type[left]), len(by_type[right]), max_pairs, rng):
                s = degree_similarity(by_type[left][i], by_type[right][j], lam)
                if s is not None:
                    cross.append(s)
            row[f"similarity_{left}_{right}"] = _mean(cross)
        rows.append(row)
    return pd.DataFrame(rows)


# ==================== Distributions ====================

def grade_deviation_histogram(deviations: Sequence[float]) -> pd.DataFrame:
    """Counts of grade minus prior mean in bins one third of a grade point wide"""
    edges = np.arange(-13, 14) * HISTOGRAM_BIN
    counts, _ = np.histogram(np.asarray(deviations, dtype=np.float64), bins=edges)
    return pd.DataFrame({"bin_low": edges[:-1], "bin_high": edges[1:], "count": counts})


def difficulty_summary(recommended: Iterable[str], course_means: Mapping[str, float]) -> pd.DataFrame:
    """Training mean grade of recommended courses against all courses"""
    rec = [course_means[c] for c in recommended if c in course_means]
    rows = []
    for label, values in (("recommended", rec), ("all", list(course_means.values()))):
        arr = np.asarray(values, dtype=np.float64)
        rows.append({
            "population": label,
            "n": int(arr.size),
            "mean": float(arr.mean()) if arr.size else None,
            "median": float(np.median(arr)) if arr.size else None,
            "std": float(arr.std()) if arr.size else None,
        })
    return pd.DataFrame(rows)


def popularity_table(evaluations: Sequence[TermEvaluation], instances: Sequence[TrainingInstance]) -> pd.DataFrame:
    """Per course: actual good takes against times recommended while actually good"""
    actual = Counter(c for inst in instances for c in inst.good)
    good_by_term = {(inst.student, inst.term): inst.good for inst in instances}
    hits = Counter(
        c
        for e in evaluations
        for c in e.recommended
        if c in good_by_term.get((e.student, e.term), ())
    )
    courses = sorted(set(actual) | set(hits))
    return pd.DataFrame({
        "course_id": courses,
        "actual_good": [actual[c] for c in courses],
        "recommended_good": [hits[c] for c in courses],
    })


# ==================== Harness ====================

class Evaluator:
    """Runs recommenders over held-out instances and scores the lists"""

    def __init__(
        self,
        offerings: Offerings,
        histories: Sequence[StudentHistory],
        min_prior_courses: int = 3,
        type_a: float = 3.667,
        type_b: float = 2.667,
    ):
        self.offerings = offerings
        self.min_prior_courses = min_prior_courses
        self.gpa_types = {h.student: gpa_type(h.final_gpa, type_a, type_b) for h in histories}

    def evaluable(self, instances: Iterable[TrainingInstance]) -> List[TrainingInstance]:
        return [inst for inst in instances if inst.n_prior_courses >= self.min_prior_courses]

    def evaluate_instance(self, recommender: Recommender, inst: TrainingInstance) -> TermEvaluation:
        try:
            ranked = recommender.recommend(inst, inst.term, len(inst.targets))
        except EmptyProfileError:
            ranked = []
        recommended = [c for c, _ in ranked]
        evaluation = recall_metrics(
            inst.good,
            inst.bad,
            recommended,
            method=recommender.name,
            student=inst.student,
            term=inst.term,
            major=inst.major,
            level=inst.level,
            gpa_type=self.gpa_types.get(inst.student, ""),
        )
        if evaluation.good_hits + evaluation.bad_hits:
            inc, dec = gpa_impact(dict(inst.target_grades), inst.good, inst.bad, recommended, inst.prior_mean)
            evaluation = evaluation.model_copy(update={"pct_gpa_increase": inc, "pct_gpa_decrease": dec})
        return evaluation

    def evaluate(self, recommender: Recommender, instances: Iterable[TrainingInstance]) -> List[TermEvaluation]:
        evaluations = [self.evaluate_instance(recommender, inst) for inst in self.evaluable(instances)]
        _log.info("%s: evaluated %d terms", recommender.name, len(evaluations))
        return evaluations

    @staticmethod
    def summary(
        evaluations: Sequence[TermEvaluation],
        method: str,
        partition: str,
        course_means: Optional[Mapping[str, float]] = None,
    ) -> EvaluationSummary:
        base = summarize(evaluations)
        difficulty = None
        if course_means:
            rec = [course_means[c] for e in evaluations for c in e.recommended if c in course_means]
            difficulty = _mean(rec)
        return EvaluationSummary(method=method, partition=partition, mean_recommended_difficulty=difficulty, **base.model_dump())


def evaluations_frame(evaluations: Sequence[TermEvaluation]) -> pd.DataFrame:
    rows = []
    for e in evaluations:
        row = e.model_dump()
        row["recommended"] = " ".join(e.recommended)
        rows.append(row)
    return pd.DataFrame(rows, columns=list(TermEvaluation.model_fields))
