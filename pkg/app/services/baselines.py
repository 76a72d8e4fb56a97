"""
Baseline Recommenders
Group popularity and the Mann-Whitney course dependency graph
"""
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from app.core.logging import get_logger
from app.models.schemas import StudentHistory, StudentQuery, TrainingInstance, Variant
from app.services.scoring import Ranked, rank_scores
from app.services.table_utils import TableUtils

_log = get_logger(__name__)

EXACT_BELOW = 8


# ==================== Group popularity ====================

class GroupPopModel:
    """Good/bad take counts per (major, academic level) cohort"""

    def __init__(self):
        self.counts: Dict[Tuple[str, str], Dict[str, List[int]]] = defaultdict(lambda: defaultdict(lambda: [0, 0]))

    def add(self, inst: TrainingInstance):
        group = self.counts[(inst.major, inst.level)]
        for c in inst.good:
            group[c][0] += 1
        for c in inst.bad:
            group[c][1] += 1

    def group(self, major: str, level: str) -> Dict[str, List[int]]:
        return self.counts.get((major, level), {})


def build_grppop(instances: Iterable[TrainingInstance]) -> GroupPopModel:
    model = GroupPopModel()
    for inst in instances:
        model.add(inst)
    return model


def grppop_rank(
    model: GroupPopModel,
    major: str,
    level: str,
    candidates: Iterable[str],
    variant: Variant = Variant.PLUSMINUS,
) -> Ranked:
    group = model.group(major, level)
    scores = {}
    for c in candidates:
        n_good, n_bad = group.get(c, (0, 0))
        scores[c] = float(n_good - n_bad) if Variant(variant) is Variant.PLUSMINUS else float(n_good)
    return rank_scores(scores)


class GroupPopRecommender:
    def __init__(self, model: GroupPopModel, variant: Variant = Variant.PLUSMINUS):
        if Variant(variant) is Variant.PLUSPLUS:
            raise ValueError("group popularity supports the plus and plusminus variants only")
        self.model = model
        self.variant = Variant(variant)
        self.name = f"grppop-{self.variant.value}"

    def score(self, query: StudentQuery, candidates: Iterable[str]) -> Dict[str, float]:
        return dict(grppop_rank(self.model, query.major, query.level, candidates, self.variant))


# ==================== Mann-Whitney U ====================

def _rank_sum_distribution(doubled_ranks: np.ndarray, m: int) -> np.ndarray:
    """Number of size-m subsets of the pooled sample per doubled rank sum"""
    # no size-m subset sums past its m largest ranks
    top = int(np.sort(doubled_ranks)[-m:].sum()) if m > 0 else 0
    ways = np.zeros((m + 1, top + 1))
    ways[0, 0] = 1.0
    for r in doubled_ranks.astype(np.int64):
        for j in range(m, 0, -1):
            ways[j, r:] += ways[j - 1, : top + 1 - r]
    return ways[m]


def mann_whitney_u(sample_with: Sequence[float], sample_without: Sequence[float]) -> Tuple[float, float]:
    """
    U of ``sample_with`` and the one-sided p-value that it is stochastically larger

    Midranks handle ties. Exact enumeration of the tied-rank permutation
    distribution when either side has fewer than 8 values, otherwise the
    tie-corrected normal approximation with continuity correction.
    """
    x = np.asarray(sample_with, dtype=np.float64)
    y = np.asarray(sample_without, dtype=np.float64)
    n1, n2 = x.size, y.size
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")

    ranks = stats.rankdata(np.concatenate([x, y]))
    r1 = ranks[:n1].sum()
    u = float(r1 - n1 * (n1 + 1) / 2.0)
    if np.all(ranks == ranks[0]):
        return u, 0.5

    if min(n1, n2) < EXACT_BELOW:
        doubled = np.rint(2 * ranks).astype(np.int64)
        if n1 <= n2:
            dist = _rank_sum_distribution(doubled, n1)
            p = dist[int(round(2 * r1)) :].sum() / dist.sum()
        else:
            r2 = ranks[n1:].sum()
            dist = _rank_sum_distribution(doubled, n2)
            p = dist[: int(round(2 * r2)) + 1].sum() / dist.sum()
        return u, float(min(1.0, p))

    n = n1 + n2
    sigma = np.sqrt(n1 * n2 * (n + 1) / 12.0 * stats.tiecorrect(ranks))
    z = (u - n1 * n2 / 2.0 - 0.5) / sigma
    return u, float(stats.norm.sf(z))


# ==================== Dependency graph ====================

class DependencyGraph:
    """
    Directed course pairs tested for a grade benefit of taking the source first

    ``tests`` keeps every pair that met the sample-size gate; ``edges`` is the
    significant subset.
    """

    kind = "depgraph"

    def __init__(self, alpha: float, min_n: int):
        self.alpha = alpha
        self.min_n = min_n
        self.tests: Dict[Tuple[str, str], Tuple[float, float]] = {}
        self.edges: Set[Tuple[str, str]] = set()
        self.incoming: Dict[str, Set[str]] = defaultdict(set)

    def add_test(self, src: str, dst: str, u: float, p: float):
        self.tests[(src, dst)] = (u, p)
        if p < self.alpha:
            self.edges.add((src, dst))
            self.incoming[dst].add(src)

    def has_edge(self, src: str, dst: str) -> bool:
        return (src, dst) in self.edges

    def to_frame(self) -> pd.DataFrame:
        rows = [(s, t, *self.tests[(s, t)]) for s, t in sorted(self.edges)]
        return pd.DataFrame(rows, columns=["src", "dst", "u", "p"])

    def export(self, path: Path) -> Path:
        return TableUtils.write_csv(self.to_frame(), path)


def _first_takes(histories: Iterable[StudentHistory], end_term: Optional[int]) -> Dict[str, Dict[str, Tuple[int, float]]]:
    """course -> student -> (term, points) of the student's first take"""
    takes: Dict[str, Dict[str, Tuple[int, float]]] = defaultdict(dict)
    for h in histories:
        for t in h.terms:
            if end_term is not None and t.term > end_term:
                break
            for e in t.enrollments:
                takes[e.course].setdefault(h.student, (t.term, e.points))
    return takes


def build_dependency_graph(
    histories: Iterable[StudentHistory],
    alpha: float = 0.05,
    min_n: int = 10,
    end_term: Optional[int] = None,
) -> DependencyGraph:
    """
    Test every ordered pair (A, B): grades in B of students who took A in an
    earlier term against grades in B of everyone else who took B
    """
    takes = _first_takes(histories, end_term)
    courses = sorted(takes)
    graph = DependencyGraph(alpha, min_n)
    for b in courses:
        students = sorted(takes[b])
        b_terms = np.array([takes[b][s][0] for s in students], dtype=np.float64)
        b_grades = np.array([takes[b][s][1] for s in students], dtype=np.float64)
        for a in courses:
            if a == b:
                continue
            a_takes = takes[a]
            a_terms = np.array([a_takes[s][0] if s in a_takes else np.inf for s in students])
            before = a_terms < b_terms
            n_with = int(before.sum())
            if n_with < min_n or len(students) - n_with < min_n:
                continue
            u, p = mann_whitney_u(b_grades[before], b_grades[~before])
            graph.add_test(a, b, u, p)
    _log.info("dependency graph: %d pairs tested, %d edges at alpha=%g", len(graph.tests), len(graph.edges), alpha)
    return graph


def depgraph_rank(graph: DependencyGraph, context: Iterable[str], candidates: Iterable[str]) -> Ranked:
    """Score = number of distinct context courses with an edge into the candidate"""
    ctx = set(context)
    return rank_scores({c: float(len(graph.incoming.get(c, set()) & ctx)) for c in candidates})


class DependencyRecommender:
    name = "depgraph"

    def __init__(self, graph: DependencyGraph):
        self.graph = graph

    def score(self, query: StudentQuery, candidates: Iterable[str]) -> Dict[str, float]:
        return dict(depgraph_rank(self.graph, query.context, candidates))


def recovery_rates(graph: DependencyGraph, planted: Iterable[Tuple[str, str]], courses: Sequence[str]) -> Tuple[float, float]:
    """(share of planted edges found, share of non-planted ordered pairs flagged)"""
    planted_set = set(planted)
    found = sum(1 for e in planted_set if e in graph.edges)
    recall = found / len(planted_set) if planted_set else 1.0
    n_other = len(courses) * (len(courses) - 1) - len(planted_set)
    false_pos = len(graph.edges - planted_set)
    return recall, (false_pos / n_other if n_other > 0 else 0.0)
