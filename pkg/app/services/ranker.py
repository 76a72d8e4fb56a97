"""
Ranker
Candidate filtering, top-n recommendation and the hybrid grade x rank score
"""
import math
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import ConfigError, RecommendationError
from app.core.logging import get_logger
from app.models.schemas import StudentQuery
from app.services.corpus import Offerings, eligible_candidates, is_excluded
from app.services.gradepred import GradePredictor
from app.services.scoring import Ranked, RecommendationBackend, rank_scores, standardize

_log = get_logger(__name__)

MIN_PRIOR_COURSES = 3


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"hybrid alpha must lie in (0, 1), got {alpha}")


def hybrid_score(g_hat: float, r_hat: float, alpha: float) -> float:
    """sign(g)|g|^alpha * sign(r)|r|^(1-alpha)"""
    _check_alpha(alpha)
    r_sign = 1.0 if r_hat > 0 else (-1.0 if r_hat < 0 else 0.0)
    return math.copysign(abs(g_hat) ** alpha, g_hat) * abs(r_hat) ** (1.0 - alpha) * r_sign


class HybridBackend:
    """
    Combines a recommendation backend with a grade predictor

    Both score vectors are standardized before combining: over the query's
    candidate set by default, or over every candidate of every query sharing
    the target term when ``standardization="global"`` and ``fit_global`` ran.
    """

    def __init__(
        self,
        backend: RecommendationBackend,
        predictor: GradePredictor,
        alpha: float = 0.5,
        standardization: str = "query",
    ):
        _check_alpha(alpha)
        if standardization not in ("query", "global"):
            raise ConfigError(f"unknown standardization {standardization!r}")
        self.backend = backend
        self.predictor = predictor
        self.alpha = alpha
        self.standardization = standardization
        self.name = f"{predictor.name}+{backend.name}"
        self._global: Dict[int, Tuple[float, float, float, float]] = {}

    def _raw(self, query: StudentQuery, candidates: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        r = self.backend.score(query, candidates)
        r_vec = np.array([r[c] for c in candidates], dtype=np.float64)
        g_vec = np.array([self.predictor.predict(query, c).predicted for c in candidates], dtype=np.float64)
        return r_vec, g_vec

    def fit_global(self, queries: Iterable[Tuple[StudentQuery, Sequence[str]]]):
        """Pool raw scores per target term for global standardization"""
        pooled: Dict[int, List[Tuple[np.ndarray, np.ndarray]]] = defaultdict(list)
        for query, candidates in queries:
            candidates = sorted(candidates)
            if candidates:
                pooled[query.term].append(self._raw(query, candidates))
        for term, parts in pooled.items():
            r = np.concatenate([p[0] for p in parts])
            g = np.concatenate([p[1] for p in parts])
            self._global[term] = (r.mean(), r.std(), g.mean(), g.std())

    @staticmethod
    def _scale(values: np.ndarray, mean: float, std: float) -> np.ndarray:
        if std < 1e-12:
            return np.zeros_like(values)
        return (values - mean) / std

    def score(self, query: StudentQuery, candidates: Iterable[str]) -> Dict[str, float]:
        candidates = sorted(candidates)
        if not candidates:
            return {}
        r_vec, g_vec = self._raw(query, candidates)
        if self.standardization == "global" and query.term in self._global:
            r_mean, r_std, g_mean, g_std = self._global[query.term]
            r_hat, g_hat = self._scale(r_vec, r_mean, r_std), self._scale(g_vec, g_mean, g_std)
        else:
            r_hat, g_hat = standardize(r_vec), standardize(g_vec)
        # a constant side carries no ordering; rank by the other one alone
        if not r_hat.any():
            return dict(zip(candidates, g_hat.tolist()))
        if not g_hat.any():
            return dict(zip(candidates, r_hat.tolist()))
        return {c: hybrid_score(g, r, self.alpha) for c, g, r in zip(candidates, g_hat, r_hat)}


def hybrid_rank(
    backend: RecommendationBackend,
    predictor: GradePredictor,
    query: StudentQuery,
    candidates: Iterable[str],
    alpha: float,
) -> Ranked:
    return rank_scores(HybridBackend(backend, predictor, alpha).score(query, candidates))


def _check_filter(query: StudentQuery, term: int, offerings: Offerings, ranked: Ranked):
    offered = offerings.courses(term)
    for course, _ in ranked:
        prior = [p for c, p in query.prior_grades if c == course]
        if course not in offered or any(is_excluded(p, query.prior_mean) for p in prior):
            raise RecommendationError(f"course {course} violates the candidate filter for {query.student}")


def recommend(
    backend: RecommendationBackend,
    query: StudentQuery,
    term: int,
    n: int,
    offerings: Offerings,
    min_prior_courses: int = MIN_PRIOR_COURSES,
) -> Ranked:
    """Top-n eligible courses for a student at the start of ``term``"""
    if n < 1:
        raise RecommendationError(f"list size must be at least 1, got {n}")
    if query.n_prior_courses < min_prior_courses:
        raise RecommendationError(
            f"student {query.student} has {query.n_prior_courses} prior courses, need {min_prior_courses}"
        )
    candidates = eligible_candidates(query, term, offerings)
    if not candidates:
        _log.warning("no eligible candidates for student %s in term %d", query.student, term)
        return []
    ranked = rank_scores(backend.score(query, candidates))[:n]
    _check_filter(query, term, offerings, ranked)
    return ranked


class Recommender:
    """A backend bound to an offerings table"""

    def __init__(self, backend: RecommendationBackend, offerings: Offerings, min_prior_courses: int = MIN_PRIOR_COURSES):
        self.backend = backend
        self.offerings = offerings
        self.min_prior_courses = min_prior_courses

    @property
    def name(self) -> str:
        return self.backend.name

    def recommend(self, query: StudentQuery, term: int, n: int) -> Ranked:
        return recommend(self.backend, query, term, n, self.offerings, self.min_prior_courses)
