"""
Scoring helpers shared by every recommendation backend
"""
from typing import Dict, Iterable, List, Mapping, Protocol, Sequence, Tuple

import numpy as np

from app.models.schemas import StudentQuery

Ranked = List[Tuple[str, float]]


class RecommendationBackend(Protocol):
    """Anything that scores candidate courses for a student query"""

    name: str

    def score(self, query: StudentQuery, candidates: Iterable[str]) -> Dict[str, float]:
        ...


def rank_scores(scores: Mapping[str, float]) -> Ranked:
    """Sort by score descending, ties by ascending course id"""
    return sorted(((c, float(s)) for c, s in scores.items()), key=lambda cs: (-cs[1], cs[0]))


def standardize(values: Sequence[float]) -> np.ndarray:
    """Zero mean, unit (population) variance; constant input maps to zeros"""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return arr
    std = arr.std()
    if not np.isfinite(std) or std < 1e-12:
        return np.zeros_like(arr)
    return (arr - arr.mean()) / std


def mean_profile(matrix: np.ndarray, index: Mapping[str, int], context: Iterable[str]) -> Tuple[np.ndarray, int]:
    """Average of the rows of ``matrix`` for known context courses, and how many were known"""
    rows = [index[c] for c in context if c in index]
    if not rows:
        return np.zeros(matrix.shape[1]), 0
    return matrix[rows].mean(axis=0), len(rows)


def dot_scores(
    profile: np.ndarray,
    targets: np.ndarray,
    index: Mapping[str, int],
    candidates: Iterable[str],
) -> Dict[str, float]:
    """profile . targets[c] per candidate; courses outside the vocabulary score 0"""
    out: Dict[str, float] = {}
    for c in candidates:
        i = index.get(c)
        out[c] = float(targets[i] @ profile) if i is not None else 0.0
    return out
