"""
SVD Embeddings
Previous/subsequent co-occurrence counts factorized by truncated SVD
"""
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy import sparse as sp
from scipy.sparse.linalg import svds
from sklearn.preprocessing import normalize

from app.core.exceptions import ConfigError, EmptyProfileError
from app.core.logging import get_logger
from app.models.schemas import StudentQuery, TrainingInstance, Variant
from app.services.corpus import course_vocabulary
from app.services.scoring import Ranked, dot_scores, mean_profile, rank_scores

_log = get_logger(__name__)

DENSE_LIMIT = 500
SVDS_TOL = 1e-10
SVDS_MAXITER = 1000

MatrixLike = Union[np.ndarray, sp.spmatrix]


class CooccurrenceMatrix:
    """
    Counts of context course i preceding target course j

    ``good`` and ``bad`` hold n+ and n- separately; ``matrix`` combines
    them according to the variant.
    """

    def __init__(self, variant: Variant, courses: Sequence[str], good: sp.csr_matrix, bad: sp.csr_matrix):
        self.variant = Variant(variant)
        self.courses = list(courses)
        self.index: Dict[str, int] = {c: i for i, c in enumerate(self.courses)}
        self.good = good
        self.bad = bad

    @property
    def matrix(self) -> sp.csr_matrix:
        if self.variant is Variant.PLUS:
            return self.good.copy()
        if self.variant is Variant.PLUSMINUS:
            return (self.good - self.bad).tocsr()
        return (self.good + self.bad).tocsr()

    def entry(self, i: str, j: str) -> float:
        return float(self.matrix[self.index[i], self.index[j]])


def build_cooccurrence(
    instances: Sequence[TrainingInstance],
    variant: Variant,
    courses: Optional[Sequence[str]] = None,
) -> CooccurrenceMatrix:
    """
    Count (context course, target course) events over training instances

    A pair counts at most once per instance, so one student adds at most one
    per pair per target term.
    """
    courses = list(courses) if courses is not None else course_vocabulary(instances)
    index = {c: i for i, c in enumerate(courses)}
    n = len(courses)
    rows = {True: [], False: []}
    cols = {True: [], False: []}
    for inst in instances:
        ctx = [index[c] for c in sorted(set(inst.context)) if c in index]
        for target, is_good in [(t, True) for t in inst.good] + [(t, False) for t in inst.bad]:
            j = index.get(target)
            if j is None:
                continue
            rows[is_good].extend(ctx)
            cols[is_good].extend([j] * len(ctx))

    def assemble(flag: bool) -> sp.csr_matrix:
        data = np.ones(len(rows[flag]), dtype=np.float64)
        return sp.coo_matrix((data, (rows[flag], cols[flag])), shape=(n, n)).tocsr()

    good, bad = assemble(True), assemble(False)
    _log.debug("co-occurrence %s: %d courses, %d nonzero", variant, n, good.nnz + bad.nnz)
    return CooccurrenceMatrix(variant, courses, good, bad)


def l1_scale_rows(matrix: MatrixLike) -> MatrixLike:
    """Divide each row by its L1 norm; all-zero rows stay zero"""
    if sp.issparse(matrix):
        return normalize(matrix.astype(np.float64), norm="l1", axis=1).tocsr()
    return normalize(np.asarray(matrix, dtype=np.float64), norm="l1", axis=1)


class SvdEmbedding:
    """P = U_d sqrt(S_d) previous-course rows, S = V_d sqrt(S_d) subsequent-course rows"""

    kind = "svd"

    def __init__(
        self,
        P: np.ndarray,
        S: np.ndarray,
        sigma: np.ndarray,
        courses: Optional[Sequence[str]] = None,
        variant: Variant = Variant.PLUSMINUS,
    ):
        self.P = np.asarray(P, dtype=np.float64)
        self.S = np.asarray(S, dtype=np.float64)
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self.courses = list(courses) if courses is not None else [str(i) for i in range(self.P.shape[0])]
        self.index: Dict[str, int] = {c: i for i, c in enumerate(self.courses)}
        self.variant = Variant(variant)

    @property
    def d(self) -> int:
        return int(self.sigma.shape[0])

    def reconstruct(self) -> np.ndarray:
        return self.P @ self.S.T


def _fix_signs(U: np.ndarray, Vt: np.ndarray):
    for k in range(U.shape[1]):
        if U[np.argmax(np.abs(U[:, k])), k] < 0:
            U[:, k] = -U[:, k]
            Vt[k, :] = -Vt[k, :]
    return U, Vt


def truncated_svd(
    matrix: MatrixLike,
    d: int,
    seed: int = 0,
    courses: Optional[Sequence[str]] = None,
    variant: Variant = Variant.PLUSMINUS,
) -> SvdEmbedding:
    """Top-d singular triplets split symmetrically into two embedding matrices"""
    shape = matrix.shape
    limit = min(shape)
    if d < 1 or d > limit:
        raise ConfigError(f"svd dimension d={d} must lie in [1, {limit}]")

    if max(shape) <= DENSE_LIMIT or d >= limit:
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=np.float64)
        U, s, Vt = np.linalg.svd(dense, full_matrices=False)
        U, s, Vt = U[:, :d], s[:d], Vt[:d]
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.uniform(-1.0, 1.0, size=limit)
        U, s, Vt = svds(sp.csr_matrix(matrix, dtype=np.float64), k=d, tol=SVDS_TOL, maxiter=SVDS_MAXITER, v0=v0)
        order = np.argsort(-s, kind="stable")
        U, s, Vt = U[:, order], s[order], Vt[order]

    U, Vt = _fix_signs(np.array(U), np.array(Vt))
    root = np.sqrt(np.clip(s, 0.0, None))
    return SvdEmbedding(U * root, Vt.T * root, s, courses=courses, variant=variant)


def svd_rank(embedding: SvdEmbedding, context: Iterable[str], candidates: Iterable[str]) -> Ranked:
    """Average the previous-course rows of the context and rank candidates by dot product"""
    profile, known = mean_profile(embedding.P, embedding.index, context)
    if not known:
        raise EmptyProfileError("no context course is in the svd vocabulary")
    return rank_scores(dot_scores(profile, embedding.S, embedding.index, candidates))


def fit_svd(
    instances: Sequence[TrainingInstance],
    variant: Variant,
    d: int,
    seed: int = 0,
    courses: Optional[Sequence[str]] = None,
) -> SvdEmbedding:
    cooc = build_cooccurrence(instances, variant, courses)
    _log.info("fitting svd-%s with d=%d on %d courses", Variant(variant).value, d, len(cooc.courses))
    return truncated_svd(l1_scale_rows(cooc.matrix), d, seed=seed, courses=cooc.courses, variant=variant)


class SvdRecommender:
    """Backend wrapper around an SvdEmbedding"""

    def __init__(self, embedding: SvdEmbedding):
        self.embedding = embedding
        self.name = f"svd-{embedding.variant.value}"

    @property
    def courses(self) -> List[str]:
        return self.embedding.courses

    def score(self, query: StudentQuery, candidates: Iterable[str]) -> Dict[str, float]:
        return dict(svd_rank(self.embedding, query.context, candidates))
