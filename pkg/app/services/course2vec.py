"""
Course2vec
CBOW-style log-linear model over previous/subsequent course roles, trained by
SGD on a restricted softmax with good targets pushed up and (under the
plusminus variant) bad targets pushed down
"""
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp
from tqdm import tqdm

from app.core.config import settings
from app.core.exceptions import EmptyProfileError, TrainingDivergenceError
from app.core.logging import get_logger
from app.models.schemas import StudentQuery, TrainConfig, TrainingInstance, Variant
from app.services.corpus import course_vocabulary
from app.services.scoring import Ranked, dot_scores, rank_scores

_log = get_logger(__name__)

MIN_LR_FRACTION = 1e-4


class EmbeddingModel:
    """W holds previous-course rows, Wp subsequent-course rows"""

    kind = "course2vec"

    def __init__(self, W: np.ndarray, Wp: np.ndarray, courses: Sequence[str], variant: Variant = Variant.PLUSMINUS):
        self.W = np.asarray(W, dtype=np.float64)
        self.Wp = np.asarray(Wp, dtype=np.float64)
        self.courses = list(courses)
        self.index: Dict[str, int] = {c: i for i, c in enumerate(self.courses)}
        self.variant = Variant(variant)
        self.training_log: List[Dict[str, float]] = []

    @property
    def d(self) -> int:
        return int(self.W.shape[1])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.W).all() and np.isfinite(self.Wp).all())


def context_profile(model: EmbeddingModel, context: Iterable[str]) -> np.ndarray:
    """h = average of W rows over the known context courses"""
    rows = [model.index[c] for c in context if c in model.index]
    if not rows:
        raise EmptyProfileError("no context course is in the course2vec vocabulary")
    return model.W[rows].mean(axis=0)


def softmax_prob(model: EmbeddingModel, h: np.ndarray, target: str, denominator: Optional[Sequence[str]] = None) -> float:
    """P(target | h) normalized over ``denominator`` (default the whole vocabulary)"""
    den = list(denominator) if denominator is not None else model.courses
    logits = model.Wp[[model.index[c] for c in den]] @ h
    return float(np.exp(logits[den.index(target)] - logsumexp(logits)))


def c2v_rank(model: EmbeddingModel, context: Iterable[str], candidates: Iterable[str]) -> Ranked:
    h = context_profile(model, context)
    return rank_scores(dot_scores(h, model.Wp, model.index, candidates))


# ==================== Per-step objective and gradients ====================

def _context_weights(context_idx: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    rows, counts = np.unique(np.asarray(context_idx, dtype=np.int64), return_counts=True)
    return rows, counts / counts.sum()


def _forward(W, Wp, rows, weights, target, denominator):
    h = weights @ W[rows]
    den = np.asarray(denominator, dtype=np.int64)
    logits = Wp[den] @ h
    lse = logsumexp(logits)
    p = np.exp(logits - lse)
    t_pos = int(np.flatnonzero(den == target)[0])
    return h, den, p, logits[t_pos] - lse, t_pos


def step_objective(
    W: np.ndarray,
    Wp: np.ndarray,
    context_idx: Sequence[int],
    target: int,
    denominator: Sequence[int],
    sign: float = 1.0,
) -> float:
    """sign * log softmax of ``target`` over ``denominator`` given the context average"""
    rows, weights = _context_weights(context_idx)
    _, _, _, log_p, _ = _forward(W, Wp, rows, weights, target, denominator)
    return float(sign * log_p)


def _step_grads(W, Wp, rows, weights, target, denominator, sign):
    h, den, p, log_p, t_pos = _forward(W, Wp, rows, weights, target, denominator)
    coef = -p
    coef[t_pos] += 1.0
    g_wp = sign * coef[:, None] * h[None, :]
    g_h = sign * (Wp[target] - p @ Wp[den])
    g_w = weights[:, None] * g_h[None, :]
    return float(sign * log_p), den, g_wp, g_w


def step_gradients(
    W: np.ndarray,
    Wp: np.ndarray,
    context_idx: Sequence[int],
    target: int,
    denominator: Sequence[int],
    sign: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Unclipped gradients of ``step_objective`` as full-shape (dW, dWp)"""
    rows, weights = _context_weights(context_idx)
    _, den, g_wp, g_w = _step_grads(W, Wp, rows, weights, target, denominator, sign)
    dW = np.zeros_like(W)
    dWp = np.zeros_like(Wp)
    dW[rows] = g_w
    np.add.at(dWp, den, g_wp)
    return dW, dWp


# ==================== Training ====================

class RelationStats:
    """Good/bad counts of each target after each previous course, pooled over students"""

    def __init__(self, instances: Sequence[TrainingInstance]):
        self.counts: Dict[str, Dict[str, List[int]]] = defaultdict(lambda: defaultdict(lambda: [0, 0]))
        for inst in instances:
            for prev in set(inst.context):
                for c in inst.good:
                    self.counts[prev][c][0] += 1
                for c in inst.bad:
                    self.counts[prev][c][1] += 1

    def known(self, context: Iterable[str]) -> Dict[str, List[int]]:
        """Counts summed over the distinct context courses"""
        pooled: Dict[str, List[int]] = defaultdict(lambda: [0, 0])
        for prev in sorted(set(context)):
            for c, (n_good, n_bad) in self.counts.get(prev, {}).items():
                pooled[c][0] += n_good
                pooled[c][1] += n_bad
        return dict(pooled)


class _Relations(NamedTuple):
    counts: Dict[str, List[int]]
    idx: np.ndarray
    freq: np.ndarray


def _relations(stats: RelationStats, context: Sequence[str], index: Dict[str, int]) -> _Relations:
    counts = stats.known(context)
    known = sorted(c for c in counts if c in index)
    return _Relations(
        counts,
        np.array([index[c] for c in known], dtype=np.int64),
        np.array([sum(counts[c]) for c in known], dtype=np.float64),
    )


def _targets(inst: TrainingInstance, variant: Variant) -> List[str]:
    if variant is Variant.PLUS:
        return sorted(inst.good)
    return sorted(inst.good | inst.bad)


def _sign(rng: np.random.Generator, variant: Variant, target: str, inst: TrainingInstance, counts: List[int]) -> float:
    if variant is not Variant.PLUSMINUS:
        return 1.0
    n_good, n_bad = counts
    if n_good and n_bad:
        return 1.0 if rng.random() < n_good / (n_good + n_bad) else -1.0
    return 1.0 if target in inst.good else -1.0


def _denominator(
    rng: np.random.Generator,
    n_courses: int,
    target: int,
    context_idx: Sequence[int],
    relations: _Relations,
    config: TrainConfig,
) -> List[int]:
    if config.full_softmax:
        return list(range(n_courses))
    # rare relations enter with probability freq / threshold
    keep = (relations.freq >= config.freq_threshold) | (
        rng.random(relations.freq.size) < relations.freq / config.freq_threshold
    )
    keep &= relations.idx != target
    den = [target] + relations.idx[keep].tolist()
    if len(den) < config.samples:
        blocked = np.concatenate([np.asarray(den, dtype=np.int64), np.asarray(context_idx, dtype=np.int64), relations.idx])
        pool = np.setdiff1d(np.arange(n_courses, dtype=np.int64), blocked)
        take = min(config.samples - len(den), pool.size)
        if take:
            den.extend(int(i) for i in rng.choice(pool, size=take, replace=False))
    return den


def train(
    instances: Sequence[TrainingInstance],
    config: TrainConfig,
    courses: Optional[Sequence[str]] = None,
    log_path: Optional[Path] = None,
) -> EmbeddingModel:
    """Fit W and Wp by stochastic gradient ascent on the signed restricted-softmax objective"""
    variant = Variant(config.variant)
    courses = list(courses) if courses is not None else course_vocabulary(instances)
    index = {c: i for i, c in enumerate(courses)}
    rng = np.random.default_rng(config.seed)
    n, d = len(courses), config.d

    model = EmbeddingModel(
        rng.uniform(-0.5 / d, 0.5 / d, size=(n, d)),
        np.zeros((n, d)),
        courses,
        variant,
    )
    usable = [inst for inst in instances if any(c in index for c in inst.context)]
    stats = RelationStats(usable)
    plan = [
        (inst, [t for t in _targets(inst, variant) if t in index], _relations(stats, inst.context, index))
        for inst in usable
    ]
    steps_per_epoch = sum(len(targets) for _, targets, _ in plan)
    total = max(1, steps_per_epoch * config.epochs)
    _log.info(
        "training course2vec-%s: %d courses, %d instances, %d steps/epoch",
        variant.value, n, len(plan), steps_per_epoch,
    )

    W, Wp = model.W, model.Wp
    step = 0
    epochs = tqdm(range(1, config.epochs + 1), desc="course2vec", disable=not settings.SHOW_PROGRESS)
    for epoch in epochs:
        order = rng.permutation(len(plan)) if config.shuffle else np.arange(len(plan))
        objective_sum, n_steps = 0.0, 0
        lr = config.learning_rate
        for pos in order:
            inst, targets, relations = plan[pos]
            context_idx = [index[c] for c in inst.context if c in index]
            rows, weights = _context_weights(context_idx)
            for target in targets:
                lr = config.learning_rate * (1.0 - (1.0 - MIN_LR_FRACTION) * step / total)
                sign = _sign(rng, variant, target, inst, relations.counts.get(target, [0, 0]))
                den = _denominator(rng, n, index[target], context_idx, relations, config)
                obj, den_idx, g_wp, g_w = _step_grads(W, Wp, rows, weights, index[target], den, sign)

                norm = np.sqrt(np.sum(g_wp ** 2) + np.sum(g_w ** 2))
                if norm > config.max_grad_norm:
                    scale = config.max_grad_norm / norm
                    g_wp, g_w = g_wp * scale, g_w * scale
                np.add.at(Wp, den_idx, lr * g_wp)
                W[rows] += lr * g_w

                if not np.isfinite(obj) or not (np.isfinite(W[rows]).all() and np.isfinite(Wp[den_idx]).all()):
                    raise TrainingDivergenceError(epoch, step, "course2vec")
                objective_sum += obj
                n_steps += 1
                step += 1

        mean_obj = objective_sum / n_steps if n_steps else 0.0
        model.training_log.append({"epoch": epoch, "objective": mean_obj, "learning_rate": lr})
        _log.debug("epoch %d: mean objective %.6f, lr %.6g", epoch, mean_obj, lr)

    if log_path is not None:
        write_training_log(model, log_path)
    return model


def write_training_log(model: EmbeddingModel, path: Path) -> Path:
    """One JSON object per epoch"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(model.training_log, columns=["epoch", "objective", "learning_rate"])
    frame.to_json(path, orient="records", lines=True)
    return path


class Course2vecRecommender:
    """Backend wrapper around an EmbeddingModel"""

    def __init__(self, model: EmbeddingModel):
        self.model = model
        self.name = f"c2v-{model.variant.value}"

    @property
    def courses(self) -> List[str]:
        return self.model.courses

    def score(self, query: StudentQuery, candidates: Iterable[str]) -> Dict[str, float]:
        return dict(c2v_rank(self.model, query.context, candidates))
