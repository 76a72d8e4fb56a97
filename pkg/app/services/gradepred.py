"""
Grade Prediction
Knowledge-state regression (provided/required knowledge per course) and a
regularized bias baseline behind one predictor interface
"""
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy import optimize
from scipy import sparse as sp
from tqdm import tqdm

from app.core.config import settings
from app.core.exceptions import ConfigError, EmptyProfileError, TrainingDivergenceError
from app.core.logging import get_logger
from app.models.schemas import GradePrediction, StudentQuery, TrainingInstance

_log = get_logger(__name__)

MAX_GRAD_NORM = 1.0
INIT_SCALE = 0.01
OPTIMIZERS = ("lbfgs", "momentum")

Params = Dict[str, np.ndarray]


class BiasBaseline:
    """global mean + student offset + course offset, clipped to the observed range +-1"""

    kind = "bias"

    def __init__(
        self,
        mu: float,
        student_offsets: Dict[str, float],
        course_offsets: Dict[str, float],
        low: float,
        high: float,
        lambda_b: float = 5.0,
    ):
        self.mu = mu
        self.student_offsets = student_offsets
        self.course_offsets = course_offsets
        self.low = low
        self.high = high
        self.lambda_b = lambda_b

    def predict(self, student: str, course: str) -> float:
        value = self.mu + self.student_offsets.get(student, 0.0) + self.course_offsets.get(course, 0.0)
        return float(np.clip(value, self.low - 1.0, self.high + 1.0))


def fit_bias_baseline(grades: Iterable[Tuple[str, str, float]], lambda_b: float = 5.0) -> BiasBaseline:
    """
    Shrunken offsets: student offsets first, then course offsets on the residuals

    Args:
        grades: (student, course, points) observations
        lambda_b: pseudo-count pulling every offset toward zero
    """
    rows = list(grades)
    if not rows:
        raise EmptyProfileError("no training grades for the bias baseline")
    points = np.array([g for _, _, g in rows], dtype=np.float64)
    mu = float(points.mean())

    by_student: Dict[str, List[float]] = defaultdict(list)
    for student, _, g in rows:
        by_student[student].append(g - mu)
    b_s = {s: sum(v) / (len(v) + lambda_b) for s, v in by_student.items()}

    by_course: Dict[str, List[float]] = defaultdict(list)
    for student, course, g in rows:
        by_course[course].append(g - mu - b_s[student])
    b_c = {c: sum(v) / (len(v) + lambda_b) for c, v in by_course.items()}

    return BiasBaseline(mu, b_s, b_c, float(points.min()), float(points.max()), lambda_b)


class KnowledgeModel:
    """
    Provided and required knowledge vectors per course

    A student's knowledge state is the grade-weighted sum of the provided
    vectors of earlier courses; the predicted grade for a course is that state
    dotted with the course's required vector plus a global bias.
    """

    kind = "knowledge"

    def __init__(
        self,
        provided: np.ndarray,
        required: np.ndarray,
        bias: float,
        courses: Sequence[str],
        weight_offset: float = 0.0,
        fallback: Optional[BiasBaseline] = None,
    ):
        self.provided = np.asarray(provided, dtype=np.float64)
        self.required = np.asarray(required, dtype=np.float64)
        self.bias = float(bias)
        self.courses = list(courses)
        self.index: Dict[str, int] = {c: i for i, c in enumerate(self.courses)}
        self.weight_offset = float(weight_offset)
        self.fallback = fallback
        self.train_rmse: Optional[float] = None

    @property
    def k(self) -> int:
        return int(self.provided.shape[1])


def knowledge_state(model: KnowledgeModel, prior_grades: Sequence[Tuple[str, float]]) -> np.ndarray:
    if not prior_grades:
        raise EmptyProfileError("knowledge state needs at least one prior course")
    state = np.zeros(model.k)
    for course, points in prior_grades:
        i = model.index.get(course)
        if i is not None:
            state += (points - model.weight_offset) * model.provided[i]
    return state


def predict_grade(model: KnowledgeModel, state: np.ndarray, course: str, student: str = "") -> GradePrediction:
    i = model.index.get(course)
    if i is None:
        value = model.fallback.predict(student, course) if model.fallback else model.bias
        _log.debug("no knowledge vector for %s, using bias prediction", course)
        return GradePrediction(student=student, course=course, predicted=value, fallback=True)
    return GradePrediction(
        student=student, course=course, predicted=float(state @ model.required[i] + model.bias)
    )


# ==================== Fitting ====================

class KnowledgeData:
    """Design of a knowledge-model fit: weighted prior matrix, target course and grade per row"""

    def __init__(self, A: sp.csr_matrix, targets: np.ndarray, grades: np.ndarray):
        self.A = A
        self.targets = targets
        self.grades = grades

    @classmethod
    def from_instances(
        cls,
        instances: Sequence[TrainingInstance],
        index: Dict[str, int],
        weight_offset: float = 0.0,
    ) -> "KnowledgeData":
        rows, cols, vals, targets, grades = [], [], [], [], []
        r = 0
        for inst in instances:
            for course, points in inst.target_grades:
                if course not in index:
                    continue
                for prior, w in inst.prior_grades:
                    if prior in index:
                        rows.append(r)
                        cols.append(index[prior])
                        vals.append(w - weight_offset)
                targets.append(index[course])
                grades.append(points)
                r += 1
        A = sp.coo_matrix((vals, (rows, cols)), shape=(r, len(index))).tocsr()
        return cls(A, np.asarray(targets, dtype=np.int64), np.asarray(grades, dtype=np.float64))


def knowledge_loss(params: Params, data: KnowledgeData, l2: float) -> float:
    """Half mean squared error plus half L2 on both knowledge matrices"""
    state = data.A @ params["provided"]
    err = np.sum(state * params["required"][data.targets], axis=1) + params["bias"][0] - data.grades
    reg = np.sum(params["provided"] ** 2) + np.sum(params["required"] ** 2)
    return float(0.5 * np.mean(err ** 2) + 0.5 * l2 * reg)


def knowledge_gradients(params: Params, data: KnowledgeData, l2: float) -> Params:
    n = len(data.grades)
    P, R = params["provided"], params["required"]
    state = data.A @ P
    R_t = R[data.targets]
    err = (np.sum(state * R_t, axis=1) + params["bias"][0] - data.grades) / n

    g_R = np.zeros_like(R)
    np.add.at(g_R, data.targets, err[:, None] * state)
    g_P = data.A.T @ (err[:, None] * R_t)
    return {
        "provided": np.asarray(g_P) + l2 * P,
        "required": g_R + l2 * R,
        "bias": np.array([err.sum()]),
    }


PARAM_NAMES = ("provided", "required", "bias")


def _flatten(params: Params) -> np.ndarray:
    return np.concatenate([params[name].ravel() for name in PARAM_NAMES])


def _unflatten(x: np.ndarray, shapes: Dict[str, Tuple[int, ...]]) -> Params:
    params, start = {}, 0
    for name in PARAM_NAMES:
        size = int(np.prod(shapes[name]))
        params[name] = x[start:start + size].reshape(shapes[name])
        start += size
    return params


def _descend_momentum(params: Params, data: KnowledgeData, epochs: int, learning_rate: float, momentum: float, l2: float) -> Params:
    velocity = {name: np.zeros_like(value) for name, value in params.items()}
    for epoch in tqdm(range(1, epochs + 1), desc="knowledge", disable=not settings.SHOW_PROGRESS):
        grads = knowledge_gradients(params, data, l2)
        norm = np.sqrt(sum(np.sum(g ** 2) for g in grads.values()))
        scale = MAX_GRAD_NORM / norm if norm > MAX_GRAD_NORM else 1.0
        for name in params:
            velocity[name] = momentum * velocity[name] + learning_rate * scale * grads[name]
            params[name] -= velocity[name]
        if not all(np.isfinite(v).all() for v in params.values()):
            raise TrainingDivergenceError(epoch, model="knowledge model")
    return params


def _descend_lbfgs(params: Params, data: KnowledgeData, epochs: int, l2: float) -> Params:
    shapes = {name: params[name].shape for name in PARAM_NAMES}
    bar = tqdm(total=epochs, desc="knowledge", disable=not settings.SHOW_PROGRESS)

    def objective(x: np.ndarray) -> Tuple[float, np.ndarray]:
        current = _unflatten(x, shapes)
        return knowledge_loss(current, data, l2), _flatten(knowledge_gradients(current, data, l2))

    result = optimize.minimize(
        objective,
        _flatten(params),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": epochs},
        callback=lambda _: bar.update(1),
    )
    bar.close()
    if not np.isfinite(result.x).all() or not np.isfinite(result.fun):
        raise TrainingDivergenceError(int(result.nit), model="knowledge model")
    _log.debug("L-BFGS stopped after %d iterations: %s", result.nit, result.message)
    return _unflatten(result.x, shapes)


def fit_knowledge(
    instances: Sequence[TrainingInstance],
    courses: Sequence[str],
    k: int = 10,
    epochs: int = 300,
    learning_rate: float = 0.01,
    seed: int = 42,
    momentum: float = 0.9,
    l2: float = 0.01,
    centered: bool = False,
    fallback: Optional[BiasBaseline] = None,
    optimizer: str = "lbfgs",
) -> KnowledgeModel:
    """
    Minimize squared grade error plus L2 from a small random start

    ``optimizer="lbfgs"`` runs quasi-Newton descent for at most ``epochs``
    iterations; ``"momentum"`` runs ``epochs`` full-batch momentum steps at
    ``learning_rate`` with clipped gradients.
    """
    if optimizer not in OPTIMIZERS:
        raise ConfigError(f"unknown knowledge optimizer {optimizer!r}")
    index = {c: i for i, c in enumerate(courses)}
    observed = [p for inst in instances for c, p in inst.target_grades if c in index]
    if not observed:
        raise EmptyProfileError("no training grades for the knowledge model")
    offset = float(np.mean([p for inst in instances for _, p in inst.prior_grades])) if centered else 0.0
    data = KnowledgeData.from_instances(instances, index, offset)

    rng = np.random.default_rng(seed)
    params: Params = {
        "provided": rng.normal(0.0, INIT_SCALE, size=(len(courses), k)),
        "required": rng.normal(0.0, INIT_SCALE, size=(len(courses), k)),
        "bias": np.array([float(np.mean(observed))]),
    }

    _log.info(
        "fitting knowledge model (%s): %d courses, k=%d, %d grades", optimizer, len(courses), k, len(observed)
    )
    if optimizer == "lbfgs":
        params = _descend_lbfgs(params, data, epochs, l2)
    else:
        params = _descend_momentum(params, data, epochs, learning_rate, momentum, l2)

    model = KnowledgeModel(params["provided"], params["required"], params["bias"][0], courses, offset, fallback)
    state = data.A @ model.provided
    pred = np.sum(state * model.required[data.targets], axis=1) + model.bias
    model.train_rmse = float(np.sqrt(np.mean((pred - data.grades) ** 2)))
    _log.info("knowledge model training RMSE %.4f", model.train_rmse)
    return model


# ==================== Predictor interface ====================

class GradePredictor(Protocol):
    name: str

    def predict(self, query: StudentQuery, course: str) -> GradePrediction:
        ...


class KnowledgePredictor:
    name = "ckrm"

    def __init__(self, model: KnowledgeModel):
        self.model = model

    def predict(self, query: StudentQuery, course: str) -> GradePrediction:
        state = knowledge_state(self.model, query.prior_grades)
        return predict_grade(self.model, state, course, query.student)


class BiasPredictor:
    name = "bias"

    def __init__(self, baseline: BiasBaseline):
        self.baseline = baseline

    def predict(self, query: StudentQuery, course: str) -> GradePrediction:
        return GradePrediction(
            student=query.student,
            course=course,
            predicted=self.baseline.predict(query.student, course),
            fallback=course not in self.baseline.course_offsets,
        )
