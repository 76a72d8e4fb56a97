"""
Pydantic Schemas for transcripts, training instances, predictions and reports
"""
from enum import Enum
from functools import cached_property
from typing import Dict, FrozenSet, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

# 11-point letter scale, three decimals
GRADE_POINTS: Dict[str, float] = {
    "A": 4.0,
    "A-": 3.667,
    "B+": 3.333,
    "B": 3.0,
    "B-": 2.667,
    "C+": 2.333,
    "C": 2.0,
    "C-": 1.667,
    "D+": 1.333,
    "D": 1.0,
    "F": 0.0,
}

# Context membership needs a grade strictly above this
CONTEXT_MIN_POINTS = GRADE_POINTS["D+"]

# Grades that are not on the letter scale and get dropped on ingest
PASS_FAIL_MARKS = frozenset({"S", "N"})


class Grade(str, Enum):
    """Letter grade; ``points`` is the numeric value on the 4.0 scale"""

    A = "A"
    A_MINUS = "A-"
    B_PLUS = "B+"
    B = "B"
    B_MINUS = "B-"
    C_PLUS = "C+"
    C = "C"
    C_MINUS = "C-"
    D_PLUS = "D+"
    D = "D"
    F = "F"

    @property
    def points(self) -> float:
        return GRADE_POINTS[self.value]

    @classmethod
    def from_points(cls, points: float) -> "Grade":
        for letter, value in GRADE_POINTS.items():
            if abs(value - points) < 1e-9:
                return cls(letter)
        raise ValueError(f"{points} is not on the letter scale")

    @classmethod
    def nearest(cls, points: float) -> "Grade":
        """Quantize an arbitrary value to the closest letter"""
        letter = min(GRADE_POINTS, key=lambda g: (abs(GRADE_POINTS[g] - points), -GRADE_POINTS[g]))
        return cls(letter)


class Variant(str, Enum):
    """How good and bad subsequent courses enter a model"""

    PLUS = "plus"
    PLUSMINUS = "plusminus"
    PLUSPLUS = "plusplus"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True)


class EnrollmentRecord(_Frozen):
    """One transcript row"""

    student: str = Field(..., description="Student id")
    course: str = Field(..., description="Course id")
    term: int = Field(..., description="Monotone term index")
    grade: Grade = Field(..., description="Letter grade")
    major: str = Field(default="", description="Major id")
    credits: float = Field(default=3.0, ge=0, description="Course credits")


class Enrollment(_Frozen):
    course: str
    grade: Grade
    credits: float = 3.0

    @property
    def points(self) -> float:
        return self.grade.points


class TermRecord(_Frozen):
    term: int
    enrollments: Tuple[Enrollment, ...]


class StudentHistory(_Frozen):
    """Term-ordered transcript of one student"""

    student: str
    major: str = ""
    terms: Tuple[TermRecord, ...]

    @model_validator(mode="after")
    def _terms_increase(self):
        indices = [t.term for t in self.terms]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"terms of student {self.student} are not strictly increasing")
        return self

    @cached_property
    def prior_means(self) -> Tuple[Optional[float], ...]:
        """Mean numeric grade over all terms before each term (None for the first)"""
        means: List[Optional[float]] = []
        total, count = 0.0, 0
        for record in self.terms:
            means.append(total / count if count else None)
            for e in record.enrollments:
                total += e.points
                count += 1
        return tuple(means)

    @cached_property
    def final_gpa(self) -> Optional[float]:
        points = [e.points for t in self.terms for e in t.enrollments]
        return sum(points) / len(points) if points else None

    def position_of(self, term: int) -> int:
        """Number of terms strictly before ``term``"""
        return sum(1 for t in self.terms if t.term < term)


class StudentQuery(_Frozen):
    """What a recommender knows about a student at the start of a term"""

    student: str
    major: str = ""
    term: int
    context: Tuple[str, ...] = Field(default=(), description="Prior courses above D+, one entry per take")
    prior_grades: Tuple[Tuple[str, float], ...] = Field(default=(), description="All prior (course, points) takes")
    prior_mean: Optional[float] = None
    prior_credits: float = 0.0
    level: str = "freshman"

    @property
    def n_prior_courses(self) -> int:
        return len(self.prior_grades)


class TrainingInstance(StudentQuery):
    """Context plus the good and bad courses of one student-term"""

    position: int = Field(..., ge=2, description="1-based position of the target term")
    good: FrozenSet[str] = frozenset()
    bad: FrozenSet[str] = frozenset()
    target_grades: Tuple[Tuple[str, float], ...] = ()

    @model_validator(mode="after")
    def _check(self):
        if not self.context:
            raise ValueError("context must be non-empty")
        if self.good & self.bad:
            raise ValueError("a course cannot be both good and bad in one term")
        return self

    @property
    def targets(self) -> FrozenSet[str]:
        return self.good | self.bad


class GradePrediction(_Frozen):
    student: str
    course: str
    predicted: float
    fallback: bool = False


class TrainConfig(BaseModel):
    """Course2vec training parameters"""

    model_config = ConfigDict(extra="forbid")

    variant: Variant = Variant.PLUSMINUS
    d: int = Field(20, ge=1)
    samples: int = Field(5, ge=1)
    freq_threshold: int = Field(20, ge=1)
    epochs: int = Field(50, ge=1)
    learning_rate: float = Field(0.025, gt=0)
    seed: int = 42
    full_softmax: bool = False
    max_grad_norm: float = Field(5.0, gt=0)
    shuffle: bool = True


class SynthConfig(BaseModel):
    """Synthetic corpus generator parameters"""

    model_config = ConfigDict(extra="forbid")

    seed: int = 7
    majors: int = Field(2, ge=1)
    courses_per_major: int = Field(40, ge=2)
    students: int = Field(1000, ge=1)
    terms_per_student: int = Field(8, ge=2)
    start_spread: int = Field(6, ge=1)
    dag_density: float = Field(0.05, ge=0, le=1)
    prereq_window: int = Field(8, ge=1)
    delta: float = Field(1.0, ge=0)
    prep_bonus: float = Field(0.0, ge=0)
    sigma: float = Field(0.4, ge=0)
    ability_mean: float = 3.2
    ability_spread: float = Field(0.5, ge=0)
    exploration: float = Field(0.05, ge=0, le=1)
    difficulty_spread: float = Field(0.5, ge=0)
    popularity_spread: float = Field(0.5, ge=0)
    popularity_difficulty_corr: float = Field(0.1, ge=-1, le=1)
    load_min: int = Field(3, ge=1)
    load_max: int = Field(5, ge=1)
    retake_prob: float = Field(0.5, ge=0, le=1)
    offering_sparsity: float = Field(0.0, ge=0, lt=1)
    pass_fail_rate: float = Field(0.0, ge=0, le=1)

    @model_validator(mode="after")
    def _loads(self):
        if self.load_min > self.load_max:
            raise ValueError("load_min must not exceed load_max")
        return self


class RecommendationRow(BaseModel):
    """One line of ``recommend`` output"""

    student_id: str
    term: int
    rank: int
    course_id: str
    score: float
    backend: str


class TermEvaluation(BaseModel):
    """Recall and GPA-impact figures for one (student, term)"""

    method: str
    student: str
    major: str = ""
    term: int
    level: str = ""
    gpa_type: str = ""
    n_taken: int
    n_good: int
    n_bad: int
    good_hits: int
    bad_hits: int
    recall_good: Optional[float] = None
    recall_bad: Optional[float] = None
    recall_diff: Optional[float] = None
    pct_gpa_increase: Optional[float] = None
    pct_gpa_decrease: Optional[float] = None
    recommended: Tuple[str, ...] = ()

    @model_validator(mode="after")
    def _counts(self):
        if self.n_good + self.n_bad != self.n_taken:
            raise ValueError("good and bad counts must add up to the term load")
        return self


class MetricSummary(BaseModel):
    """Aggregated metrics over a set of term evaluations"""

    n_terms: int = 0
    n_terms_good: int = 0
    n_terms_bad: int = 0
    recall_good: Optional[float] = None
    recall_bad: Optional[float] = None
    recall_diff: Optional[float] = None
    pct_gpa_increase: Optional[float] = None
    pct_gpa_decrease: Optional[float] = None
    coverage_good: int = 0
    coverage_bad: int = 0


class GroupRow(MetricSummary):
    grouping: str
    group: str


class EvaluationSummary(MetricSummary):
    method: str
    partition: str = "test"
    mean_recommended_difficulty: Optional[float] = None
