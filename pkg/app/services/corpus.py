"""
Corpus Service
Transcript ingestion, good/bad labeling, temporal splits and candidate filtering
"""
import math
from collections import defaultdict
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple

import pandas as pd

from app.core.exceptions import TranscriptParseError, UnknownGradeError
from app.core.logging import get_logger
from app.models.schemas import (
    CONTEXT_MIN_POINTS,
    GRADE_POINTS,
    PASS_FAIL_MARKS,
    Enrollment,
    EnrollmentRecord,
    Grade,
    StudentHistory,
    StudentQuery,
    TermRecord,
    TrainingInstance,
)
from app.services.table_utils import TableSource, TableUtils

_log = get_logger(__name__)

REQUIRED_COLUMNS = ("student_id", "course_id", "term", "grade_letter")
DEFAULT_CREDITS = 3.0
EPS = 1e-9

# Repeats are allowed only below both of these bars
RETAKE_MAX_POINTS = GRADE_POINTS["C+"]
RETAKE_MEAN_MARGIN = 1.0

# Upper credit bound (inclusive) of each academic level
LEVEL_BANDS: Tuple[Tuple[str, float], ...] = (
    ("freshman", 30.0),
    ("sophomore", 60.0),
    ("junior", 90.0),
)
SENIOR = "senior"
LEVELS = tuple(name for name, _ in LEVEL_BANDS) + (SENIOR,)


class TranscriptLoader:
    """Reads transcript tables into per-student histories"""

    def __init__(self):
        self.utils = TableUtils()
        self.rows_read: int = 0
        self.dropped_pass_fail: int = 0

    def read_records(self, source: TableSource) -> List[EnrollmentRecord]:
        df = self.utils.safe_read_table(source)
        missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
        if missing:
            raise TranscriptParseError(1, f"missing column(s): {', '.join(missing)}")

        has_major = "major" in df.columns
        has_credits = "credits" in df.columns
        records: List[EnrollmentRecord] = []
        self.rows_read = len(df)
        self.dropped_pass_fail = 0

        for idx, row in enumerate(df.itertuples(index=False)):
            line = idx + 2  # header is line 1
            r = row._asdict()
            student, course = r["student_id"], r["course_id"]
            if not student or not course:
                raise TranscriptParseError(line, "empty student_id or course_id")

            letter = r["grade_letter"].upper()
            if letter in PASS_FAIL_MARKS:
                self.dropped_pass_fail += 1
                continue
            if letter not in GRADE_POINTS:
                raise UnknownGradeError(line, r["grade_letter"])

            term = self.utils.try_parse_term(r["term"])
            if term is None:
                raise TranscriptParseError(line, f"unreadable term {r['term']!r}")

            credits = DEFAULT_CREDITS
            if has_credits and r["credits"] != "":
                credits = self.utils.to_number(r["credits"])
                if credits is None or not math.isfinite(credits) or credits < 0:
                    raise TranscriptParseError(line, f"invalid credits {r['credits']!r}")

            records.append(
                EnrollmentRecord(
                    student=student,
                    course=course,
                    term=term,
                    grade=Grade(letter),
                    major=r["major"] if has_major else "",
                    credits=credits,
                )
            )

        if self.dropped_pass_fail:
            _log.info("dropped %d pass/fail rows", self.dropped_pass_fail)
        return records

    def load(self, source: TableSource) -> List[StudentHistory]:
        return group_histories(self.read_records(source))


def parse_transcripts(source: TableSource, loader: Optional[TranscriptLoader] = None) -> List[StudentHistory]:
    """Parse a transcript CSV (or XLSX) into histories sorted by student id"""
    return (loader or TranscriptLoader()).load(source)


def group_histories(records: Iterable[EnrollmentRecord]) -> List[StudentHistory]:
    by_student: Dict[str, Dict[int, List[Enrollment]]] = defaultdict(lambda: defaultdict(list))
    majors: Dict[str, Tuple[int, str]] = {}
    for rec in records:
        by_student[rec.student][rec.term].append(
            Enrollment(course=rec.course, grade=rec.grade, credits=rec.credits)
        )
        if rec.major and (rec.student not in majors or rec.term >= majors[rec.student][0]):
            majors[rec.student] = (rec.term, rec.major)

    histories = []
    for student in sorted(by_student):
        terms = tuple(
            TermRecord(
                term=term,
                enrollments=tuple(sorted(by_student[student][term], key=lambda e: (e.course, -e.points))),
            )
            for term in sorted(by_student[student])
        )
        histories.append(
            StudentHistory(student=student, major=majors.get(student, (0, ""))[1], terms=terms)
        )
    return histories


def academic_level(credits: float) -> str:
    for name, upper in LEVEL_BANDS:
        if credits <= upper:
            return name
    return SENIOR


def _prefix_query(history: StudentHistory, pos: int, term: int, context_window: Optional[int]) -> StudentQuery:
    """Query built from the first ``pos`` terms of a history"""
    prior = history.terms[:pos]
    window = prior[-context_window:] if context_window else prior
    context = tuple(
        sorted(e.course for t in window for e in t.enrollments if e.points > CONTEXT_MIN_POINTS + EPS)
    )
    prior_grades = tuple((e.course, e.points) for t in prior for e in t.enrollments)
    credits = sum(e.credits for t in prior for e in t.enrollments if e.points > 0)
    prior_mean = sum(p for _, p in prior_grades) / len(prior_grades) if prior_grades else None
    return StudentQuery(
        student=history.student,
        major=history.major,
        term=term,
        context=context,
        prior_grades=prior_grades,
        prior_mean=prior_mean,
        prior_credits=credits,
        level=academic_level(credits),
    )


def build_query(history: StudentHistory, term: int, context_window: Optional[int] = None) -> StudentQuery:
    """What is known about ``history`` at the start of ``term`` (may lie past the transcript)"""
    return _prefix_query(history, history.position_of(term), term, context_window)


def label_good_bad(history: StudentHistory, context_window: Optional[int] = None) -> List[TrainingInstance]:
    """
    One training instance per term after the first

    A target course is good when its grade is at least the mean of all earlier
    grades, bad otherwise. Terms whose context is empty (every earlier grade at
    or below D+) yield no instance.
    """
    instances: List[TrainingInstance] = []
    for pos in range(1, len(history.terms)):
        record = history.terms[pos]
        query = _prefix_query(history, pos, record.term, context_window)
        if not query.context:
            _log.debug("student %s term %d: empty context, skipped", history.student, record.term)
            continue

        mu = history.prior_means[pos]
        best: Dict[str, float] = {}
        for e in record.enrollments:
            best[e.course] = max(best.get(e.course, e.points), e.points)
        good = frozenset(c for c, p in best.items() if p >= mu - EPS)
        bad = frozenset(best) - good

        instances.append(
            TrainingInstance(
                **query.model_dump(),
                position=pos + 1,
                good=good,
                bad=bad,
                target_grades=tuple(sorted(best.items())),
            )
        )
    return instances


def build_instances(histories: Iterable[StudentHistory], context_window: Optional[int] = None) -> List[TrainingInstance]:
    instances: List[TrainingInstance] = []
    for history in sorted(histories, key=lambda h: h.student):
        instances.extend(label_good_bad(history, context_window))
    return instances


class DataSplit(NamedTuple):
    train: List[TrainingInstance]
    valid: List[TrainingInstance]
    test: List[TrainingInstance]

    def partition(self, name: str) -> List[TrainingInstance]:
        return getattr(self, name)


def split_by_time(
    histories: Iterable[StudentHistory],
    train_end: int,
    valid_end: int,
    context_window: Optional[int] = None,
) -> DataSplit:
    """
    Assign each instance by its target term

    Terms up to ``train_end`` train, up to ``valid_end`` validate, the rest test.
    Contexts are full student prefixes and may reach into earlier partitions.
    """
    if train_end >= valid_end:
        raise ValueError("train_end must be smaller than valid_end")
    train, valid, test = [], [], []
    for inst in build_instances(histories, context_window):
        if inst.term <= train_end:
            train.append(inst)
        elif inst.term <= valid_end:
            valid.append(inst)
        else:
            test.append(inst)
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        if not part:
            _log.warning("%s partition is empty (train_end=%d, valid_end=%d)", name, train_end, valid_end)
    return DataSplit(train, valid, test)


class Offerings:
    """Courses offered per term"""

    def __init__(self, by_term: Optional[Dict[int, Iterable[str]]] = None):
        self.by_term: Dict[int, FrozenSet[str]] = {
            int(t): frozenset(cs) for t, cs in (by_term or {}).items()
        }

    def courses(self, term: int) -> FrozenSet[str]:
        return self.by_term.get(term, frozenset())

    def all_courses(self) -> Set[str]:
        return set().union(*self.by_term.values()) if self.by_term else set()

    @classmethod
    def from_file(cls, source: TableSource) -> "Offerings":
        utils = TableUtils()
        df = utils.safe_read_table(source)
        for col in ("course_id", "term"):
            if col not in df.columns:
                raise TranscriptParseError(1, f"offerings file lacks column {col}")
        by_term: Dict[int, Set[str]] = defaultdict(set)
        for idx, row in enumerate(df.itertuples(index=False)):
            term = utils.try_parse_term(row.term)
            if term is None or not row.course_id:
                raise TranscriptParseError(idx + 2, "malformed offerings row")
            by_term[term].add(row.course_id)
        return cls(by_term)

    @classmethod
    def from_histories(cls, histories: Iterable[StudentHistory]) -> "Offerings":
        """Treat a course as offered in every term somebody took it"""
        by_term: Dict[int, Set[str]] = defaultdict(set)
        for h in histories:
            for t in h.terms:
                by_term[t.term].update(e.course for e in t.enrollments)
        return cls(by_term)

    def to_frame(self) -> pd.DataFrame:
        rows = [(c, t) for t in sorted(self.by_term) for c in sorted(self.by_term[t])]
        return pd.DataFrame(rows, columns=["course_id", "term"])


def is_excluded(points: float, prior_mean: Optional[float]) -> bool:
    """Whether a previous take at ``points`` rules the course out for recommendation"""
    if points >= RETAKE_MAX_POINTS - EPS:
        return True
    return prior_mean is not None and points >= prior_mean - RETAKE_MEAN_MARGIN - EPS


def eligible_candidates(query: StudentQuery, term: int, offerings: Offerings) -> Set[str]:
    """Courses offered in ``term`` minus courses already passed well enough"""
    excluded = {c for c, p in query.prior_grades if is_excluded(p, query.prior_mean)}
    return set(offerings.courses(term)) - excluded


def training_grades(histories: Iterable[StudentHistory], end_term: int) -> List[Tuple[str, str, float]]:
    """(student, course, points) for every take up to ``end_term``"""
    return [
        (h.student, e.course, e.points)
        for h in histories
        for t in h.terms
        if t.term <= end_term
        for e in t.enrollments
    ]


def course_mean_grades(histories: Iterable[StudentHistory], end_term: int) -> Dict[str, float]:
    totals: Dict[str, List[float]] = defaultdict(list)
    for _, course, points in training_grades(histories, end_term):
        totals[course].append(points)
    return {c: sum(v) / len(v) for c, v in sorted(totals.items())}


def grade_deviations(histories: Iterable[StudentHistory]) -> List[float]:
    """Grade minus prior mean for every take after a student's first term"""
    out: List[float] = []
    for h in histories:
        for pos in range(1, len(h.terms)):
            mu = h.prior_means[pos]
            out.extend(e.points - mu for e in h.terms[pos].enrollments)
    return out


def degree_plan(history: StudentHistory) -> Dict[str, int]:
    """Course -> 1-based term number of its first take"""
    plan: Dict[str, int] = {}
    for number, record in enumerate(history.terms, start=1):
        for e in record.enrollments:
            plan.setdefault(e.course, number)
    return plan


def course_vocabulary(instances: Sequence[TrainingInstance]) -> List[str]:
    """Sorted ids of all courses appearing in contexts or targets"""
    courses: Set[str] = set()
    for inst in instances:
        courses.update(inst.context)
        courses.update(inst.good)
        courses.update(inst.bad)
    return sorted(courses)
