"""
Synthetic Corpus Generator
Transcripts with a planted prerequisite DAG, course difficulty and popularity,
and preparedness-driven grades
"""
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Set, Tuple

import numpy as np
import pandas as pd

from app.core.exceptions import ConfigError
from app.core.logging import get_logger
from app.models.schemas import GRADE_POINTS, Grade, StudentHistory, SynthConfig
from app.services.table_utils import TableUtils

_log = get_logger(__name__)

RETAKE_BELOW = GRADE_POINTS["C-"]
CREDIT_CHOICES = (3.0, 4.0)
TRAIT_STREAM = 1

TRANSCRIPT_COLUMNS = ["student_id", "course_id", "term", "grade_letter", "major", "credits"]


class SyntheticCorpus:
    """Generated transcripts, offerings and the planted DAG"""

    def __init__(self, transcripts: pd.DataFrame, offerings: pd.DataFrame, dag: pd.DataFrame):
        self.transcripts = transcripts
        self.offerings = offerings
        self.dag = dag

    @property
    def edges(self) -> List[Tuple[str, str]]:
        return list(zip(self.dag["src"], self.dag["dst"]))

    @property
    def courses(self) -> List[str]:
        return sorted(set(self.offerings["course_id"]) | set(self.transcripts["course_id"]))

    def write(self, transcripts_path: Path, offerings_path: Path, dag_path: Path) -> List[Path]:
        return [
            TableUtils.write_csv(self.transcripts, transcripts_path),
            TableUtils.write_csv(self.offerings, offerings_path),
            TableUtils.write_csv(self.dag, dag_path),
        ]


def _course_ids(config: SynthConfig) -> Dict[str, List[str]]:
    return {
        f"M{m + 1}": [f"M{m + 1}-{i + 1:03d}" for i in range(config.courses_per_major)]
        for m in range(config.majors)
    }


def _plant_dag(rng: np.random.Generator, catalog: Dict[str, List[str]], config: SynthConfig) -> List[Tuple[str, str]]:
    """Edges only run from lower to higher course numbers, so the graph is acyclic"""
    edges = []
    for courses in catalog.values():
        for j in range(len(courses)):
            for i in range(max(0, j - config.prereq_window), j):
                if rng.random() < config.dag_density:
                    edges.append((courses[i], courses[j]))
    return edges


def _course_traits(catalog: Dict[str, List[str]], config: SynthConfig) -> Tuple[Dict[str, float], Dict[str, float]]:
    """
    Per-course difficulty (grade offset) and choice weight

    Drawn from their own stream; the enrollment draws only see them through
    weighted choice and the grades that trigger retakes.
    """
    rng = np.random.default_rng([config.seed, TRAIT_STREAM])
    courses = [c for cs in catalog.values() for c in cs]
    hardness = rng.standard_normal(len(courses))
    appeal = rng.standard_normal(len(courses))
    rho = config.popularity_difficulty_corr
    log_weight = config.popularity_spread * (rho * hardness + np.sqrt(1.0 - rho ** 2) * appeal)
    difficulty = dict(zip(courses, (config.difficulty_spread * hardness).tolist()))
    weight = dict(zip(courses, np.exp(log_weight).tolist()))
    return difficulty, weight


def _pick(rng: np.random.Generator, source: List[str], weight: Dict[str, float], weighted: bool) -> str:
    if not weighted:
        return source[int(rng.integers(len(source)))]
    p = np.array([weight[c] for c in source])
    return source[int(rng.choice(len(source), p=p / p.sum()))]


def generate(config: SynthConfig) -> SyntheticCorpus:
    """Draw a full corpus; identical configs give identical frames"""
    if config.courses_per_major < config.terms_per_student * config.load_max:
        raise ConfigError(
            f"courses_per_major={config.courses_per_major} cannot fill "
            f"{config.terms_per_student} terms of up to {config.load_max} courses"
        )
    rng = np.random.default_rng(config.seed)
    catalog = _course_ids(config)
    edges = _plant_dag(rng, catalog, config)
    prereqs: Dict[str, Set[str]] = defaultdict(set)
    for src, dst in edges:
        prereqs[dst].add(src)
    credits = {c: CREDIT_CHOICES[int(rng.integers(len(CREDIT_CHOICES)))] for cs in catalog.values() for c in cs}
    difficulty, weight = _course_traits(catalog, config)
    weighted = config.popularity_spread > 0

    last_term = config.start_spread + config.terms_per_student - 1
    offered: Dict[int, Set[str]] = {}
    for term in range(1, last_term + 1):
        offered[term] = {
            c for cs in catalog.values() for c in cs if rng.random() >= config.offering_sparsity
        }

    majors = sorted(catalog)
    rows = []
    for s in range(config.students):
        student = f"S{s + 1:05d}"
        major = majors[int(rng.integers(len(majors)))]
        ability = float(np.clip(rng.normal(config.ability_mean, config.ability_spread), 1.0, 4.0))
        start = int(rng.integers(1, config.start_spread + 1))
        best: Dict[str, float] = {}
        completed: Set[str] = set()

        for term in range(start, start + config.terms_per_student):
            pool = [
                c for c in catalog[major]
                if c in offered[term]
                and (c not in best or (best[c] < RETAKE_BELOW and rng.random() < config.retake_prob))
            ]
            load = int(rng.integers(config.load_min, config.load_max + 1))
            chosen: List[str] = []
            for _ in range(min(load, len(pool))):
                ready = [c for c in pool if prereqs[c] <= completed]
                source = ready if ready and rng.random() >= config.exploration else pool
                pick = _pick(rng, source, weight, weighted)
                chosen.append(pick)
                pool.remove(pick)

            for course in sorted(chosen):
                met = prereqs[course] <= completed
                value = ability - difficulty[course]
                if config.sigma > 0:
                    value += rng.normal(0.0, config.sigma)
                if prereqs[course]:
                    value += config.prep_bonus if met else -config.delta
                grade = Grade.nearest(value)
                letter = grade.value
                if config.pass_fail_rate and rng.random() < config.pass_fail_rate:
                    letter = "S" if grade.points >= RETAKE_BELOW else "N"
                rows.append((student, course, term, letter, major, credits[course]))
                best[course] = max(best.get(course, 0.0), grade.points)
            completed.update(c for c in chosen if best[c] > 0.0)

    transcripts = pd.DataFrame(rows, columns=TRANSCRIPT_COLUMNS)
    offerings = pd.DataFrame(
        [(c, t) for t in sorted(offered) for c in sorted(offered[t])], columns=["course_id", "term"]
    )
    dag = pd.DataFrame(sorted(edges), columns=["src", "dst"])
    _log.info(
        "synthesized %d students, %d rows, %d planted edges", config.students, len(transcripts), len(dag)
    )
    return SyntheticCorpus(transcripts, offerings, dag)


def preparedness_bad_rates(histories: Iterable[StudentHistory], edges: Iterable[Tuple[str, str]]) -> Tuple[float, float]:
    """
    Share of bad labels among takes with unmet prerequisites and among prepared takes

    Only courses with at least one planted prerequisite count; first terms have
    no label and are skipped.
    """
    prereqs: Dict[str, Set[str]] = defaultdict(set)
    for src, dst in edges:
        prereqs[dst].add(src)
    counts = {True: [0, 0], False: [0, 0]}
    for h in histories:
        done: Set[str] = set()
        for pos, record in enumerate(h.terms):
            mu = h.prior_means[pos]
            for e in record.enrollments:
                if mu is not None and prereqs[e.course]:
                    prepared = prereqs[e.course] <= done
                    counts[prepared][0] += int(e.points < mu - 1e-9)
                    counts[prepared][1] += 1
            done.update(e.course for e in record.enrollments if e.points > 0.0)
    unprepared, prepared = counts[False], counts[True]
    return (
        unprepared[0] / unprepared[1] if unprepared[1] else 0.0,
        prepared[0] / prepared[1] if prepared[1] else 0.0,
    )
