"""
Pipeline Service
Wires corpus, models, ranker and evaluation together for the CLI commands
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from app.core.config import RunConfig
from app.core.exceptions import ConfigError, DataError, VocabularyMismatchError
from app.core.logging import get_logger
from app.models.schemas import RecommendationRow, StudentHistory, TrainConfig, TrainingInstance, Variant
from app.services import baselines, course2vec, gradepred, model_store, svd_embed
from app.services.corpus import (
    DataSplit,
    Offerings,
    build_query,
    course_mean_grades,
    course_vocabulary,
    eligible_candidates,
    grade_deviations,
    parse_transcripts,
    split_by_time,
    training_grades,
)
from app.services.evaluation import (
    Evaluator,
    cohort_stats,
    difficulty_summary,
    evaluations_frame,
    grade_deviation_histogram,
    group_breakdown,
    popularity_table,
)
from app.services.ranker import HybridBackend, Recommender
from app.services.scoring import RecommendationBackend
from app.services.synthgen import generate
from app.services.table_utils import TableUtils

_log = get_logger(__name__)

BACKENDS = ("svd", "c2v", "grppop", "depgraph")
PREDICTORS = ("ckrm", "bias")


@dataclass(frozen=True)
class MethodSpec:
    """Parsed method name such as ``svd-plusminus`` or ``ckrm+c2v-plus``"""

    backend: str
    variant: Optional[Variant] = None
    predictor: Optional[str] = None

    @classmethod
    def parse(cls, name: str) -> "MethodSpec":
        predictor = None
        text = name.strip()
        if "+" in text:
            predictor, text = text.split("+", 1)
            if predictor not in PREDICTORS:
                raise ConfigError(f"unknown grade predictor {predictor!r} in method {name!r}")
        if text == "depgraph":
            return cls("depgraph", None, predictor)
        backend, _, variant = text.partition("-")
        if backend not in BACKENDS or not variant:
            raise ConfigError(f"unknown method {name!r}")
        try:
            parsed = Variant(variant)
        except ValueError:
            raise ConfigError(f"unknown variant {variant!r} in method {name!r}") from None
        if backend == "grppop" and parsed is Variant.PLUSPLUS:
            raise ConfigError("grppop supports the plus and plusminus variants only")
        return cls(backend, parsed, predictor)

    @property
    def backend_name(self) -> str:
        return self.backend if self.variant is None else f"{self.backend}-{self.variant.value}"

    @property
    def name(self) -> str:
        return f"{self.predictor}+{self.backend_name}" if self.predictor else self.backend_name


def select_best(trials: Sequence[Dict]) -> Dict:
    """Highest recall_diff; ties go to the smallest d, then samples, then alpha"""
    if not trials:
        raise ConfigError("empty hyperparameter grid")

    def key(t: Dict):
        diff = t.get("recall_diff")
        return (
            -(diff if diff is not None else float("-inf")),
            t.get("d") or 0,
            t.get("samples") or 0,
            t.get("alpha") or 0.0,
        )

    return min(trials, key=key)


class Pipeline:
    """Everything a CLI command needs, built lazily from one RunConfig"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.paths = config.paths

    # ==================== Data ====================

    @cached_property
    def histories(self) -> List[StudentHistory]:
        histories = parse_transcripts(Path(self.paths.corpus))
        if not histories:
            raise DataError(f"no usable transcript rows in {self.paths.corpus}")
        _log.info("loaded %d students from %s", len(histories), self.paths.corpus)
        return histories

    @cached_property
    def offerings(self) -> Offerings:
        if self.paths.offerings:
            return Offerings.from_file(Path(self.paths.offerings))
        return Offerings.from_histories(self.histories)

    @cached_property
    def split(self) -> DataSplit:
        s = self.config.split
        return split_by_time(self.histories, s.train_end, s.valid_end, s.context_window)

    @cached_property
    def vocabulary(self) -> List[str]:
        return course_vocabulary(self.split.train)

    @cached_property
    def course_means(self) -> Dict[str, float]:
        return course_mean_grades(self.histories, self.config.split.train_end)

    # ==================== Fitting ====================

    def train_config(self, variant: Variant, d: Optional[int] = None, samples: Optional[int] = None) -> TrainConfig:
        c = self.config.course2vec
        return TrainConfig(
            variant=variant,
            d=d or c.d,
            samples=samples or c.samples,
            freq_threshold=c.freq_threshold,
            epochs=c.epochs,
            learning_rate=c.learning_rate,
            seed=self.config.seed,
            full_softmax=c.full_softmax,
            max_grad_norm=c.max_grad_norm,
        )

    def fit_backend_model(self, spec: MethodSpec, d: Optional[int] = None, samples: Optional[int] = None):
        train = self.split.train
        if not train:
            raise DataError("training partition is empty")
        if spec.backend == "svd":
            return svd_embed.fit_svd(train, spec.variant, d or self.config.svd.d, self.config.seed, self.vocabulary)
        if spec.backend == "c2v":
            return course2vec.train(train, self.train_config(spec.variant, d, samples), self.vocabulary)
        if spec.backend == "grppop":
            return baselines.build_grppop(train)
        g = self.config.depgraph
        return baselines.build_dependency_graph(self.histories, g.alpha, g.min_n, self.config.split.train_end)

    @staticmethod
    def wrap_backend(spec: MethodSpec, model) -> RecommendationBackend:
        if spec.backend == "svd":
            return svd_embed.SvdRecommender(model)
        if spec.backend == "c2v":
            return course2vec.Course2vecRecommender(model)
        if spec.backend == "grppop":
            return baselines.GroupPopRecommender(model, spec.variant)
        return baselines.DependencyRecommender(model)

    @cached_property
    def bias_baseline(self) -> gradepred.BiasBaseline:
        grades = training_grades(self.histories, self.config.split.train_end)
        return gradepred.fit_bias_baseline(grades, self.config.bias.lambda_b)

    @cached_property
    def knowledge_model(self) -> gradepred.KnowledgeModel:
        k = self.config.knowledge
        return gradepred.fit_knowledge(
            self.split.train,
            self.vocabulary,
            k=k.k,
            epochs=k.epochs,
            learning_rate=k.learning_rate,
            seed=self.config.seed,
            momentum=k.momentum,
            l2=k.l2,
            centered=k.centered,
            fallback=self.bias_baseline,
            optimizer=k.optimizer,
        )

    def predictor(self, kind: str) -> gradepred.GradePredictor:
        if kind == "ckrm":
            return gradepred.KnowledgePredictor(self.knowledge_model)
        return gradepred.BiasPredictor(self.bias_baseline)

    def combine(self, spec: MethodSpec, backend: RecommendationBackend, alpha: Optional[float] = None) -> RecommendationBackend:
        if not spec.predictor:
            return backend
        h = self.config.hybrid
        return HybridBackend(backend, self.predictor(spec.predictor), alpha or h.alpha, h.standardization)

    def build_method(self, name: str) -> RecommendationBackend:
        spec = MethodSpec.parse(name)
        return self.combine(spec, self.wrap_backend(spec, self.fit_backend_model(spec)))

    # ==================== Commands ====================

    def model_path(self, name: str) -> Path:
        return Path(self.paths.model_dir) / f"{name}.crsm"

    def train(self) -> List[Path]:
        """Fit the configured method and store every model it needs"""
        spec = MethodSpec.parse(self.config.backend.method)
        model = self.fit_backend_model(spec)
        stem = spec.backend if spec.backend in ("grppop", "depgraph") else spec.backend_name
        written = [model_store.save_model(model, self.model_path(stem))]
        if spec.backend == "c2v":
            written.append(course2vec.write_training_log(model, Path(self.paths.model_dir) / f"{stem}.log.jsonl"))
        if spec.predictor:
            written.append(model_store.save_model(self.bias_baseline, self.model_path("bias")))
            if spec.predictor == "ckrm":
                written.append(model_store.save_model(self.knowledge_model, self.model_path("knowledge")))
        return written

    def _load_checked(self, name: str):
        model = model_store.load_model(self.model_path(name))
        known = {e.course for h in self.histories for t in h.terms for e in t.enrollments}
        unknown = [c for c in model_store.model_courses(model) if c not in known]
        if unknown:
            raise VocabularyMismatchError(
                f"model {name} has {len(unknown)} courses absent from the corpus (e.g. {unknown[0]})"
            )
        return model

    def load_method(self) -> RecommendationBackend:
        spec = MethodSpec.parse(self.config.backend.method)
        stem = spec.backend if spec.backend in ("grppop", "depgraph") else spec.backend_name
        backend = self.wrap_backend(spec, self._load_checked(stem))
        if not spec.predictor:
            return backend
        bias = self._load_checked("bias")
        if spec.predictor == "ckrm":
            knowledge = self._load_checked("knowledge")
            knowledge.fallback = bias
            predictor = gradepred.KnowledgePredictor(knowledge)
        else:
            predictor = gradepred.BiasPredictor(bias)
        h = self.config.hybrid
        return HybridBackend(backend, predictor, h.alpha, h.standardization)

    def recommend(self, student: str, term: int, n: int) -> List[RecommendationRow]:
        history = next((h for h in self.histories if h.student == student), None)
        if history is None:
            raise DataError(f"student {student} is not in the corpus")
        backend = self.load_method()
        query = build_query(history, term, self.config.split.context_window)
        recommender = Recommender(backend, self.offerings, self.config.evaluate.min_prior_courses)
        ranked = recommender.recommend(query, term, n)
        return [
            RecommendationRow(student_id=student, term=term, rank=i, course_id=c, score=s, backend=backend.name)
            for i, (c, s) in enumerate(ranked, start=1)
        ]

    def _prepare_global(self, backend: RecommendationBackend, evaluator: Evaluator, instances: Sequence[TrainingInstance]):
        if isinstance(backend, HybridBackend) and backend.standardization == "global":
            backend.fit_global(
                (inst, eligible_candidates(inst, inst.term, self.offerings)) for inst in evaluator.evaluable(instances)
            )

    def evaluate(self, emit_histogram: bool = False) -> List[Path]:
        """Fit every configured method on the train split and score the held-out partition"""
        ev = self.config.evaluate
        instances = self.split.partition(ev.partition)
        evaluator = Evaluator(self.offerings, self.histories, ev.min_prior_courses, ev.gpa_type_a, ev.gpa_type_b)
        report_dir = Path(self.paths.report_dir)

        summaries, terms, groups, difficulty, popularity = [], [], [], [], []
        for name in ev.methods:
            backend = self.build_method(name)
            self._prepare_global(backend, evaluator, instances)
            evaluations = evaluator.evaluate(Recommender(backend, self.offerings, ev.min_prior_courses), instances)
            summaries.append(Evaluator.summary(evaluations, name, ev.partition, self.course_means).model_dump())
            terms.append(evaluations_frame(evaluations))
            for grouping in ("major", "gpa-type", "academic-level"):
                groups.extend({"method": name, **row.model_dump()} for row in group_breakdown(evaluations, grouping))
            recommended = [c for e in evaluations for c in e.recommended]
            difficulty.append(difficulty_summary(recommended, self.course_means).assign(method=name))
            popularity.append(popularity_table(evaluations, instances).assign(method=name))

        summary = pd.DataFrame(summaries)
        written = [
            TableUtils.write_csv(summary, report_dir / "summary.csv"),
            TableUtils.write_csv(pd.concat(terms, ignore_index=True), report_dir / "terms.csv"),
            TableUtils.write_csv(pd.DataFrame(groups), report_dir / "groups.csv"),
            TableUtils.write_csv(pd.concat(difficulty, ignore_index=True), report_dir / "difficulty.csv"),
            TableUtils.write_csv(pd.concat(popularity, ignore_index=True), report_dir / "popularity.csv"),
            TableUtils.write_csv(
                cohort_stats(
                    self.histories, ev.similarity_lambda, ev.gpa_type_a, ev.gpa_type_b, ev.cohort_pairs, self.config.seed
                ),
                report_dir / "cohort.csv",
            ),
        ]
        summary_json = report_dir / "summary.json"
        summary.to_json(summary_json, orient="records", indent=2)
        written.append(summary_json)
        if emit_histogram:
            hist = grade_deviation_histogram(grade_deviations(self.histories))
            written.append(TableUtils.write_csv(hist, report_dir / "grade_deviation_histogram.csv"))
        return written

    # ==================== Selection ====================

    def grid_points(self, name: str) -> List[Dict]:
        spec = MethodSpec.parse(name)
        g = self.config.grid
        ds: List[Optional[int]] = list(g.d) if spec.backend in ("svd", "c2v") else [None]
        samples: List[Optional[int]] = list(g.samples) if spec.backend == "c2v" else [None]
        alphas: List[Optional[float]] = list(g.alpha) if spec.predictor else [None]
        return [
            {"method": name, "d": d, "samples": s, "alpha": a}
            for d, s, a in product(ds, samples, alphas)
        ]

    def select(self, threads: int = 1) -> Tuple[List[Dict], List[Dict]]:
        """
        Sweep the grid on the validation split

        Returns every trial and the best point per method.
        """
        valid = self.split.valid
        if not valid:
            raise DataError("validation partition is empty; adjust split.valid_end")
        ev = self.config.evaluate
        evaluator = Evaluator(self.offerings, self.histories, ev.min_prior_courses, ev.gpa_type_a, ev.gpa_type_b)

        points = [p for name in self.config.grid.methods for p in self.grid_points(name)]
        fits = sorted({(MethodSpec.parse(p["method"]).backend_name, p["d"], p["samples"]) for p in points},
                      key=lambda f: (f[0], f[1] or 0, f[2] or 0))
        predictors = {MethodSpec.parse(p["method"]).predictor for p in points} - {None}
        # shared state is built before the worker threads start
        self.vocabulary
        for kind in sorted(predictors):
            self.predictor(kind)

        def fit(key):
            backend_name, d, samples = key
            spec = MethodSpec.parse(backend_name)
            return key, self.wrap_backend(spec, self.fit_backend_model(spec, d, samples))

        def run(point: Dict) -> Dict:
            spec = MethodSpec.parse(point["method"])
            backend = self.combine(spec, fitted[(spec.backend_name, point["d"], point["samples"])], point["alpha"])
            self._prepare_global(backend, evaluator, valid)
            summary = Evaluator.summary(
                evaluator.evaluate(Recommender(backend, self.offerings, ev.min_prior_courses), valid),
                point["method"],
                "valid",
            )
            return {
                **point,
                "recall_good": summary.recall_good,
                "recall_bad": summary.recall_bad,
                "recall_diff": summary.recall_diff,
                "n_terms": summary.n_terms,
            }

        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = dict(pool.map(fit, fits))
            trials = list(pool.map(run, points))

        best = [select_best([t for t in trials if t["method"] == name]) for name in self.config.grid.methods]
        report_dir = Path(self.paths.report_dir)
        TableUtils.write_csv(pd.DataFrame(trials), report_dir / "selection_trials.csv")
        TableUtils.write_csv(pd.DataFrame(best), report_dir / "selection_best.csv")
        return trials, best

    # ==================== Synthesis ====================

    def synth(self) -> List[Path]:
        corpus = generate(self.config.synth)
        offerings = self.paths.offerings or str(Path(self.paths.corpus).with_name("offerings.csv"))
        return corpus.write(Path(self.paths.corpus), Path(offerings), Path(self.paths.ground_truth))
