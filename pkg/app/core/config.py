"""
Application Configuration
Environment settings via pydantic-settings plus the run configuration
loaded from flat ``section.key = value`` files
"""
import os
import typing
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.exceptions import ConfigError, MissingFileError
from app.models.schemas import SynthConfig


class Settings(BaseSettings):
    """Application settings"""

    # Application Info
    APP_NAME: str = "Grade-aware Course Recommender"
    VERSION: str = "1.0.0"
    DESCRIPTION: str = "Course-ordering embeddings and grade-aware next-term recommendation"

    # Runtime
    LOG_LEVEL: str = "INFO"
    SHOW_PROGRESS: bool = False

    # Directories
    BASE_DIR: Path = Path(__file__).resolve().parent.parent.parent
    DEFAULT_CONFIG_FILE: str = os.getenv("COURSEREC_CONFIG", "courserec.conf")

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class PathsSection(_Section):
    corpus: str = "data/transcripts.csv"
    offerings: Optional[str] = "data/offerings.csv"
    ground_truth: str = "data/dag.csv"
    model_dir: str = "models"
    report_dir: str = "reports"
    database: Optional[str] = "reports/runs.db"


class SplitSection(_Section):
    train_end: int = 10
    valid_end: int = 12
    context_window: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.train_end >= self.valid_end:
            raise ValueError("split.train_end must be smaller than split.valid_end")
        return self


class BackendSection(_Section):
    method: str = "svd-plusminus"


class SvdSection(_Section):
    d: int = Field(20, ge=1)


class Course2vecSection(_Section):
    d: int = Field(20, ge=1)
    samples: int = Field(5, ge=1)
    freq_threshold: int = Field(20, ge=1)
    epochs: int = Field(50, ge=1)
    learning_rate: float = Field(0.025, gt=0)
    full_softmax: bool = False
    max_grad_norm: float = Field(5.0, gt=0)


class KnowledgeSection(_Section):
    k: int = Field(10, ge=1)
    epochs: int = Field(300, ge=1)
    optimizer: Literal["lbfgs", "momentum"] = "lbfgs"
    learning_rate: float = Field(0.01, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    l2: float = Field(0.01, ge=0)
    centered: bool = False


class BiasSection(_Section):
    lambda_b: float = Field(5.0, ge=0)


class HybridSection(_Section):
    alpha: float = Field(0.5, gt=0, lt=1)
    standardization: Literal["query", "global"] = "query"


class DepgraphSection(_Section):
    alpha: float = Field(0.05, gt=0, lt=1)
    min_n: int = Field(10, ge=1)


class EvaluateSection(_Section):
    methods: List[str] = Field(default_factory=lambda: ["svd-plusminus"])
    partition: Literal["valid", "test"] = "test"
    min_prior_courses: int = Field(3, ge=0)
    similarity_lambda: float = Field(0.5, ge=0)
    gpa_type_a: float = 3.667
    gpa_type_b: float = 2.667
    cohort_pairs: int = Field(2000, ge=1)


class GridSection(_Section):
    methods: List[str] = Field(default_factory=lambda: ["svd-plusminus"])
    d: List[int] = Field(default_factory=lambda: [10, 15, 20, 25, 30])
    samples: List[int] = Field(default_factory=lambda: [3, 5])
    alpha: List[float] = Field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])

    @field_validator("d", "samples")
    @classmethod
    def _positive(cls, values: List[int]) -> List[int]:
        if not values or any(v < 1 for v in values):
            raise ValueError("grid values must be positive and non-empty")
        return values

    @field_validator("alpha")
    @classmethod
    def _open_unit(cls, values: List[float]) -> List[float]:
        if not values or any(not 0 < v < 1 for v in values):
            raise ValueError("grid alphas must lie in (0, 1)")
        return values


class RunConfig(_Section):
    """Full run configuration, one attribute per config-file section"""

    seed: int = 42
    threads: int = Field(1, ge=1)
    paths: PathsSection = Field(default_factory=PathsSection)
    split: SplitSection = Field(default_factory=SplitSection)
    backend: BackendSection = Field(default_factory=BackendSection)
    svd: SvdSection = Field(default_factory=SvdSection)
    course2vec: Course2vecSection = Field(default_factory=Course2vecSection)
    knowledge: KnowledgeSection = Field(default_factory=KnowledgeSection)
    bias: BiasSection = Field(default_factory=BiasSection)
    hybrid: HybridSection = Field(default_factory=HybridSection)
    depgraph: DepgraphSection = Field(default_factory=DepgraphSection)
    evaluate: EvaluateSection = Field(default_factory=EvaluateSection)
    grid: GridSection = Field(default_factory=GridSection)
    synth: SynthConfig = Field(default_factory=SynthConfig)


def _field_annotation(model: type, key: str):
    field = model.model_fields.get(key)
    if field is None:
        raise ConfigError(f"unknown config key: {key}")
    return field.annotation


def _is_list(annotation) -> bool:
    if typing.get_origin(annotation) in (list, List):
        return True
    return any(_is_list(arg) for arg in typing.get_args(annotation) if arg is not type(None))


def _coerce(annotation, raw: Optional[str]) -> Any:
    if raw is None:
        return None
    raw = raw.strip()
    if _is_list(annotation):
        return [item.strip() for item in raw.split(",") if item.strip()]
    if raw == "" and type(None) in typing.get_args(annotation):
        return None
    return raw


def parse_flat(values: Dict[str, Optional[str]]) -> Dict[str, Any]:
    """Turn ``{"svd.d": "20", "seed": "1"}`` into the nested dict RunConfig expects"""
    nested: Dict[str, Any] = {}
    for key, raw in values.items():
        if "." in key:
            section, name = key.split(".", 1)
            section_type = _field_annotation(RunConfig, section)
            if not isinstance(section_type, type) or not issubclass(section_type, BaseModel):
                raise ConfigError(f"unknown config key: {key}")
            annotation = _field_annotation(section_type, name)
            nested.setdefault(section, {})[name] = _coerce(annotation, raw)
        else:
            nested[key] = _coerce(_field_annotation(RunConfig, key), raw)
    return nested


def build_run_config(values: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid config value for {where}: {first['msg']}") from e


def load_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load a run configuration

    Args:
        path: flat key-value config file; defaults apply when None
        overrides: flat ``section.key`` values applied after the file
    """
    flat: Dict[str, Optional[str]] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise MissingFileError(path)
        flat.update(dotenv_values(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            flat[key] = value if isinstance(value, str) else str(value)
    return build_run_config(parse_flat(flat))


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def dump_run_config(config: RunConfig) -> str:
    """Render a config in the flat file format; the output loads back unchanged"""
    lines = []
    data = config.model_dump()
    for key, value in data.items():
        if not isinstance(value, dict):
            lines.append(f"{key} = {_format_value(value)}")
    for key, value in data.items():
        if isinstance(value, dict):
            lines.append("")
            lines.append(f"# {key}")
            for name, item in value.items():
                lines.append(f"{key}.{name} = {_format_value(item)}")
    return "\n".join(lines) + "\n"


# Global settings instance
settings = Settings()
