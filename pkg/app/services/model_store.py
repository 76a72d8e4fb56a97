"""
Model Store
Versioned binary container for fitted models

Layout: b"CRSM", one version byte, uint32 little-endian header length, a
UTF-8 JSON header with sorted keys, then every array as little-endian
float64 in row-major order, in header order.
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from app.core.exceptions import MissingFileError, ModelFormatError
from app.core.logging import get_logger
from app.services.baselines import DependencyGraph, GroupPopModel
from app.services.course2vec import EmbeddingModel
from app.services.gradepred import BiasBaseline, KnowledgeModel
from app.services.svd_embed import SvdEmbedding

_log = get_logger(__name__)

MAGIC = b"CRSM"
FORMAT_VERSION = 1

StoredModel = Union[SvdEmbedding, EmbeddingModel, KnowledgeModel, BiasBaseline, GroupPopModel, DependencyGraph]


class ArraySpec(BaseModel):
    name: str
    shape: List[int]


class ContainerHeader(BaseModel):
    kind: str
    variant: str = ""
    courses: List[str] = Field(default_factory=list)
    labels: List[Any] = Field(default_factory=list)
    scalars: Dict[str, float] = Field(default_factory=dict)
    arrays: List[ArraySpec] = Field(default_factory=list)


def encode(header: ContainerHeader, arrays: Dict[str, np.ndarray]) -> bytes:
    header = header.model_copy(
        update={"arrays": [ArraySpec(name=n, shape=list(np.shape(a))) for n, a in arrays.items()]}
    )
    blob = json.dumps(header.model_dump(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values())
    return MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<I", len(blob)) + blob + body


def decode(data: bytes) -> Tuple[ContainerHeader, Dict[str, np.ndarray]]:
    if len(data) < 9 or data[:4] != MAGIC:
        raise ModelFormatError("not a model container (bad magic)")
    if data[4] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported container version {data[4]}")
    (size,) = struct.unpack("<I", data[5:9])
    try:
        header = ContainerHeader.model_validate_json(data[9 : 9 + size])
    except ValidationError as e:
        raise ModelFormatError(f"corrupt container header: {e.errors()[0]['msg']}") from e

    arrays: Dict[str, np.ndarray] = {}
    offset = 9 + size
    for spec in header.arrays:
        count = int(np.prod(spec.shape)) if spec.shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise ModelFormatError(f"container truncated in array {spec.name}")
        arrays[spec.name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(spec.shape).copy()
        offset = end
    if offset != len(data):
        raise ModelFormatError("trailing bytes after the last array")
    return header, arrays


# ==================== Per-kind packing ====================

def _pack(model: StoredModel) -> Tuple[ContainerHeader, Dict[str, np.ndarray]]:
    if isinstance(model, SvdEmbedding):
        return (
            ContainerHeader(kind="svd", variant=model.variant.value, courses=model.courses),
            {"P": model.P, "S": model.S, "sigma": model.sigma},
        )
    if isinstance(model, EmbeddingModel):
        return (
            ContainerHeader(kind="course2vec", variant=model.variant.value, courses=model.courses),
            {"W": model.W, "Wp": model.Wp},
        )
    if isinstance(model, KnowledgeModel):
        return (
            ContainerHeader(
                kind="knowledge",
                courses=model.courses,
                scalars={"bias": model.bias, "weight_offset": model.weight_offset},
            ),
            {"provided": model.provided, "required": model.required},
        )
    if isinstance(model, BiasBaseline):
        students = sorted(model.student_offsets)
        courses = sorted(model.course_offsets)
        return (
            ContainerHeader(
                kind="bias",
                courses=courses,
                labels=students,
                scalars={"mu": model.mu, "low": model.low, "high": model.high, "lambda_b": model.lambda_b},
            ),
            {
                "student_offsets": np.array([model.student_offsets[s] for s in students]),
                "course_offsets": np.array([model.course_offsets[c] for c in courses]),
            },
        )
    if isinstance(model, GroupPopModel):
        groups = sorted(model.counts)
        courses = sorted({c for g in groups for c in model.counts[g]})
        counts = np.zeros((len(groups), len(courses), 2))
        for gi, g in enumerate(groups):
            for ci, c in enumerate(courses):
                if c in model.counts[g]:
                    counts[gi, ci] = model.counts[g][c]
        return ContainerHeader(kind="grppop", courses=courses, labels=[list(g) for g in groups]), {"counts": counts}
    if isinstance(model, DependencyGraph):
        pairs = sorted(model.tests)
        stats = np.array([model.tests[p] for p in pairs]).reshape(len(pairs), 2)
        return (
            ContainerHeader(
                kind="depgraph",
                courses=sorted({c for p in pairs for c in p}),
                labels=[list(p) for p in pairs],
                scalars={"alpha": model.alpha, "min_n": float(model.min_n)},
            ),
            {"stats": stats},
        )
    raise TypeError(f"cannot store {type(model).__name__}")


def _unpack(header: ContainerHeader, arrays: Dict[str, np.ndarray]) -> StoredModel:
    kind = header.kind
    if kind == "svd":
        return SvdEmbedding(arrays["P"], arrays["S"], arrays["sigma"], header.courses, header.variant)
    if kind == "course2vec":
        return EmbeddingModel(arrays["W"], arrays["Wp"], header.courses, header.variant)
    if kind == "knowledge":
        return KnowledgeModel(
            arrays["provided"],
            arrays["required"],
            header.scalars["bias"],
            header.courses,
            header.scalars.get("weight_offset", 0.0),
        )
    if kind == "bias":
        s = header.scalars
        return BiasBaseline(
            s["mu"],
            dict(zip(header.labels, arrays["student_offsets"].tolist())),
            dict(zip(header.courses, arrays["course_offsets"].tolist())),
            s["low"],
            s["high"],
            s.get("lambda_b", 5.0),
        )
    if kind == "grppop":
        model = GroupPopModel()
        for gi, (major, level) in enumerate(header.labels):
            for ci, course in enumerate(header.courses):
                n_good, n_bad = arrays["counts"][gi, ci]
                if n_good or n_bad:
                    model.counts[(major, level)][course] = [int(n_good), int(n_bad)]
        return model
    if kind == "depgraph":
        graph = DependencyGraph(header.scalars["alpha"], int(header.scalars["min_n"]))
        for (src, dst), (u, p) in zip(header.labels, arrays["stats"].tolist()):
            graph.add_test(src, dst, u, p)
        return graph
    raise ModelFormatError(f"unknown model kind {kind!r}")


def save_model(model: StoredModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(*_pack(model)))
    _log.info("saved %s model to %s", type(model).__name__, path)
    return path


def load_model(path: Path) -> StoredModel:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(path)
    return _unpack(*decode(path.read_bytes()))


def model_courses(model: StoredModel) -> List[str]:
    """Course table a stored model was fitted on"""
    return _pack(model)[0].courses
