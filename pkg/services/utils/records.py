"""
Record I/O
Purpose: Versioned on-disk formats of the pipeline
Functions:
- Detection / annotation JSONL records with schema validation
- YAML documents (calibration, scenarios, run configs)
- Pose CSV (timestamp, translation, quaternion)
- Localization, estimate and particle CSV tables
- Annotation importer registry
"""

import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Type, TypeVar

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator
from scipy.spatial.transform import Rotation

from agents.detector_support import BoundingBox, Detection, Spectrum
from agents.evaluation import Annotation, Posture
from agents.geometry import Pose
from utils.errors import InputError, ParseError, SchemaError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
POSE_COLUMNS = ["timestamp", "tx", "ty", "tz", "qw", "qx", "qy", "qz"]
LOCALIZATION_COLUMNS = ["track_id", "frame", "t", "x", "y", "z", "depth", "area", "decision"]
ESTIMATE_COLUMNS = ["human_id", "t", "x", "y", "cov_xx", "cov_xy", "cov_yy"]
PARTICLE_COLUMNS = ["human_id", "step", "t", "particle", "x", "y", "weight"]

RecordT = TypeVar("RecordT", bound=BaseModel)


class VersionedRecord(BaseModel):
    schema_version: int = SCHEMA_VERSION

    @field_validator("schema_version")
    def validate_schema_version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v


def _validate_bbox(v: List[float]) -> List[float]:
    if len(v) != 4:
        raise ValueError("bbox needs 4 values")
    if v[2] < v[0] or v[3] < v[1]:
        raise ValueError(f"unordered bbox {v}")
    return v


class DetectionRecord(VersionedRecord):
    frame: int = Field(..., ge=0)
    t: float
    spectrum: Spectrum
    bbox: List[float]
    score: float = Field(..., ge=0, le=1)
    id: Optional[int] = None
    patch: Optional[str] = None

    @field_validator("bbox")
    def validate_bbox(cls, v):
        return _validate_bbox(v)

    @classmethod
    def from_detection(cls, d: Detection) -> "DetectionRecord":
        return cls(frame=d.frame, t=d.timestamp, spectrum=d.spectrum, bbox=d.bbox.as_list(),
                   score=d.score, id=d.human_id, patch=d.patch)

    def to_detection(self) -> Detection:
        return Detection(bbox=BoundingBox.from_list(self.bbox), score=self.score, spectrum=self.spectrum,
                         frame=self.frame, timestamp=self.t, human_id=self.id, patch=self.patch)


class AnnotationRecord(VersionedRecord):
    frame: int = Field(..., ge=0)
    bbox: List[float]
    human_id: int
    posture: Posture
    occluded: bool = False

    @field_validator("bbox")
    def validate_bbox(cls, v):
        return _validate_bbox(v)

    @classmethod
    def from_annotation(cls, a: Annotation) -> "AnnotationRecord":
        return cls(frame=a.frame, bbox=a.bbox.as_list(), human_id=a.human_id,
                   posture=a.posture, occluded=a.occluded)

    def to_annotation(self) -> Annotation:
        return Annotation(frame=self.frame, bbox=BoundingBox.from_list(self.bbox), human_id=self.human_id,
                          posture=self.posture, occluded=self.occluded)


def schema_error(e: ValidationError, line: Optional[int] = None) -> SchemaError:
    first = e.errors()[0]
    field = str(first["loc"][0]) if first.get("loc") else "<record>"
    return SchemaError(field, first.get("msg", ""), line)


def read_jsonl(path, model: Type[RecordT]) -> List[RecordT]:
    """
    Read one record per line (blank lines skipped)

    Raises:
        ParseError: line is not valid JSON (1-based line number)
        SchemaError: record does not fit model
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(line_no, e.msg, str(path)) from e
            try:
                records.append(model.model_validate(payload))
            except ValidationError as e:
                raise schema_error(e, line_no) from e
    return records


def read_yaml(path, model: Type[RecordT]) -> RecordT:
    """
    Raises:
        ParseError: invalid YAML (1-based line of the problem)
        SchemaError: document does not fit model
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = yaml.safe_load(f)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ParseError(mark.line + 1 if mark else 0, str(e), str(path)) from e
    try:
        return model.model_validate(payload or {})
    except ValidationError as e:
        raise schema_error(e) from e


def write_yaml(path, record: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(record.model_dump(mode="json"), f, sort_keys=True)
    return path


def write_jsonl(path, records: Iterable[BaseModel]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(record.model_dump_json(exclude_none=True) + "\n")
    return path


def read_detections(path) -> List[Detection]:
    return [r.to_detection() for r in read_jsonl(path, DetectionRecord)]


def write_detections(path, detections: Iterable[Detection]) -> Path:
    return write_jsonl(path, (DetectionRecord.from_detection(d) for d in detections))


def read_annotations(path) -> List[Annotation]:
    return [r.to_annotation() for r in read_jsonl(path, AnnotationRecord)]


def write_annotations(path, annotations: Iterable[Annotation]) -> Path:
    return write_jsonl(path, (AnnotationRecord.from_annotation(a) for a in annotations))


def read_poses(path) -> List[Pose]:
    """
    Pose CSV, one row per optical frame (row index = frame index)

    Raises:
        SchemaError: missing column or invalid rotation
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=np.float64)
    except (ValueError, pd.errors.ParserError) as e:
        raise ParseError(0, str(e), str(path)) from e
    missing = [c for c in POSE_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(missing[0], "missing pose column")
    quats = df[["qx", "qy", "qz", "qw"]].to_numpy()
    if np.any(np.linalg.norm(quats, axis=1) == 0):
        raise SchemaError("qw", "zero quaternion")
    rotations = Rotation.from_quat(quats).as_matrix()
    poses = []
    for row, (_, r) in enumerate(df.iterrows()):
        try:
            poses.append(Pose(rotation=rotations[row], translation=[r.tx, r.ty, r.tz], timestamp=r.timestamp))
        except ValidationError as e:
            raise schema_error(e, row + 2) from e
    return poses


def write_poses(path, poses: Sequence[Pose]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in poses:
        qx, qy, qz, qw = Rotation.from_matrix(p.rotation).as_quat()
        tx, ty, tz = p.translation
        rows.append([p.timestamp, tx, ty, tz, qw, qx, qy, qz])
    pd.DataFrame(rows, columns=POSE_COLUMNS).to_csv(path, index=False)
    return path


def write_table(path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=list(columns)).to_csv(path, index=False)
    return path


def read_table(path, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    df = pd.read_csv(path)
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise SchemaError(missing[0], f"missing column in {path.name}")
    return df


class AnnotationImporter(ABC):
    """Converts a dataset's native annotation format into Annotation records"""
    name: str = ""

    @abstractmethod
    def read(self, path) -> List[Annotation]:
        pass


_IMPORTERS: Dict[str, Type[AnnotationImporter]] = {}


def register_importer(cls: Type[AnnotationImporter]) -> Type[AnnotationImporter]:
    _IMPORTERS[cls.name] = cls
    return cls


def get_importer(name: str) -> AnnotationImporter:
    if name not in _IMPORTERS:
        raise InputError(f"unknown annotation format '{name}' (known: {', '.join(sorted(_IMPORTERS))})")
    return _IMPORTERS[name]()


@register_importer
class JsonlAnnotationImporter(AnnotationImporter):
    name = "jsonl"

    def read(self, path) -> List[Annotation]:
        annotations = read_annotations(path)
        logger.info(f"Imported {len(annotations)} annotations from {path}")
        return annotations
