"""
Pipeline Agent
Purpose: Run the post-detector stages over files and record a run manifest
Stages:
- simulate (scenario runs only)
- fuse -> track -> localize -> reid -> evaluate
- analyze-anchors (standalone)

Each stage reads the previous stage's files, so any stage can also run on its
own. A failing stage raises StageError; files written so far stay in place and
the manifest records which stages completed.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from enum import Enum
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from agents.detector_support import AnchorAnalysisAgent, AnchorConfig, kmeans_anchors_detailed
from agents.evaluation import EvaluationAgent, EvaluationConfig, plot_curves
from agents.fusion import FusionAgent, FusionConfig
from agents.geometry import GeometryConfig
from agents.localization import LocalizationAgent
from agents.particle_filter import PfConfig, pf_estimate
from agents.reid import ReidAgent, ReidConfig
from agents.simulation import ScenarioSpec, simulate, write_simulation
from agents.tracking import TrackerConfig, TrackingAgent
from utils.calibration import load_calibration
from utils.config import VERSION, RunConfig
from utils.errors import InputError, StageError
from utils.records import (ESTIMATE_COLUMNS, LOCALIZATION_COLUMNS, PARTICLE_COLUMNS, SCHEMA_VERSION,
                           read_annotations, read_detections, read_poses, read_table, write_detections,
                           write_table)

logger = logging.getLogger(__name__)

LIBRARIES = ("numpy", "scipy", "pandas", "pydantic", "opencv-python-headless", "matplotlib", "PyYAML")
MANIFEST_NAME = "manifest.json"


class StageStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"
    SKIPPED = "skipped"


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def library_versions() -> Dict[str, str]:
    versions = {}
    for name in LIBRARIES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _require(path: Optional[str], name: str) -> Path:
    if not path:
        raise InputError(f"missing input: {name}")
    path = Path(path)
    if not path.exists():
        raise InputError(f"{name} file not found: {path}")
    return path


# ---------------------------------------------------------------- stages

def run_fuse(optical_path, thermal_path, calibration_path, out_dir, config: Optional[FusionConfig] = None,
             poses_path=None) -> Path:
    rig = load_calibration(calibration_path)
    poses = read_poses(poses_path) if poses_path else None
    agent = FusionAgent(rig, config)
    fused = agent.fuse_sequence(read_detections(optical_path), read_detections(thermal_path), poses)
    return write_detections(Path(out_dir) / "fused.jsonl", fused)


def run_track(detections_path, out_dir, config: Optional[TrackerConfig] = None, poses_path=None) -> Path:
    frames = range(len(read_poses(poses_path))) if poses_path else None
    tracked = TrackingAgent(config).track_sequence(read_detections(detections_path), frames)
    return write_detections(Path(out_dir) / "tracks.jsonl", tracked)


def run_localize(tracks_path, poses_path, calibration_path, out_dir,
                 config: Optional[GeometryConfig] = None) -> Tuple[Path, Path]:
    """Triangulation runs in the optical camera, where detections are tracked"""
    rig = load_calibration(calibration_path)
    result = LocalizationAgent(rig.optical, config).localize(read_detections(tracks_path), read_poses(poses_path))
    out_dir = Path(out_dir)
    table = write_table(out_dir / "localizations.csv", [loc.as_row() for loc in result.localizations],
                        LOCALIZATION_COLUMNS)
    kept = write_detections(out_dir / "localized.jsonl", result.kept)
    return table, kept


def _load_patch(patches_dir: Optional[Path], name: Optional[str]) -> Optional[np.ndarray]:
    if patches_dir is None or name is None:
        return None
    patch = cv2.imread(str(patches_dir / name), cv2.IMREAD_COLOR)
    if patch is None:
        logger.warning(f"Patch {patches_dir / name} could not be read")
    return patch


def run_reid(localized_path, localizations_path, out_dir, patches_dir=None,
             config: Optional[ReidConfig] = None, pf_config: Optional[PfConfig] = None,
             seed: int = 0, dump_particles: bool = False) -> Dict[str, Path]:
    """
    Re-identify localized tracks

    Localizations are processed in time order. The first kept localization of a
    track is associated against the known humans; later ones update the human
    the track was assigned to.
    """
    detections = read_detections(localized_path)
    table = read_table(localizations_path, LOCALIZATION_COLUMNS)
    table = table[table["decision"] == "keep"].sort_values(["t", "track_id", "frame"], kind="stable")
    patches_dir = Path(patches_dir) if patches_dir else None
    by_key = {(d.human_id, d.frame): d for d in detections}

    agent = ReidAgent(config, pf_config, seed=seed, record_history=True)
    track_to_human: Dict[int, int] = {}
    for row in table.itertuples(index=False):
        track_id, frame = int(row.track_id), int(row.frame)
        det = by_key.get((track_id, frame))
        patch = _load_patch(patches_dir, det.patch if det else None)
        position = (float(row.x), float(row.y))
        if track_id not in track_to_human:
            track_to_human[track_id] = agent.associate(position, frame, float(row.t), patch).human_id
        else:
            agent.update(track_to_human[track_id], position, frame, float(row.t), patch)

    humans = [d.model_copy(update={"human_id": track_to_human[d.human_id]})
              for d in detections if d.human_id in track_to_human]
    estimates, particles = [], []
    for record in sorted(agent.humans, key=lambda h: h.human_id):
        for step, t, state in record.pf.history:
            est = pf_estimate(state)
            cov = est.covariance
            estimates.append({"human_id": record.human_id, "t": t, "x": est.mean[0], "y": est.mean[1],
                              "cov_xx": cov[0, 0], "cov_xy": cov[0, 1], "cov_yy": cov[1, 1]})
            if dump_particles:
                for i, ((x, y), w) in enumerate(zip(state.particles, state.weights)):
                    particles.append({"human_id": record.human_id, "step": step, "t": t,
                                      "particle": i, "x": x, "y": y, "weight": w})

    out_dir = Path(out_dir)
    outputs = {
        "humans": write_detections(out_dir / "humans.jsonl", humans),
        "estimates": write_table(out_dir / "estimates.csv", estimates, ESTIMATE_COLUMNS),
    }
    if dump_particles:
        outputs["particles"] = write_table(out_dir / "particles.csv", particles, PARTICLE_COLUMNS)
    for name, similarity in agent.similarity_report().items():
        path = out_dir / f"similarity_{name}.csv"
        similarity.to_csv(path, index_label="metric")
        outputs[f"similarity_{name}"] = path
    logger.info(f"Re-identified {len(track_to_human)} tracks as {len(agent.humans)} humans")
    return outputs


def run_evaluate(annotations_path, detection_paths: Dict[str, Path], out_dir,
                 config: Optional[EvaluationConfig] = None, plot: bool = False,
                 frames: Optional[Sequence[int]] = None) -> Dict[str, Path]:
    annotations = read_annotations(annotations_path)
    detection_sets = {label: read_detections(path) for label, path in detection_paths.items()}
    report = EvaluationAgent(config).evaluate(annotations, detection_sets, frames)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve_path = out_dir / "curve.csv"
    report.curve_table().to_csv(curve_path, index=False)
    outputs = {"curve": curve_path,
               "summary": write_json(out_dir / "summary.json", {"schema_version": SCHEMA_VERSION,
                                                                 "labels": report.summary})}
    if plot:
        outputs["plot"] = plot_curves(report.curves, out_dir / "curves.svg")
    return outputs


def run_anchor_analysis(annotations_path, image_size: Tuple[int, int], out_dir,
                        config: Optional[AnchorConfig] = None, upscale: Sequence[float] = (1.0,),
                        k: Optional[int] = None, seed: int = 0) -> Dict[str, Path]:
    gt = [a.bbox for a in read_annotations(annotations_path)]
    if not gt:
        raise InputError(f"no annotations in {annotations_path}")
    table = AnchorAnalysisAgent(config).analyze(gt, image_size, upscale)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"coverage": out_dir / "anchor_coverage.csv"}
    table.to_csv(outputs["coverage"], index=False)
    if k:
        result = kmeans_anchors_detailed(gt, k, seed)
        outputs["kmeans"] = write_json(out_dir / "kmeans_anchors.json", {
            "schema_version": SCHEMA_VERSION, "k": k, "seed": seed,
            "anchors": [list(a) for a in result.anchors],
            "objective_history": result.objective_history,
            "iterations": result.iterations,
        })
    return outputs


def run_simulation(scenario: ScenarioSpec, out_dir, seed: Optional[int] = None) -> Dict[str, Path]:
    return write_simulation(simulate(scenario, seed), out_dir)


# ---------------------------------------------------------------- full runs

class PipelineRun:
    """
    One sequence, end to end

    All state lives on the instance, so several runs can share a process.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.stages: Dict[str, StageStatus] = {}
        self.inputs: Dict[str, Path] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        logger.info(f"[{name}] started")
        try:
            yield
        except InputError:
            self.stages[name] = StageStatus.FAILED
            logger.error(f"[{name}] input error")
            raise
        except Exception as e:
            self.stages[name] = StageStatus.FAILED
            logger.error(f"[{name}] failed: {e}")
            raise StageError(name, e) from e
        self.stages[name] = StageStatus.OK
        logger.info(f"[{name}] done")

    def _resolve_inputs(self) -> None:
        cfg = self.config
        if cfg.scenario is not None:
            with self.stage("simulate"):
                paths = run_simulation(cfg.scenario, self.out_dir / "inputs", cfg.seed)
            self.inputs = {k: Path(v) for k, v in paths.items()}
            return
        paths = cfg.inputs
        self.inputs = {
            "optical": _require(paths.optical, "optical detections"),
            "thermal": _require(paths.thermal, "thermal detections"),
            "calibration": _require(paths.calibration, "calibration"),
            "poses": _require(paths.poses, "poses"),
        }
        if paths.annotations:
            self.inputs["annotations"] = _require(paths.annotations, "annotations")
        self.inputs["patches_dir"] = Path(paths.patches_dir) if paths.patches_dir else self.inputs["optical"].parent

    def run(self) -> dict:
        cfg = self.config
        self.out_dir.mkdir(parents=True, exist_ok=True)
        try:
            self._resolve_inputs()
            inp = self.inputs
            with self.stage("fuse"):
                fused = run_fuse(inp["optical"], inp["thermal"], inp["calibration"], self.out_dir,
                                 cfg.fusion, inp["poses"])
            with self.stage("track"):
                tracks = run_track(fused, self.out_dir, cfg.tracker, inp["poses"])
            with self.stage("localize"):
                localizations, localized = run_localize(tracks, inp["poses"], inp["calibration"],
                                                        self.out_dir, cfg.geometry)
            with self.stage("reid"):
                reid = run_reid(localized, localizations, self.out_dir, inp["patches_dir"],
                                cfg.reid, cfg.pf, cfg.seed, cfg.dump_particles)
            if "annotations" in inp:
                with self.stage("evaluate"):
                    frames = range(len(read_poses(inp["poses"])))
                    run_evaluate(inp["annotations"],
                                 {"optical": inp["optical"], "fused": fused, "final": reid["humans"]},
                                 self.out_dir / "evaluation", cfg.evaluation, cfg.plot, frames)
            else:
                self.stages["evaluate"] = StageStatus.SKIPPED
        finally:
            manifest = self.manifest()
            write_json(self.out_dir / MANIFEST_NAME, manifest)
        return manifest

    def _relative(self, path: Path) -> str:
        try:
            return path.resolve().relative_to(self.out_dir.resolve()).as_posix()
        except ValueError:
            return path.as_posix()

    def manifest(self) -> dict:
        """Versions, seed, resolved config, file hashes and stage status; no wall-clock fields"""
        input_files = {p.resolve() for name, p in self.inputs.items() if name != "patches_dir" and p.is_file()}
        outputs = {}
        for path in sorted(self.out_dir.rglob("*")):
            if path.is_file() and path.name != MANIFEST_NAME and path.resolve() not in input_files:
                outputs[self._relative(path)] = sha256_of(path)
        return {
            "schema_version": SCHEMA_VERSION,
            "package_version": VERSION,
            "libraries": library_versions(),
            "seed": self.config.seed,
            "config": self.config.model_dump(mode="json"),
            "inputs": {self._relative(p): sha256_of(p) for p in sorted(input_files)},
            "outputs": outputs,
            "stages": {name: status.value for name, status in self.stages.items()},
        }


def run_pipeline(config: RunConfig) -> dict:
    """
    Raises:
        InputError: unresolvable or invalid input
        StageError: any other failure, tagged with the stage
    """
    return PipelineRun(config).run()


def run_sequences(configs: Sequence[RunConfig], workers: int = 1) -> List[dict]:
    """Independent sequences in a worker pool; each config needs its own out_dir"""
    out_dirs = [Path(c.out_dir).resolve() for c in configs]
    if len(set(out_dirs)) != len(out_dirs):
        raise InputError("sequences must write to distinct output directories")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(run_pipeline, configs))

