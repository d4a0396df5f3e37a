"""
Tests for run configuration layering
"""

from pathlib import Path

import pytest

from agents.fusion import MergeMode
from utils.config import RunConfig, env_overrides, load_run_config, with_overrides
from utils.errors import InputError, SchemaError

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


def test_defaults():
    cfg = load_run_config(environ={})
    assert cfg == RunConfig()
    assert (cfg.seed, cfg.pf.n, cfg.pf.sigma_z, cfg.geometry.t_area) == (0, 100, 3.0, 3.0)
    assert cfg.fusion.mode == MergeMode.OR


def test_packaged_run_config():
    cfg = load_run_config(DATA_DIR / "noisy_run.yaml", environ={})
    assert (cfg.seed, cfg.out_dir, cfg.plot) == (3, "out/noisy", True)
    assert cfg.scenario.name == "default-noisy"
    assert cfg.scenario.noise.miss_rate == 0.5


def test_precedence_cli_over_env_over_file():
    path = DATA_DIR / "noisy_run.yaml"
    assert load_run_config(path, environ={"RESCUE_SEED": "11"}).seed == 11
    assert load_run_config(path, {"seed": 5}, environ={"RESCUE_SEED": "11"}).seed == 5
    assert load_run_config(path, {"seed": None}, environ={}).seed == 3


def test_env_overrides():
    overrides = env_overrides({"RESCUE_SEED": "4", "RESCUE_OUT_DIR": "/tmp/x", "RESCUE_LOG_LEVEL": "debug"})
    assert overrides == {"seed": 4, "out_dir": "/tmp/x", "log_level": "DEBUG"}
    with pytest.raises(InputError):
        env_overrides({"RESCUE_SEED": "four"})


def test_dotted_overrides():
    cfg = with_overrides(RunConfig(), {"pf.n": 50, "fusion.mode": "and"})
    assert cfg.pf.n == 50
    assert cfg.fusion.mode == MergeMode.AND
    with pytest.raises(SchemaError):
        with_overrides(RunConfig(), {"pf.n": 0})


def test_unknown_log_level():
    with pytest.raises(InputError):
        load_run_config(environ={"RESCUE_LOG_LEVEL": "chatty"})


def test_input_paths_relative_to_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("inputs:\n  optical: dets/optical.jsonl\n  poses: /abs/poses.csv\n")
    cfg = load_run_config(path, environ={})
    assert cfg.inputs.optical == str(tmp_path / "dets" / "optical.jsonl")
    assert cfg.inputs.poses == "/abs/poses.csv"
