"""
Tests for the on-disk record formats
"""

import numpy as np
import pytest

from agents.detector_support import Spectrum
from agents.geometry import Pose
from agents.simulation import NADIR_ROTATION
from utils.errors import InputError, ParseError, SchemaError
from utils.records import (AnnotationRecord, DetectionRecord, get_importer, read_annotations, read_detections,
                           read_jsonl, read_poses, read_table, read_yaml, write_annotations, write_detections,
                           write_poses, write_table)

DETECTION_LINE = '{"schema_version": 1, "frame": 0, "t": 0.0, "spectrum": "optical", "bbox": [1, 2, 3, 4], "score": 0.5}'


def test_detections_read_back(tmp_path, detection):
    dets = [detection([0.5, 1.25, 10.0, 30.0], 0.75, frame=3, t=0.75, human_id=4),
            detection([5.0, 5.0, 6.0, 9.0], 0.25, spectrum=Spectrum.THERMAL)]
    path = write_detections(tmp_path / "d.jsonl", dets)
    assert read_detections(path) == dets
    assert '"id"' not in path.read_text().splitlines()[1]


def test_annotations_read_back(tmp_path, annotation):
    annotations = [annotation([0, 0, 10, 30], 2, frame=1, occluded=True)]
    assert read_annotations(write_annotations(tmp_path / "a.jsonl", annotations)) == annotations


def test_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(f"\n{DETECTION_LINE}\n\n")
    assert len(read_jsonl(path, DetectionRecord)) == 1


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(f"{DETECTION_LINE}\n{{not json\n")
    with pytest.raises(ParseError) as info:
        read_detections(path)
    assert info.value.line == 2
    assert info.value.exit_code == 2


@pytest.mark.parametrize("field, line", [
    ("bbox", '{"frame": 0, "t": 0, "spectrum": "optical", "bbox": [5, 0, 1, 4], "score": 0.5}'),
    ("score", '{"frame": 0, "t": 0, "spectrum": "optical", "bbox": [0, 0, 1, 4], "score": 1.5}'),
    ("spectrum", '{"frame": 0, "t": 0, "spectrum": "radar", "bbox": [0, 0, 1, 4], "score": 0.5}'),
    ("schema_version", '{"schema_version": 2, "frame": 0, "t": 0, "spectrum": "optical", '
                       '"bbox": [0, 0, 1, 4], "score": 0.5}'),
])
def test_schema_violations(tmp_path, field, line):
    path = tmp_path / "d.jsonl"
    path.write_text(f"{DETECTION_LINE}\n{line}\n")
    with pytest.raises(SchemaError) as info:
        read_detections(path)
    assert (info.value.field, info.value.line) == (field, 2)


def test_missing_file(tmp_path):
    with pytest.raises(InputError):
        read_detections(tmp_path / "missing.jsonl")


def test_annotation_needs_posture(tmp_path):
    path = tmp_path / "a.jsonl"
    path.write_text('{"frame": 0, "bbox": [0, 0, 1, 1], "human_id": 1}\n')
    with pytest.raises(SchemaError) as info:
        read_jsonl(path, AnnotationRecord)
    assert info.value.field == "posture"


def test_poses_read_back(tmp_path):
    poses = [Pose(rotation=NADIR_ROTATION, translation=[1.0, 2.0 * k, 40.0], timestamp=0.25 * k) for k in range(4)]
    read = read_poses(write_poses(tmp_path / "poses.csv", poses))
    for a, b in zip(poses, read):
        np.testing.assert_allclose(b.rotation, a.rotation, atol=1e-12)
        np.testing.assert_allclose(b.translation, a.translation)
        assert b.timestamp == a.timestamp


def test_pose_csv_needs_every_column(tmp_path):
    path = tmp_path / "poses.csv"
    path.write_text("timestamp,tx,ty,tz,qw,qx,qy\n0,0,0,40,1,0,0\n")
    with pytest.raises(SchemaError) as info:
        read_poses(path)
    assert info.value.field == "qz"


def test_pose_csv_rejects_zero_quaternion(tmp_path):
    path = tmp_path / "poses.csv"
    path.write_text("timestamp,tx,ty,tz,qw,qx,qy,qz\n0,0,0,40,0,0,0,0\n")
    with pytest.raises(SchemaError):
        read_poses(path)


def test_invalid_yaml_reports_line(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("a: 1\nb: [unclosed\n")
    with pytest.raises(ParseError) as info:
        read_yaml(path, AnnotationRecord)
    assert info.value.line >= 2


def test_tables(tmp_path):
    path = write_table(tmp_path / "t.csv", [{"a": 1, "b": 2.5}], ["a", "b"])
    assert read_table(path, ["a"]).loc[0, "b"] == 2.5
    with pytest.raises(SchemaError):
        read_table(path, ["c"])


def test_importer_registry(tmp_path, annotation):
    path = write_annotations(tmp_path / "a.jsonl", [annotation([0, 0, 4, 4])])
    assert len(get_importer("jsonl").read(path)) == 1
    with pytest.raises(InputError):
        get_importer("coco")
