"""
Tests for the REST API
"""

import cv2
import numpy as np
import pytest
from fastapi.testclient import TestClient

from agents.fusion import CameraRig
from main import app
from utils.calibration import CalibrationFile

BOX = [10.0, 10.0, 30.0, 50.0]


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def record(bbox=BOX, score=0.8, frame=0, spectrum="optical"):
    return {"frame": frame, "t": frame * 0.25, "spectrum": spectrum, "bbox": bbox, "score": score}


def png_of(patch: np.ndarray) -> bytes:
    ok, buffer = cv2.imencode(".png", patch)
    assert ok
    return buffer.tobytes()


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert response.json()["endpoints"]["frame_fusion"] == "/fusion/frame"


def test_health(client):
    data = client.get("/health").json()
    assert data["status"] == "healthy"
    assert data["version"] == "1.0.0"


def test_detailed_health(client):
    data = client.get("/health/detailed").json()
    assert data["status"] == "healthy"
    assert data["agent_summary"] == "5/5 agents healthy"


def test_anchor_analysis(client):
    boxes = [[0, 0, 16, 16], [40, 40, 56, 56], [100, 100, 164, 164], [200, 200, 232, 232]]
    response = client.post("/anchors/analyze", json={"boxes": boxes, "image_size": [256, 256], "k": 2})
    assert response.status_code == 200
    data = response.json()
    assert data["success"] is True
    assert len(data["coverage"]) == 4
    assert {row["rule"] for row in data["coverage"]} == {"retinanet", "yolo"}
    assert len(data["kmeans_anchors"]) == 2


def test_anchor_analysis_rejects_bad_upscale(client):
    response = client.post("/anchors/analyze", json={"boxes": [[0, 0, 8, 8]], "image_size": [64, 64],
                                                      "upscale": [0.0]})
    assert response.status_code == 422


def test_anchor_analysis_too_few_boxes_for_k(client):
    response = client.post("/anchors/analyze", json={"boxes": [[0, 0, 8, 8]], "image_size": [64, 64], "k": 3})
    assert response.status_code == 400
    assert "TooFewSamples" in response.json()["detail"]


def test_fusion_and_mode(client, intrinsics):
    calibration = CalibrationFile.from_rig(CameraRig(optical=intrinsics, thermal=intrinsics))
    payload = {
        "optical": [record(score=0.8), record([150, 150, 170, 190], 0.6)],
        "thermal": [record(score=0.4, spectrum="thermal")],
        "calibration": calibration.model_dump(mode="json"),
        "mode": "and",
    }
    response = client.post("/fusion/frame", json=payload)
    assert response.status_code == 200
    data = response.json()
    assert data["pairs"] == 1
    assert len(data["fused"]) == 1
    assert data["fused"][0]["score"] == pytest.approx(0.6)
    assert data["fused"][0]["bbox"] == BOX


def test_fusion_rejects_unordered_box(client):
    response = client.post("/fusion/frame", json={"optical": [record([30, 10, 10, 50])]})
    assert response.status_code == 422


def test_tracking(client):
    detections = [record(frame=0), record(frame=1), record([150, 150, 170, 190], frame=1)]
    response = client.post("/tracking/sequence", json={"detections": detections})
    assert response.status_code == 200
    data = response.json()
    assert data["n_tracks"] == 2
    assert [d["id"] for d in data["tracks"]] == [1, 1, 2]


def test_tracking_frames_and_config(client):
    response = client.post("/tracking/sequence", json={"detections": [record(frame=1)], "frames": [0, 1, 2]})
    assert response.status_code == 200
    response = client.post("/tracking/sequence", json={"detections": [], "config": {"downsample_factor": 0.5}})
    assert response.status_code == 422


def test_patch_histogram(client, solid_patch):
    files = {"file": ("patch.png", png_of(solid_patch((0, 0, 220))), "image/png")}
    response = client.post("/reid/histogram", files=files, params={"masked": "false"})
    assert response.status_code == 200
    data = response.json()
    assert data["patch_size"] == [20, 40]
    assert data["nonzero_bins"] == 1
    assert data["top_bins"][0] == {"hue_bin": 0, "saturation_bin": 31, "mass": pytest.approx(1.0)}
    assert data["foreground_fraction"] == 1.0


def test_patch_histogram_masked(client, solid_patch):
    files = {"file": ("patch.png", png_of(solid_patch((0, 0, 220))), "image/png")}
    data = client.post("/reid/histogram", files=files).json()
    assert data["masked"] is True
    assert 0.0 < data["foreground_fraction"] < 1.0


@pytest.mark.parametrize("name, content", [("patch.gif", b"GIF89a"), ("patch.png", b"not an image")])
def test_patch_histogram_bad_upload(client, name, content):
    response = client.post("/reid/histogram", files={"file": (name, content, "application/octet-stream")})
    assert response.status_code == 400


def test_evaluation(client):
    annotation = {"frame": 0, "bbox": BOX, "human_id": 1, "posture": "lying"}
    payload = {"annotations": [annotation], "detections": {"optical": [record()], "none": []}}
    response = client.post("/evaluation/curve", json=payload)
    assert response.status_code == 200
    data = response.json()
    assert data["summary"]["optical"]["per_id_missrate"] == 0.0
    assert data["summary"]["none"]["per_id_missrate"] == 1.0
    assert data["curves"]["none"]["log_average_missrate"] == pytest.approx(1.0)


def test_evaluation_without_ground_truth(client):
    response = client.post("/evaluation/curve", json={"annotations": [], "detections": {"optical": [record()]}})
    assert response.status_code == 400
    assert "EmptyGroundTruth" in response.json()["detail"]
