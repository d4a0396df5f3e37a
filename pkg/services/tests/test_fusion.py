"""
Tests for cross-spectral mapping, sliding-window matching and merging
"""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from agents.detector_support import BoundingBox, Detection, Spectrum, iou, iou_matrix
from agents.fusion import (CameraRig, FusionAgent, FusionConfig, FusionPair, MergeMode, RigExtrinsics, map_bbox,
                           merge_and, merge_or, pair_frames, resolve_pairs, sliding_window_match, window_placements)
from agents.simulation import NoiseModel, load_scenario, simulate
from utils.errors import OutsideImage

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


@pytest.fixture
def default_scenario():
    return load_scenario(DATA_DIR / "default_scenario.yaml")


def frames_of(result):
    frames = {}
    for d in result.optical:
        frames.setdefault(d.frame, ([], []))[0].append(d)
    for d in result.thermal:
        frames.setdefault(d.frame, ([], []))[1].append(d)
    return [(frame, *frames[frame]) for frame in sorted(frames)]


def test_identity_mapping(intrinsics, detection):
    d = detection([40.0, 30.0, 70.0, 90.0])
    mapped = map_bbox(d, RigExtrinsics(), intrinsics, intrinsics)
    np.testing.assert_allclose(mapped.as_list(), d.bbox.as_list(), atol=1e-6)


def test_horizontal_baseline_shifts_by_disparity(intrinsics, detection):
    rig = RigExtrinsics(translation=[0.5, 0.0, 0.0], assumed_scene_depth=10.0)
    mapped = map_bbox(detection([40.0, 40.0, 60.0, 60.0]), rig, intrinsics, intrinsics)
    np.testing.assert_allclose(mapped.as_list(), [45.0, 40.0, 65.0, 60.0], atol=1e-6)


def test_mapping_clamps_to_destination(intrinsics, detection):
    rig = RigExtrinsics(translation=[1.5, 0.0, 0.0], assumed_scene_depth=10.0)
    mapped = map_bbox(detection([150.0, 40.0, 190.0, 60.0]), rig, intrinsics, intrinsics)
    assert mapped.x_max == 200.0
    assert mapped.x_min == pytest.approx(165.0)


def test_mapping_outside_image(intrinsics, detection):
    rig = RigExtrinsics(translation=[20.0, 0.0, 0.0], assumed_scene_depth=10.0)
    with pytest.raises(OutsideImage):
        map_bbox(detection([40.0, 40.0, 60.0, 60.0]), rig, intrinsics, intrinsics)


def test_candidate_at_mapped_position(detection):
    mapped = BoundingBox.from_list([0, 0, 10, 10])
    result = sliding_window_match(mapped, [detection([0, 0, 10, 10], spectrum=Spectrum.THERMAL)])
    assert result.matched_index == 0
    assert result.iou_at_match == 1.0
    assert result.window.as_list() == [-10.0, -10.0, 20.0, 20.0]


def test_shifted_window_reaches_offset_candidate(detection):
    mapped = BoundingBox.from_list([0, 0, 10, 10])
    candidate = detection([8, 0, 18, 10])
    assert iou(mapped, candidate.bbox) < 0.5
    assert sliding_window_match(mapped, [candidate]).matched_index == 0
    assert sliding_window_match(mapped, [candidate], grid_size=1).matched is None


def test_far_candidate_unmatched(detection):
    result = sliding_window_match(BoundingBox.from_list([0, 0, 10, 10]), [detection([30, 0, 40, 10])])
    assert result.matched is None
    assert result.iou_at_match == 0.0


def test_match_tie_prefers_higher_score(detection):
    mapped = BoundingBox.from_list([0, 0, 10, 10])
    candidates = [detection([0, 0, 10, 10], score=0.4), detection([0, 0, 10, 10], score=0.7)]
    assert sliding_window_match(mapped, candidates).matched_index == 1


@given(st.floats(-500, 500), st.floats(-500, 500),
       st.lists(st.tuples(st.floats(-30, 30), st.floats(-30, 30)), min_size=1, max_size=5))
def test_match_translation_invariant(dx, dy, offsets):
    mapped = BoundingBox.from_list([100, 100, 120, 140])
    candidates = [Detection(bbox=mapped.translated(ox, oy), score=0.5, frame=0) for ox, oy in offsets]
    best = iou_matrix(window_placements(mapped), [c.bbox for c in candidates]).max(axis=0)
    # skip rounding-sensitive threshold crossings and near ties
    assume(np.all(np.abs(best - 0.5) > 1e-9))
    gaps = np.abs(best[:, None] - best[None, :])
    assume(np.all((gaps == 0) | (gaps > 1e-9)))
    moved = [c.model_copy(update={"bbox": c.bbox.translated(dx, dy)}) for c in candidates]
    a = sliding_window_match(mapped, candidates)
    b = sliding_window_match(mapped.translated(dx, dy), moved)
    assert a.matched_index == b.matched_index
    assert a.iou_at_match == pytest.approx(b.iou_at_match, abs=1e-9)


def test_single_placement_equals_plain_iou_matching(detection):
    rng = np.random.default_rng(7)
    mapped = BoundingBox.from_list([50, 50, 70, 90])
    for _ in range(200):
        candidates = [detection(mapped.translated(*rng.uniform(-15, 15, size=2)).as_list(),
                                score=float(rng.uniform(0.1, 1.0))) for _ in range(3)]
        ious = [iou(mapped, c.bbox) for c in candidates]
        result = sliding_window_match(mapped, candidates, grid_size=1)
        eligible = [i for i, v in enumerate(ious) if v >= 0.5]
        if eligible:
            assert result.matched_index == max(eligible, key=lambda i: ious[i])
        else:
            assert result.matched is None


def test_merge_or_averages_pair(detection):
    opt = [detection([0, 0, 10, 10], score=0.8)]
    thm = [detection([0, 0, 5, 5], score=0.6, spectrum=Spectrum.THERMAL)]
    fused = merge_or(opt, thm, [FusionPair(optical_index=0, thermal_index=0, iou=1.0)])
    assert len(fused) == 1
    assert fused[0].score == pytest.approx(0.7)
    assert fused[0].bbox == opt[0].bbox
    assert fused[0].spectrum == Spectrum.OPTICAL


def test_merge_or_passes_unpaired_through(detection):
    opt = [detection([0, 0, 10, 10], score=0.8)]
    assert merge_or(opt, [], []) == opt


def test_merge_counts(detection):
    opt = [detection([0, 0, 10, 10], 0.8), detection([50, 50, 60, 60], 0.5)]
    thm = [detection([0, 0, 10, 10], 0.6, spectrum=Spectrum.THERMAL),
           detection([90, 90, 99, 99], 0.4, spectrum=Spectrum.THERMAL)]
    pairs = [FusionPair(optical_index=0, thermal_index=0, iou=1.0)]
    assert len(merge_or(opt, thm, pairs)) == 3
    assert len(merge_and(opt, thm, pairs)) == 1
    assert merge_and(opt, thm, []) == []


def test_resolve_pairs_dedupes_and_keeps_one_to_one():
    pairs = resolve_pairs([FusionPair(optical_index=0, thermal_index=0, iou=0.9),
                           FusionPair(optical_index=0, thermal_index=0, iou=0.95),
                           FusionPair(optical_index=1, thermal_index=0, iou=0.7),
                           FusionPair(optical_index=1, thermal_index=1, iou=0.6)])
    assert [(p.optical_index, p.thermal_index, p.iou) for p in pairs] == [(0, 0, 0.95), (1, 1, 0.6)]


def test_identical_lists_survive_and(intrinsics, detection):
    rig = CameraRig(optical=intrinsics, thermal=intrinsics)
    opt = [detection([10, 10, 30, 50], 0.9), detection([100, 100, 130, 160], 0.6)]
    thm = [d.model_copy(update={"spectrum": Spectrum.THERMAL}) for d in opt]
    fused = FusionAgent(rig, FusionConfig(mode=MergeMode.AND)).fuse_frame(opt, thm)
    assert [d.score for d in fused] == [0.9, 0.6]


def test_and_is_subset_of_or(intrinsics, detection):
    rig = CameraRig(optical=intrinsics, thermal=intrinsics)
    rng = np.random.default_rng(8)
    for _ in range(50):
        def random_boxes(spectrum):
            out = []
            for _ in range(int(rng.integers(0, 4))):
                x, y = rng.uniform(0, 160, size=2)
                out.append(detection([x, y, x + 20, y + 30], float(rng.uniform(0, 1)), spectrum=spectrum))
            return out
        opt, thm = random_boxes(Spectrum.OPTICAL), random_boxes(Spectrum.THERMAL)
        fused_or = FusionAgent(rig).fuse_frame(opt, thm)
        fused_and = FusionAgent(rig, FusionConfig(mode=MergeMode.AND)).fuse_frame(opt, thm)
        assert all(d in fused_or for d in fused_and)
        for d in fused_and:
            scores = [o.score for o in opt] + [t.score for t in thm]
            assert min(scores) <= d.score <= max(scores)


def test_pair_frames():
    assert pair_frames([0.0, 0.25, 0.5], [0.01, 0.3, 0.9]) == [0, 1, None]
    assert pair_frames([0.0], [0.1, -0.1]) == [1]
    assert pair_frames([0.0], []) == [None]


def test_zero_noise_scenario_pairs_every_thermal_detection(default_scenario):
    result = simulate(default_scenario)
    agent = FusionAgent(result.rig)
    assert result.thermal
    for frame, opt, thm in frames_of(result):
        pairs, _ = agent.match_frame(opt, thm, result.poses[frame])
        assert len(pairs) == len(thm)
        assert all(p.iou >= 0.99 for p in pairs)
        fused = merge_or(opt, thm, pairs)
        for p in pairs:
            assert fused[p.optical_index].score == (opt[p.optical_index].score + thm[p.thermal_index].score) / 2.0


def test_sliding_window_recovers_offset_thermal_boxes(default_scenario):
    clean = simulate(default_scenario)
    width_px = 0.8 * clean.thermal[0].bbox.width
    spec = default_scenario.model_copy(update={"noise": NoiseModel(thermal_offset_px=(width_px, 0.0))})
    result = simulate(spec)
    plain = FusionAgent(result.rig, FusionConfig(grid_size=1))
    sliding = FusionAgent(result.rig)
    n_thermal = 0
    for frame, opt, thm in frames_of(result):
        n_thermal += len(thm)
        plain.match_frame(opt, thm, result.poses[frame])
        sliding.match_frame(opt, thm, result.poses[frame])
    assert n_thermal > 0
    assert plain.pairs_found == 0
    assert sliding.pairs_found == n_thermal


def test_merge_or_keeps_unmapped_thermal_in_thermal_coordinates(detection):
    thm = [detection([0, 0, 10, 10], 0.6, spectrum=Spectrum.THERMAL),
           detection([90, 90, 99, 99], 0.4, spectrum=Spectrum.THERMAL)]
    fused = merge_or([], thm, [], {0: BoundingBox.from_list([5, 5, 15, 15])})
    assert [d.bbox.as_list() for d in fused] == [[5, 5, 15, 15], [90, 90, 99, 99]]
    assert [d.spectrum for d in fused] == [Spectrum.OPTICAL, Spectrum.THERMAL]


def test_or_frame_keeps_thermal_detection_outside_optical_image(intrinsics, detection):
    rig = CameraRig(optical=intrinsics, thermal=intrinsics,
                    extrinsics=RigExtrinsics(translation=[20.0, 0.0, 0.0], assumed_scene_depth=10.0))
    thm = [detection([40, 40, 60, 60], 0.7, spectrum=Spectrum.THERMAL)]
    fused = FusionAgent(rig).fuse_frame([], thm)
    assert fused == thm
    assert FusionAgent(rig, FusionConfig(mode=MergeMode.AND)).fuse_frame([], thm) == []


def test_or_sequence_keeps_thermal_only_frames(intrinsics, detection):
    rig = CameraRig(optical=intrinsics, thermal=intrinsics)
    optical = [detection([10, 10, 30, 50], 0.9)]
    thermal = [detection([10, 10, 30, 50], 0.8, spectrum=Spectrum.THERMAL),
               detection([100, 100, 120, 140], 0.7, frame=1, spectrum=Spectrum.THERMAL, t=0.25)]
    fused = FusionAgent(rig).fuse_sequence(optical, thermal)
    assert [(d.frame, d.score) for d in fused] == [(0, pytest.approx(0.85)), (1, 0.7)]
    assert fused[1].timestamp == 0.25
    assert fused[1].spectrum == Spectrum.OPTICAL
    assert fused[1].bbox.as_list() == pytest.approx([100, 100, 120, 140])


def test_sequence_with_poses_drops_thermal_frames_off_the_flight(intrinsics, detection, nadir_pose):
    rig = CameraRig(optical=intrinsics, thermal=intrinsics)
    optical = [detection([10, 10, 30, 50], 0.9)]
    thermal = [detection([10, 10, 30, 50], 0.8, spectrum=Spectrum.THERMAL),
               detection([100, 100, 120, 140], 0.7, frame=1, spectrum=Spectrum.THERMAL, t=0.25)]
    fused = FusionAgent(rig).fuse_sequence(optical, thermal, [nadir_pose()])
    assert [(d.frame, d.score) for d in fused] == [(0, pytest.approx(0.85))]
