import logging

import cv2
import numpy as np
import pytest

from orbit_recon.scene.flyaround import TrajectorySpec, generate_flyaround
from orbit_recon.scene.primitives import get_preset
from orbit_recon.segmentation import (
    apply_mask,
    compare_modes,
    mask_iou,
    segment_frame,
    segment_sequence,
)


def _disks(shape=(120, 160), disks=(((40, 40), 10), ((120, 80), 6)), value=200):
    frame = np.zeros(shape + (3,), np.uint8)
    for centre, radius in disks:
        cv2.circle(frame, centre, radius, (value, value, value), thickness=-1)
    return frame


def _disk_mask(shape, centre, radius):
    mask = np.zeros(shape, np.uint8)
    cv2.circle(mask, centre, radius, 1, thickness=-1)
    return mask.astype(bool)


def _n_components(mask):
    count, _ = cv2.connectedComponents(mask.astype(np.uint8), connectivity=8)
    return count - 1


def test_image_mode_keeps_largest_component():
    frame = _disks()
    mask = segment_frame(frame)
    assert mask_iou(mask, _disk_mask(frame.shape[:2], (40, 40), 10)) >= 0.95


def test_video_mode_follows_previous_mask():
    frame = _disks()
    prev = _disk_mask(frame.shape[:2], (121, 80), 6)
    mask = segment_frame(frame, prev)
    assert mask_iou(mask, _disk_mask(frame.shape[:2], (120, 80), 6)) >= 0.95


def test_all_black_frame_gives_empty_mask():
    assert not segment_frame(np.zeros((30, 40, 3), np.uint8)).any()


def test_small_components_are_dropped():
    frame = _disks(disks=(((20, 20), 2),))
    assert not segment_frame(frame).any()


def test_segment_frame_validation():
    with pytest.raises(ValueError, match="empty frame"):
        segment_frame(np.zeros((0, 0, 3), np.uint8))
    with pytest.raises(ValueError, match="does not match"):
        segment_frame(np.zeros((10, 10, 3), np.uint8), np.zeros((5, 5), bool))


def test_black_background_sequence(sphere_dataset):
    masks = segment_sequence(sphere_dataset.frames, "video")
    for mask, gt in zip(masks, sphere_dataset.gt_masks):
        assert mask_iou(mask, gt) >= 0.98
        assert _n_components(mask) == 1
    for previous, current in zip(masks, masks[1:]):
        assert mask_iou(previous, current) >= 0.7


def test_compare_modes_on_black_background(sphere_dataset):
    result = compare_modes(sphere_dataset.frames[:4], sphere_dataset.gt_masks[:4])
    assert set(result) == {"image", "video"}
    assert min(result.values()) >= 0.98


@pytest.mark.slow
def test_video_mode_with_earth_background(small_camera):
    dataset = generate_flyaround(
        get_preset("sphere"),
        TrajectorySpec(16, jitter_deg=0.0),
        small_camera,
        backgrounds="alternating",
        background_period=4,
    )
    masks = segment_sequence(dataset.frames, "video")
    earth = [i for i, kind in enumerate(dataset.backgrounds) if kind == "earthlike"]
    scores = [mask_iou(masks[i], dataset.gt_masks[i]) for i in earth]
    assert np.mean(scores) >= 0.90


def test_segment_sequence_off_mode(sphere_dataset):
    masks = segment_sequence(sphere_dataset.frames[:3], "off")
    assert masks.shape == (3, 48, 64)
    assert masks.all()


def test_segment_sequence_unknown_mode(sphere_dataset):
    with pytest.raises(ValueError, match="unknown segmentation mode"):
        segment_sequence(sphere_dataset.frames[:1], "sam")


def test_empty_mask_warning(caplog):
    frames = np.zeros((2, 20, 20, 3), np.uint8)
    with caplog.at_level(logging.WARNING):
        segment_sequence(frames, "image")
    assert "frame 0: no foreground component found [orbit.empty_mask]" in caplog.text
    caplog.clear()
    with caplog.at_level(logging.WARNING):
        segment_sequence(frames, "image", suppress_warnings=["orbit.empty_mask"])
    assert caplog.text == ""


def test_apply_mask():
    frame = np.random.default_rng(0).integers(1, 255, size=(10, 20, 3), dtype=np.uint8)
    full = np.ones((10, 20), bool)
    half = np.zeros((10, 20), bool)
    half[:, :10] = True
    np.testing.assert_array_equal(apply_mask(frame, full), frame)
    assert not apply_mask(frame, ~full).any()
    masked = apply_mask(frame, half)
    np.testing.assert_array_equal(masked[:, :10], frame[:, :10])
    assert not masked[:, 10:].any()
    np.testing.assert_array_equal(apply_mask(masked, half), masked)
    with pytest.raises(ValueError):
        apply_mask(frame, full[:5])


def test_mask_iou():
    empty = np.zeros((10, 10), bool)
    assert mask_iou(empty, empty) == 1.0
    small = empty.copy()
    small[:5, :] = True
    large = empty.copy()
    large[:, :] = True
    assert mask_iou(large, large) == 1.0
    assert mask_iou(small, ~small) == 0.0
    assert mask_iou(small, large) == 0.5
    with pytest.raises(ValueError):
        mask_iou(empty, empty[:5])
