#!/usr/bin/env python3
"""
Tests for the preprocessing pipeline: masking, tail selection, windowing, resizing and dataset assembly
"""

import numpy as np
import pytest

from conftest import make_clip
from src.core.config import resolve
from src.core.errors import (
    ConfigError,
    DatasetError,
    InvalidFrameRateError,
    InvalidRoiError,
    NoWindowError,
    TooShortError,
)
from src.data.clipio import Roi, write_clip
from src.data.pipeline import (
    PipelineConfig,
    build_dataset,
    load_windows,
    mask_roi,
    prepare,
    preprocess_clip,
    resample,
    select_tail,
    window,
)
from src.data.synthgen import ManifestEntry, write_manifest

TINY = PipelineConfig(tail_seconds=2, fps=4, window_seconds=1, target_size=16)


def test_mask_roi_covering_whole_frame_is_identity():
    clip = make_clip(3, value=200)
    assert np.array_equal(mask_roi(clip, Roi(3.5, 3.5, 100.0)).frames, clip.frames)


def test_mask_roi_zero_radius_blanks_everything():
    clip = make_clip(3, value=200)
    assert not mask_roi(clip, Roi(3.5, 3.5, 0.0)).frames.any()


def test_mask_roi_is_idempotent_and_keeps_inside_pixels():
    clip = make_clip(4, height=16, width=16, value=120)
    roi = Roi.auto(16, 16)
    once = mask_roi(clip, roi)
    assert np.array_equal(mask_roi(once, roi).frames, once.frames)
    inside = roi.mask(16, 16)
    assert np.all(once.frames[:, inside] == 120)
    assert not once.frames[:, ~inside].any()
    assert clip.frames.min() == 120


def test_mask_roi_rejects_bad_circles():
    clip = make_clip(2)
    with pytest.raises(InvalidRoiError):
        mask_roi(clip, Roi(3.0, 3.0, -1.0))
    with pytest.raises(InvalidRoiError):
        mask_roi(clip, Roi(20.0, 3.0, 2.0))
    with pytest.raises(InvalidRoiError):
        mask_roi(clip, Roi(3.0, 3.0, float("nan")))


def test_select_tail_keeps_last_ten_seconds():
    clip = make_clip(450)
    tail = select_tail(clip, 10)
    assert tail.num_frames == 150
    assert tail.frames[0, 0, 0, 0] == 300 % 256


def test_select_tail_exact_length_is_unchanged():
    clip = make_clip(150)
    assert np.array_equal(select_tail(clip, 10).frames, clip.frames)


def test_select_tail_too_short():
    with pytest.raises(TooShortError):
        select_tail(make_clip(135), 10)


def test_resample_halves_frame_rate():
    resampled = resample(make_clip(60, fps=30), 15)
    assert resampled.num_frames == 30 and resampled.fps == 15
    assert resampled.frames[:, 0, 0, 0].tolist() == list(range(0, 60, 2))


def test_resample_refuses_upsampling():
    with pytest.raises(InvalidFrameRateError):
        resample(make_clip(10, fps=10), 15)


def test_window_counts():
    assert len(window(make_clip(150))) == 5
    assert len(window(make_clip(59))) == 1
    single = window(make_clip(30))
    assert len(single) == 1 and np.array_equal(single[0], make_clip(30).frames)
    with pytest.raises(NoWindowError):
        window(make_clip(29))


def test_windows_do_not_overlap():
    windows = window(make_clip(150))
    assert [w[0, 0, 0, 0] for w in windows] == [0, 30, 60, 90, 120]
    assert all(w.shape == (30, 8, 8, 3) for w in windows)


def test_prepare_identity_size():
    frames = make_clip(2, value=51).frames
    out = prepare(frames, (8, 8))
    assert out.dtype == np.float32
    assert np.allclose(out, 0.2)


def test_prepare_white_is_one():
    assert np.allclose(prepare(make_clip(1, value=255).frames, (4, 4)), 1.0)


def test_prepare_bilinear_oracle():
    """2x2 checkerboard upsampled to 4x4 with half-pixel centres"""
    board = np.array([[255, 0], [0, 255]], dtype=np.uint8)
    frames = np.repeat(board[None, :, :, None], 3, axis=-1)
    a = np.array([[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]])
    expected = a @ board.astype(np.float64) @ a.T / 255.0
    out = prepare(frames, (4, 4))
    assert out.shape == (1, 4, 4, 3)
    for channel in range(3):
        assert np.max(np.abs(out[0, :, :, channel] - expected)) < 1e-6


def test_thirty_second_clip_gives_five_windows():
    config = PipelineConfig(target_size=16)
    samples = preprocess_clip(make_clip(450, height=16, width=16), config)
    assert len(samples) == 5
    assert all(s.shape == (30, 16, 16, 3) for s in samples)
    assert config.input_shape == (30, 16, 16, 3)


def test_max_windows_limits_samples():
    config = PipelineConfig(target_size=8, max_windows=2)
    assert len(preprocess_clip(make_clip(450), config)) == 2


def test_window_config_must_be_whole_frames():
    with pytest.raises(ConfigError):
        resolve(PipelineConfig, cli={"fps": 15, "window_seconds": 0.1})


def test_full_scale_preset_gives_full_size_windows():
    config = resolve(PipelineConfig, preset="full-scale")
    assert (config.frames_per_window, config.target_size, config.fps) == (30, 224, 15)
    with pytest.raises(ConfigError):
        resolve(PipelineConfig, preset="huge")


def test_build_dataset_splits(tiny_clips):
    manifest, entries = tiny_clips
    datasets, report = build_dataset(manifest, TINY)
    assert report.counts == {"train": 4, "val": 4, "test": 4}
    assert not report.skips
    train = datasets["train"]
    assert train.sample_shape == (4, 16, 16, 3)
    assert [r.window_index for r in train.records] == [0, 1, 0, 1]
    assert train.labels.tolist() == [40.0, 40.0, 70.0, 70.0]
    inputs, targets = train.batch([0, 3])
    assert inputs.shape == (2, 4, 16, 16, 3) and targets.data.ravel().tolist() == [40.0, 70.0]


def test_build_dataset_threads_keep_order(tiny_clips):
    manifest, _ = tiny_clips
    serial, _ = build_dataset(manifest, TINY)
    parallel, _ = build_dataset(manifest, TINY, threads=3)
    for split in ("train", "val", "test"):
        assert serial[split].records == parallel[split].records
        assert all(np.array_equal(a, b) for a, b in zip(serial[split].samples, parallel[split].samples))


def test_unreadable_clip_is_skipped(tiny_clips, tmp_path):
    _, entries = tiny_clips
    (tmp_path / entries[1].path).write_bytes(b"not a clip")
    datasets, report = build_dataset(entries[:3], TINY, root=tmp_path)
    assert [s.path for s in report.skips] == [entries[1].path]
    assert report.counts["train"] == 2 and report.counts["val"] == 2


def test_too_many_unreadable_clips(tiny_clips, tmp_path):
    _, entries = tiny_clips
    for entry in entries[:2]:
        (tmp_path / entry.path).write_bytes(b"")
    with pytest.raises(DatasetError):
        build_dataset(entries, TINY, root=tmp_path)


def test_empty_manifest(tmp_path):
    with pytest.raises(DatasetError):
        build_dataset([], TINY)
    path = write_manifest(tmp_path / "manifest.csv", [])
    with pytest.raises(DatasetError):
        build_dataset(path, TINY)


def test_split_filter(tiny_clips):
    manifest, _ = tiny_clips
    datasets, report = build_dataset(manifest, TINY, splits=("test",))
    assert list(datasets) == ["test"] and report.counts == {"test": 4}


def test_cache_is_reused(tiny_clips, tmp_path):
    manifest, entries = tiny_clips
    config = TINY.model_copy(update={"cache_dir": tmp_path / "cache"})
    clip_path = manifest.parent / entries[0].path
    first = load_windows(clip_path, config)
    cached = list((tmp_path / "cache").iterdir())
    assert len(cached) == 1
    second = load_windows(clip_path, config)
    assert list((tmp_path / "cache").iterdir()) == cached
    assert all(np.array_equal(a, b) for a, b in zip(first, second))
    assert np.array_equal(first[0], load_windows(clip_path, TINY)[0])


def test_sample_record_rejects_bad_labels(tmp_path):
    write_clip(tmp_path / "c.cwv", make_clip(12, height=16, width=16, fps=4))
    entries = [ManifestEntry("c.cwv", float("nan"), "train", 0)]
    with pytest.raises(DatasetError):
        build_dataset(entries, TINY, root=tmp_path)
