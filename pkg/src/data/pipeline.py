"""
Raw clip -> model-ready samples
Mask, keep the tail, resample, cut fixed windows, resize and normalize
"""

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np
from pydantic import Field, model_validator

from src.core.config import Settings
from src.core.errors import (
    DatasetError,
    InvalidFrameRateError,
    InvalidRoiError,
    NoWindowError,
    SlumpVisionError,
    TooShortError,
)
from src.core.log import get_logger
from src.core.tensor import Tensor
from src.data.clipio import Roi, VideoClip, read_clip, write_clip
from src.data.synthgen import SPLITS, ManifestEntry, read_manifest

logger = get_logger("pipeline")


class PipelineConfig(Settings):
    """Preprocessing options"""

    tail_seconds: float = Field(10.0, gt=0, description="Seconds kept from the end of each raw clip")
    fps: int = Field(15, ge=1, description="Sampling rate of model windows")
    window_seconds: float = Field(2.0, gt=0, description="Length of one model window in seconds")
    target_size: int = Field(224, ge=8, description="Square frame size fed to the model")
    roi: str = Field("auto", description="'auto' or 'cy,cx,r' in raw-frame pixels")
    max_windows: int = Field(0, ge=0, description="Windows kept per clip; 0 keeps all")
    cache_dir: Optional[Path] = Field(None, description="Directory for prepared f32 windows")
    skip_fraction: float = Field(0.1, ge=0, le=1, description="Share of unreadable clips tolerated")

    @model_validator(mode="after")
    def _check_window(self):
        frames = self.fps * self.window_seconds
        if abs(frames - round(frames)) > 1e-9 or round(frames) < 1:
            raise ValueError(f"fps * window_seconds must be a whole number of frames, got {frames}")
        return self

    @property
    def frames_per_window(self) -> int:
        return int(round(self.fps * self.window_seconds))

    @property
    def input_shape(self) -> Tuple[int, int, int, int]:
        return (self.frames_per_window, self.target_size, self.target_size, 3)


@dataclass(frozen=True)
class SampleRecord:
    clip_path: str
    slump: float
    split: str
    window_index: int

    def __post_init__(self):
        if not math.isfinite(self.slump):
            raise DatasetError(f"{self.clip_path}: label is not finite")
        if self.split not in SPLITS:
            raise DatasetError(f"{self.clip_path}: unknown split '{self.split}'")


@dataclass(frozen=True)
class SkipRecord:
    path: str
    reason: str


@dataclass
class VideoDataset:
    """Prepared windows of one split with their labels"""

    split: str
    records: List[SampleRecord] = field(default_factory=list)
    samples: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.slump for r in self.records], dtype=np.float64)

    @property
    def sample_shape(self) -> Optional[Tuple[int, ...]]:
        return tuple(self.samples[0].shape) if self.samples else None

    def batch(self, indices: Sequence[int], dtype=np.float32) -> Tuple[Tensor, Tensor]:
        """Inputs [N,T,H,W,3] and targets [N,1]"""
        inputs = np.stack([self.samples[i] for i in indices]).astype(dtype, copy=False)
        targets = np.array([[self.records[i].slump] for i in indices], dtype=dtype)
        return Tensor(inputs), Tensor(targets)


@dataclass
class BuildReport:
    counts: Dict[str, int] = field(default_factory=dict)
    clips: Dict[str, int] = field(default_factory=dict)
    skips: List[SkipRecord] = field(default_factory=list)


def mask_roi(clip: VideoClip, roi: Roi) -> VideoClip:
    """Zero every pixel outside the circle; inside pixels are untouched"""
    if not (math.isfinite(roi.radius) and roi.radius >= 0):
        raise InvalidRoiError(f"ROI radius must be a non-negative number, got {roi.radius}")
    if not (0 <= roi.cy <= clip.height - 1 and 0 <= roi.cx <= clip.width - 1):
        raise InvalidRoiError(f"ROI centre ({roi.cy}, {roi.cx}) lies outside a {clip.height}x{clip.width} frame")
    inside = roi.mask(clip.height, clip.width)
    frames = clip.frames.copy()
    frames[:, ~inside] = 0
    return VideoClip(frames=frames, fps=clip.fps)


def select_tail(clip: VideoClip, seconds: float) -> VideoClip:
    """Keep the last ceil(seconds * fps) frames"""
    needed = math.ceil(seconds * clip.fps - 1e-9)
    if clip.num_frames < needed:
        raise TooShortError(f"Clip has {clip.duration:.2f} s, at least {seconds} s are required")
    return VideoClip(frames=clip.frames[clip.num_frames - needed:], fps=clip.fps)


def resample(clip: VideoClip, fps: int) -> VideoClip:
    """Nearest-frame index mapping to a lower or equal frame rate"""
    if clip.fps < fps:
        raise InvalidFrameRateError(f"Cannot resample {clip.fps} fps up to {fps} fps")
    if clip.fps == fps:
        return clip
    count = clip.num_frames * fps // clip.fps
    if count < 1:
        raise NoWindowError(f"{clip.num_frames} frames at {clip.fps} fps leave nothing at {fps} fps")
    index = np.minimum(clip.num_frames - 1, np.floor(np.arange(count) * clip.fps / fps + 0.5).astype(np.int64))
    return VideoClip(frames=clip.frames[index], fps=fps)


def window(clip: VideoClip, fps: int = 15, seconds: float = 2.0) -> List[np.ndarray]:
    """Non-overlapping windows after resampling; a trailing partial window is dropped"""
    length = int(round(fps * seconds))
    resampled = resample(clip, fps)
    count = resampled.num_frames // length
    if count < 1:
        raise NoWindowError(f"{resampled.num_frames} frames at {fps} fps are fewer than one {length}-frame window")
    return [resampled.frames[i * length:(i + 1) * length] for i in range(count)]


def prepare(frames: np.ndarray, target: Tuple[int, int] = (224, 224)) -> np.ndarray:
    """Cast to f32, bilinear resize per frame, divide by 255"""
    frames = frames.astype(np.float32)
    height, width = target
    if frames.shape[1:3] != (height, width):
        frames = np.stack([cv2.resize(frame, (width, height), interpolation=cv2.INTER_LINEAR)
                           for frame in frames])
    return frames / np.float32(255.0)


def preprocess_clip(clip: VideoClip, config: PipelineConfig) -> List[np.ndarray]:
    """Run every stage on one decoded clip"""
    roi = Roi.parse(config.roi, clip.height, clip.width)
    clip = select_tail(mask_roi(clip, roi), config.tail_seconds)
    windows = window(clip, config.fps, config.window_seconds)
    if config.max_windows:
        windows = windows[:config.max_windows]
    return [prepare(w, (config.target_size, config.target_size)) for w in windows]


def _cache_path(config: PipelineConfig, clip_path: Path) -> Optional[Path]:
    if config.cache_dir is None:
        return None
    stat = clip_path.stat()
    settings = config.model_dump(mode="json", exclude={"cache_dir", "skip_fraction"})
    key = json.dumps({"clip": str(clip_path.resolve()), "size": stat.st_size, "mtime": stat.st_mtime_ns,
                      "config": settings}, sort_keys=True)
    return Path(config.cache_dir) / f"{hashlib.sha1(key.encode()).hexdigest()}.cwv"


def load_windows(clip_path: Path, config: PipelineConfig) -> List[np.ndarray]:
    """Prepared windows for one clip file, served from the cache when present"""
    cached = _cache_path(config, clip_path)
    length = config.frames_per_window
    if cached is not None and cached.is_file():
        frames = read_clip(cached).frames
        return [frames[i:i + length] for i in range(0, frames.shape[0], length)]
    windows = preprocess_clip(read_clip(clip_path), config)
    if cached is not None:
        write_clip(cached, VideoClip(frames=np.concatenate(windows), fps=config.fps))
    return windows


def build_dataset(manifest: Union[Path, Sequence[ManifestEntry]], config: PipelineConfig,
                  root: Optional[Path] = None, splits: Sequence[str] = SPLITS,
                  threads: int = 1) -> Tuple[Dict[str, VideoDataset], BuildReport]:
    """Datasets per split in manifest order; unreadable clips become skip records"""
    if isinstance(manifest, (str, Path)):
        root = Path(manifest).parent if root is None else root
        entries = read_manifest(Path(manifest))
    else:
        entries = list(manifest)
    root = Path(root) if root is not None else Path(".")
    if not entries:
        raise DatasetError("Manifest is empty")
    entries = [e for e in entries if e.split in splits]
    if not entries:
        raise DatasetError(f"Manifest has no clips in split(s) {', '.join(splits)}")

    def process(entry: ManifestEntry):
        try:
            return load_windows(root / entry.path, config)
        except (SlumpVisionError, OSError) as e:
            return SkipRecord(path=entry.path, reason=str(e))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(process, entries))
    else:
        results = [process(entry) for entry in entries]

    report = BuildReport()
    datasets = {name: VideoDataset(split=name) for name in splits}
    for entry, result in zip(entries, results):
        if isinstance(result, SkipRecord):
            logger.warning(f"Skipping {result.path}: {result.reason}")
            report.skips.append(result)
            continue
        dataset = datasets[entry.split]
        for index, sample in enumerate(result):
            dataset.records.append(SampleRecord(entry.path, entry.slump_cm, entry.split, index))
            dataset.samples.append(sample)
        report.clips[entry.split] = report.clips.get(entry.split, 0) + 1

    tolerance = max(1, int(config.skip_fraction * len(entries)))
    if len(report.skips) > tolerance:
        raise DatasetError(f"{len(report.skips)} of {len(entries)} clips unreadable (tolerance {tolerance})")
    report.counts = {name: len(datasets[name]) for name in splits}
    logger.info("Samples per split: " + ", ".join(f"{k}={v}" for k, v in report.counts.items()))
    return datasets, report
