"""
Procedural concrete-mixing clips with a known slump
Three monotone cues: texture smoothness, blade speed and specular streak density
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np
import pandas as pd
from pydantic import Field, model_validator

from src.core.config import Settings
from src.core.errors import ConfigError, InvalidRoiError
from src.core.log import get_logger
from src.core.rng import RngStream
from src.data.clipio import Roi, VideoClip, write_clip

logger = get_logger("synthgen")

SLUMP_RANGE = (40.0, 190.0)
DEFAULT_RATIOS = (185 / 255, 35 / 255, 35 / 255)
SPLITS = ("train", "val", "test")
MANIFEST_COLUMNS = ["path", "slump_cm", "split", "seed"]

TINT = np.array([1.0, 0.97, 0.92], dtype=np.float32)
BLADES = 3
OMEGA_STIFF = 2.4  # rad/s at the lowest slump
OMEGA_WET = 0.6
STREAK_LENGTH = 5.0


class SynthSettings(Settings):
    """Dataset synthesis options"""

    n: int = Field(255, ge=3, description="Number of clips to synthesize")
    slump_min: float = Field(SLUMP_RANGE[0], description="Lowest slump in cm")
    slump_max: float = Field(SLUMP_RANGE[1], description="Highest slump in cm")
    train_ratio: float = Field(DEFAULT_RATIOS[0], ge=0, le=1, description="Share of clips in the train split")
    val_ratio: float = Field(DEFAULT_RATIOS[1], ge=0, le=1, description="Share of clips in the val split")
    test_ratio: float = Field(DEFAULT_RATIOS[2], ge=0, le=1, description="Share of clips in the test split")
    raw_seconds: float = Field(30.0, gt=0, description="Length of each raw clip in seconds")
    raw_fps: int = Field(15, ge=1, le=65535, description="Frame rate of raw clips")
    height: int = Field(224, ge=8, description="Raw frame height in pixels")
    width: int = Field(224, ge=8, description="Raw frame width in pixels")

    @model_validator(mode="after")
    def _check_range(self):
        if not SLUMP_RANGE[0] <= self.slump_min <= self.slump_max <= SLUMP_RANGE[1]:
            raise ValueError(f"slump range must lie within {SLUMP_RANGE}")
        return self


@dataclass(frozen=True)
class SynthParams:
    slump: float
    seed: int
    frames: int
    height: int
    width: int
    fps: int
    roi: Optional[Roi] = None

    def __post_init__(self):
        if not SLUMP_RANGE[0] <= self.slump <= SLUMP_RANGE[1]:
            raise ConfigError(f"Slump {self.slump} cm outside {SLUMP_RANGE}")
        if self.frames < 1 or self.fps < 1:
            raise ConfigError("Clips need at least one frame and a positive fps")
        if not self.resolved_roi.fits(self.height, self.width):
            raise InvalidRoiError(f"ROI {self.resolved_roi} does not fit a {self.height}x{self.width} frame")

    @property
    def resolved_roi(self) -> Roi:
        return self.roi if self.roi is not None else Roi.auto(self.height, self.width)

    @property
    def wetness(self) -> float:
        """Slump mapped onto [0, 1]"""
        return (self.slump - SLUMP_RANGE[0]) / (SLUMP_RANGE[1] - SLUMP_RANGE[0])


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    slump_cm: float
    split: str
    seed: int


def _angular_velocity(wetness: float) -> float:
    return OMEGA_STIFF - (OMEGA_STIFF - OMEGA_WET) * wetness


def _draw_streaks(layer: np.ndarray, roi: Roi, count: int, gen: np.random.Generator):
    radii = roi.radius * np.sqrt(gen.random(count))
    angles = gen.uniform(0.0, 2.0 * math.pi, count)
    for radius, angle in zip(radii, angles):
        y = roi.cy + radius * math.sin(angle)
        x = roi.cx + radius * math.cos(angle)
        # streaks run along the direction of rotation
        dy, dx = 0.5 * STREAK_LENGTH * math.cos(angle), -0.5 * STREAK_LENGTH * math.sin(angle)
        p0 = (int(round(x - dx)), int(round(y - dy)))
        p1 = (int(round(x + dx)), int(round(y + dy)))
        cv2.line(layer, p0, p1, color=0.95, thickness=1)


def generate_clip(p: SynthParams) -> VideoClip:
    """Render a clip; bytes are a pure function of the parameters"""
    roi = p.resolved_roi
    h, w = p.height, p.width
    wetness = p.wetness
    blend = 0.15 + 0.8 * wetness
    omega = _angular_velocity(wetness)
    sigma = max(1.0, 1.5 * min(h, w) / 64.0)

    stream = RngStream(seed=p.seed, stream_index=0)
    texture = stream.substream(0).generator().random((h, w), dtype=np.float32)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    theta = np.arctan2(yy - roi.cy, xx - roi.cx)
    reach = np.sqrt((yy - roi.cy) ** 2 + (xx - roi.cx) ** 2) / max(roi.radius, 1.0)
    inside = roi.mask(h, w)
    streaks_per_frame = int(round((2.0 + 18.0 * wetness) * inside.sum() / 10_000.0))

    frames = np.empty((p.frames, h, w, 3), dtype=np.uint8)
    for index in range(p.frames):
        phase = omega * index / p.fps
        rotation = cv2.getRotationMatrix2D((roi.cx, roi.cy), math.degrees(phase), 1.0)
        rotated = cv2.warpAffine(texture, rotation, (w, h), flags=cv2.INTER_NEAREST,
                                 borderMode=cv2.BORDER_REFLECT)
        gen = stream.substream(index + 1).generator()
        granular = 0.7 * (rotated - 0.5) + 0.3 * (gen.random((h, w), dtype=np.float32) - 0.5)
        smooth = cv2.GaussianBlur(granular, (0, 0), sigmaX=sigma)
        surface = (1.0 - blend) * granular + blend * smooth
        blade = 0.12 * np.cos(BLADES * (theta - phase)) * np.minimum(reach, 1.0)
        value = 0.5 + 0.6 * surface + blade

        glints = np.zeros((h, w), dtype=np.float32)
        _draw_streaks(glints, roi, streaks_per_frame, gen)
        value = np.clip(np.maximum(value, glints), 0.0, 1.0).astype(np.float32)

        rgb = np.rint(value[..., None] * TINT * 255.0)
        rgb[~inside] = 0
        frames[index] = rgb.astype(np.uint8)
    return VideoClip(frames=frames, fps=p.fps)


def split_counts(n: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise ConfigError(f"Split ratios must be three non-negative values summing to 1, got {tuple(ratios)}")
    n_train = int(round(n * ratios[0]))
    n_val = min(int(round(n * ratios[1])), n - n_train)
    return n_train, n_val, n - n_train - n_val


def generate_dataset(n: int, slump_range: Tuple[float, float] = SLUMP_RANGE, master_seed: int = 0,
                     ratios: Sequence[float] = DEFAULT_RATIOS) -> List[ManifestEntry]:
    """Manifest of `n` clips: uniform slumps, per-clip seeds and a seeded split"""
    if n < 3:
        raise ConfigError(f"A dataset needs at least 3 clips, got {n}")
    counts = split_counts(n, ratios)
    low, high = slump_range
    slumps = RngStream(master_seed, 0).generator().uniform(low, high, n)
    seed_parent = RngStream(master_seed, 1)
    order = RngStream(master_seed, 2).generator().permutation(n)

    splits = [""] * n
    start = 0
    for name, count in zip(SPLITS, counts):
        for position in order[start:start + count]:
            splits[int(position)] = name
        start += count

    return [
        ManifestEntry(path=f"clips/clip_{i:04d}.cwv", slump_cm=float(slumps[i]), split=splits[i],
                      seed=seed_parent.substream(i).seed)
        for i in range(n)
    ]


def manifest_frame(entries: Sequence[ManifestEntry]) -> pd.DataFrame:
    return pd.DataFrame([e.__dict__ for e in entries], columns=MANIFEST_COLUMNS)


def write_manifest(path: Path, entries: Sequence[ManifestEntry]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest_frame(entries).to_csv(path, index=False)
    return path


def read_manifest(path: Path) -> List[ManifestEntry]:
    frame = pd.read_csv(path, float_precision="round_trip", dtype={"path": str, "split": str, "seed": "uint64"})
    missing = set(MANIFEST_COLUMNS) - set(frame.columns)
    if missing:
        raise ConfigError(f"Manifest {path} lacks columns: {', '.join(sorted(missing))}")
    return [ManifestEntry(str(r.path), float(r.slump_cm), str(r.split), int(r.seed))
            for r in frame.itertuples(index=False)]


def render_dataset(entries: Sequence[ManifestEntry], out_dir: Path, settings: SynthSettings,
                   threads: int = 1) -> Path:
    """Write every clip plus manifest.csv under `out_dir`; output bytes do not depend on `threads`"""
    frames = int(round(settings.raw_seconds * settings.raw_fps))

    def render(entry: ManifestEntry) -> Path:
        params = SynthParams(slump=entry.slump_cm, seed=entry.seed, frames=frames,
                             height=settings.height, width=settings.width, fps=settings.raw_fps)
        return write_clip(out_dir / entry.path, generate_clip(params))

    out_dir.mkdir(parents=True, exist_ok=True)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(render, entries))
    else:
        for entry in entries:
            render(entry)
    logger.info(f"Rendered {len(entries)} clips of {frames} frames into {out_dir}")
    return write_manifest(out_dir / "manifest.csv", entries)
