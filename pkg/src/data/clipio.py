"""
VideoClip record and the CWV1 clip container
"""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from src.core.errors import ClipFormatError, InvalidRoiError, InvalidShapeError

MAGIC = b"CWV1"
VERSION = 1
# magic, version u16, T/H/W u32, channels u8, dtype tag u8, fps u16
HEADER = struct.Struct("<4sHIIIBBH")
DTYPE_TAGS = {0: np.dtype(np.uint8), 1: np.dtype("<f4")}


@dataclass
class VideoClip:
    """Frames [T,H,W,3] plus their frame rate"""

    frames: np.ndarray
    fps: int

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1 or self.frames.shape[-1] != 3:
            raise InvalidShapeError(f"Clip frames must be [T>=1,H,W,3], got {self.frames.shape}")
        if self.fps < 1:
            raise InvalidShapeError(f"Clip fps must be positive, got {self.fps}")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def duration(self) -> float:
        return self.num_frames / self.fps

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])


def _tag_for(dtype: np.dtype) -> int:
    for tag, known in DTYPE_TAGS.items():
        if np.dtype(dtype) == known:
            return tag
    raise ClipFormatError(f"CWV1 stores u8 or f32 frames, not {dtype}")


def encode_clip(clip: VideoClip) -> bytes:
    tag = _tag_for(clip.frames.dtype)
    t, h, w, c = clip.frames.shape
    header = HEADER.pack(MAGIC, VERSION, t, h, w, c, tag, clip.fps)
    return header + np.ascontiguousarray(clip.frames, dtype=DTYPE_TAGS[tag]).tobytes()


def decode_clip(payload: bytes, source: str = "<bytes>") -> VideoClip:
    if len(payload) < HEADER.size:
        raise ClipFormatError(f"{source}: truncated header")
    magic, version, t, h, w, c, tag, fps = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise ClipFormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise ClipFormatError(f"{source}: unsupported version {version}")
    if tag not in DTYPE_TAGS:
        raise ClipFormatError(f"{source}: unknown dtype tag {tag}")
    dtype = DTYPE_TAGS[tag]
    expected = t * h * w * c * dtype.itemsize
    body = payload[HEADER.size:]
    if len(body) != expected:
        raise ClipFormatError(f"{source}: expected {expected} frame bytes, found {len(body)}")
    frames = np.frombuffer(body, dtype=dtype).reshape(t, h, w, c).copy()
    try:
        return VideoClip(frames=frames, fps=fps)
    except InvalidShapeError as e:
        raise ClipFormatError(f"{source}: {e}") from e


def write_clip(path: Union[str, Path], clip: VideoClip) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_clip(clip))
    return path


def read_clip(path: Union[str, Path]) -> VideoClip:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise ClipFormatError(f"Cannot read clip {path}: {e}") from e
    return decode_clip(payload, source=str(path))


@dataclass(frozen=True)
class Roi:
    """Circular region of interest; a pixel is inside iff its squared distance is below radius**2"""

    cy: float
    cx: float
    radius: float

    @classmethod
    def auto(cls, height: int, width: int) -> "Roi":
        """Centred circle covering the mixing bowl of a top-down camera"""
        return cls(cy=(height - 1) / 2.0, cx=(width - 1) / 2.0, radius=float(int(0.45 * min(height, width))))

    def mask(self, height: int, width: int) -> np.ndarray:
        yy, xx = np.mgrid[0:height, 0:width]
        return (yy - self.cy) ** 2 + (xx - self.cx) ** 2 < self.radius ** 2

    def fits(self, height: int, width: int) -> bool:
        return (self.radius >= 0 and self.cy - self.radius >= -0.5 and self.cx - self.radius >= -0.5
                and self.cy + self.radius <= height - 0.5 and self.cx + self.radius <= width - 0.5)

    @classmethod
    def parse(cls, text: str, height: int, width: int) -> "Roi":
        """'auto' or 'cy,cx,r'"""
        if text.strip().lower() == "auto":
            return cls.auto(height, width)
        try:
            cy, cx, radius = (float(part) for part in text.split(","))
        except ValueError as e:
            raise InvalidRoiError(f"ROI must be 'auto' or 'cy,cx,r', got '{text}'") from e
        return cls(cy, cx, radius)
