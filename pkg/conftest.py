"""
Shared pytest fixtures and the slow-test switch
"""

from pathlib import Path

import numpy as np
import pytest

from src.core.rng import RngStream
from src.data.clipio import VideoClip, write_clip
from src.data.synthgen import ManifestEntry, SynthParams, generate_clip, write_manifest


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return RngStream(seed=1234).generator()


@pytest.fixture
def tiny_clips(tmp_path: Path):
    """Six 3 s, 4 fps, 24x24 synthetic clips (two per split) plus their manifest"""
    entries = []
    splits = ["train", "train", "val", "val", "test", "test"]
    for i, split in enumerate(splits):
        slump = 40.0 + 30.0 * i
        clip = generate_clip(SynthParams(slump=slump, seed=100 + i, frames=12, height=24, width=24, fps=4))
        path = f"clips/clip_{i:04d}.cwv"
        write_clip(tmp_path / path, clip)
        entries.append(ManifestEntry(path=path, slump_cm=slump, split=split, seed=100 + i))
    manifest = write_manifest(tmp_path / "manifest.csv", entries)
    return manifest, entries


def make_clip(frames: int, height: int = 8, width: int = 8, fps: int = 15, value=None) -> VideoClip:
    """Frame i filled with i % 256 (or `value`)"""
    data = np.empty((frames, height, width, 3), dtype=np.uint8)
    for i in range(frames):
        data[i] = (i % 256) if value is None else value
    return VideoClip(frames=data, fps=fps)
