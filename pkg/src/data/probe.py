"""
Handcrafted two-statistic linear baseline
"""

from dataclasses import dataclass
from typing import Tuple

import cv2
import numpy as np

from src.core.errors import DatasetError
from src.data.clipio import Roi
from src.data.pipeline import VideoDataset


def window_statistics(sample: np.ndarray) -> Tuple[float, float]:
    """Mean local 3x3 variance and mean inter-frame absolute difference inside the ROI"""
    grey = sample.mean(axis=-1, dtype=np.float64).astype(np.float32)
    _, height, width = grey.shape
    auto = Roi.auto(height, width)
    # shrink away from the resized mask edge
    inside = Roi(auto.cy, auto.cx, 0.9 * auto.radius).mask(height, width)

    variances = []
    for frame in grey:
        mean = cv2.blur(frame, (3, 3))
        mean_sq = cv2.blur(frame * frame, (3, 3))
        variances.append(float(np.maximum(mean_sq - mean * mean, 0.0)[inside].mean()))
    if grey.shape[0] > 1:
        motion = float(np.abs(np.diff(grey, axis=0))[:, inside].mean())
    else:
        motion = 0.0
    return float(np.mean(variances)), motion


def features(dataset: VideoDataset) -> np.ndarray:
    return np.array([window_statistics(s) for s in dataset.samples], dtype=np.float64).reshape(-1, 2)


@dataclass
class LinearProbe:
    """slump ~ w0 + w1 * local_variance + w2 * motion"""

    coefficients: np.ndarray

    @classmethod
    def fit(cls, dataset: VideoDataset) -> "LinearProbe":
        if len(dataset) == 0:
            raise DatasetError("Cannot fit the linear probe on an empty dataset")
        design = np.column_stack([np.ones(len(dataset)), features(dataset)])
        coefficients, *_ = np.linalg.lstsq(design, dataset.labels, rcond=None)
        return cls(coefficients=coefficients)

    def predict(self, dataset: VideoDataset) -> np.ndarray:
        design = np.column_stack([np.ones(len(dataset)), features(dataset)])
        return design @ self.coefficients

    def mae(self, dataset: VideoDataset) -> float:
        if len(dataset) == 0:
            raise DatasetError("Cannot evaluate on an empty dataset")
        return float(np.mean(np.abs(self.predict(dataset) - dataset.labels)))
