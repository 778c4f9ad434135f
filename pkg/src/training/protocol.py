"""
Multi-seed experiment protocol
Seed rounds, Table-1 style reports, curve export, baselines and single-clip prediction
"""

import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import Field

from src.core.config import Settings
from src.core.errors import CheckpointError, ConfigError
from src.core.log import get_logger
from src.core.models import build_model
from src.core.rng import RngStream
from src.core.tensor import Tensor, no_grad
from src.data.clipio import read_clip
from src.data.pipeline import PipelineConfig, VideoDataset, preprocess_clip
from src.training.checkpoint import load_checkpoint, save_checkpoint
from src.training.trainer import EvalResult, TrainConfig, TrainLog, TrainResult, evaluate, train

logger = get_logger("protocol")

SEED_DIR = re.compile(r"^seed_(\d+)$")
CHECKPOINT_NAME = "best.ckpt"


class EvalSettings(Settings):
    """Evaluation options"""

    split: Literal["train", "val", "test"] = Field("test",
                                                  description="Split evaluated by eval, baseline and compare")
    seeds: int = Field(1, ge=1, description="Seed checkpoints evaluated from a run directory")


@dataclass
class SeedScore:
    seed: str
    checkpoint: str
    mae: float
    result: EvalResult


def seed_dir(run_dir: Path, seed: int) -> Path:
    return run_dir / f"seed_{seed}"


def run_seeds(model_id: str, datasets: Dict[str, VideoDataset], config: TrainConfig, run_dir: Path,
              deterministic: bool = True, threads: int = 1) -> List[TrainResult]:
    """Train `config.seeds` rounds, each from its own initialization and shuffle seed"""
    results = []
    for offset in range(config.seeds):
        seed = config.seed + offset
        round_config = config.model_copy(update={"seed": seed})
        model = build_model(model_id, RngStream(seed=seed, stream_index=0))
        logger.info(f"Training Model-{model_id} with seed {seed} ({model.param_count():,} parameters)")
        result = train(model, datasets["train"], datasets["val"], round_config, run_dir=seed_dir(run_dir, seed),
                       deterministic=deterministic, threads=threads)
        logger.info(f"seed {seed}: best val MAE {result.best_val_mae:.3f} cm at epoch {result.best_epoch}")
        results.append(result)
    return results


def _single_checkpoint(path: Path, limit: Optional[int]) -> List[Tuple[str, Path]]:
    if limit is not None and limit > 1:
        raise ConfigError(f"{path} is a single checkpoint; --seeds {limit} needs a run directory with seed_<s>/")
    return [("-", path)]


def find_checkpoints(source: Path, limit: Optional[int] = None) -> List[Tuple[str, Path]]:
    """A checkpoint file, or the seed_<s>/best.ckpt files of a run directory ordered by seed.

    A single checkpoint cannot serve more than one seed.
    """
    if source.is_file():
        return _single_checkpoint(source, limit)
    if not source.is_dir():
        raise CheckpointError(f"No checkpoint or run directory at {source}")
    found = []
    for child in source.iterdir():
        match = SEED_DIR.match(child.name)
        if match and (child / CHECKPOINT_NAME).is_file():
            found.append((int(match.group(1)), child / CHECKPOINT_NAME))
    if not found and (source / CHECKPOINT_NAME).is_file():
        return _single_checkpoint(source / CHECKPOINT_NAME, limit)
    found.sort()
    if limit is not None:
        if len(found) < limit:
            raise CheckpointError(f"{source} holds {len(found)} seed checkpoint(s), {limit} requested")
        found = found[:limit]
    if not found:
        raise CheckpointError(f"No checkpoints found under {source}")
    return [(str(seed), path) for seed, path in found]


def summarize(maes: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation"""
    values = np.asarray(maes, dtype=np.float64)
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return float(values.mean()), std


def format_mae(mean: float, std: float) -> str:
    return f"{mean:.1f}cm ±{std:.1f}cm"


def evaluate_checkpoints(checkpoints: Sequence[Tuple[str, Path]], dataset: VideoDataset) -> List[SeedScore]:
    scores = []
    for seed, path in checkpoints:
        model, _ = load_checkpoint(path)
        result = evaluate(model, dataset)
        scores.append(SeedScore(seed=seed, checkpoint=str(path), mae=result.mae, result=result))
    return scores


def metrics_frame(scores: Sequence[SeedScore], split: str) -> pd.DataFrame:
    """One row per seed plus a summary row"""
    rows = [{"seed": s.seed, "checkpoint": s.checkpoint, "split": split, "samples": len(s.result.residuals),
             "mae_cm": s.mae, "std_cm": np.nan, "report": f"{s.mae:.1f}cm"} for s in scores]
    mean, std = summarize([s.mae for s in scores])
    rows.append({"seed": "summary", "checkpoint": "", "split": split,
                 "samples": rows[0]["samples"] if rows else 0,
                 "mae_cm": mean, "std_cm": std, "report": format_mae(mean, std)})
    return pd.DataFrame(rows)


def write_metrics(out_dir: Path, scores: Sequence[SeedScore], split: str) -> pd.DataFrame:
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = metrics_frame(scores, split)
    frame.to_csv(out_dir / "metrics.csv", index=False)
    for score in scores:
        score.result.residuals.to_csv(out_dir / f"residuals_{score.seed.replace('-', 'single')}.csv", index=False)
    return frame


def curves(log: TrainLog) -> pd.DataFrame:
    """Long format (series, epoch, value): one train and one val row per epoch"""
    frame = log.to_frame().rename(columns={"train_loss": "train", "val_mae": "val"})
    tidy = frame.melt(id_vars="epoch", value_vars=["train", "val"], var_name="series", value_name="value")
    return tidy[["series", "epoch", "value"]].reset_index(drop=True)


def constant_checkpoint(model_id: str, value: float, path: Path, dtype: str = "f32") -> Path:
    """Checkpoint of a model that always predicts `value`"""
    model = build_model(model_id, RngStream(seed=0), dtype=dtype)
    model.head.weights.data = np.zeros_like(model.head.weights.data)
    model.head.bias.data = np.zeros_like(model.head.bias.data)
    model.target_offset.data = np.full(1, value, dtype=model.target_offset.dtype)
    model.target_scale.data = np.ones(1, dtype=model.target_scale.dtype)
    return save_checkpoint(path, model, {"model": model_id, "baseline": "constant", "value": float(value)})


def compare(run_dirs: Dict[str, Path], dataset: VideoDataset, seeds: Optional[int] = None) -> pd.DataFrame:
    """Rank architectures by mean MAE over their seed checkpoints"""
    rows = []
    for model_id, run_dir in run_dirs.items():
        maes = [s.mae for s in evaluate_checkpoints(find_checkpoints(run_dir, seeds), dataset)]
        mean, std = summarize(maes)
        rows.append({"model": f"Model-{model_id}", "seeds": len(maes), "mae_cm": mean, "std_cm": std,
                     "report": format_mae(mean, std)})
    if not rows:
        raise ConfigError("Nothing to compare")
    return pd.DataFrame(rows).sort_values(["mae_cm", "model"], kind="stable").reset_index(drop=True)


@dataclass
class Prediction:
    estimate: float
    windows: List[float]
    latency_ms: List[float]


def predict_clip(checkpoint: Path, clip_path: Path, config: PipelineConfig) -> Prediction:
    """Average the per-window estimates of one raw clip"""
    model, _ = load_checkpoint(checkpoint)
    windows = preprocess_clip(read_clip(clip_path), config)
    dtype = model.head.weights.dtype
    estimates, latency = [], []
    with no_grad():
        for sample in windows:
            started = time.perf_counter()
            value = model(Tensor(sample[None].astype(dtype))).item()
            latency.append(1000.0 * (time.perf_counter() - started))
            estimates.append(value)
    return Prediction(estimate=float(np.mean(estimates)), windows=estimates, latency_ms=latency)
