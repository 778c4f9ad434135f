"""
Training and evaluation loops
Seeded shuffling, best-validation checkpointing and a per-epoch log
"""

import math
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import Field
from tqdm import tqdm

from src.core.config import Settings
from src.core.errors import ConfigError, DatasetError, NumericFailureError, ShapeMismatchError
from src.core.log import get_logger
from src.core.models import SlumpRegressor
from src.core.rng import RngStream
from src.core.tensor import Tensor, backward, no_grad
from src.data.pipeline import VideoDataset
from src.training.checkpoint import load_state, save_checkpoint, snapshot
from src.training.optim import AdamW, mae_loss

logger = get_logger("trainer")

LOG_COLUMNS = ["epoch", "train_loss", "val_mae", "seconds"]
SHUFFLE_STREAM_BASE = 1000


class TrainConfig(Settings):
    """Training options"""

    model: Literal["A", "B", "C"] = Field("C", description="Architecture: A, B or C")
    batch_size: int = Field(16, ge=1, description="Samples per optimizer step")
    epochs: int = Field(50, ge=1, description="Training epochs")
    seed: int = Field(0, ge=0, description="Master seed")
    seeds: int = Field(1, ge=1, description="Training rounds with seeds seed..seed+seeds-1")
    eval_every: int = Field(1, ge=1, description="Epochs between validation passes")
    lr: float = Field(1e-4, gt=0, description="AdamW learning rate")
    weight_decay: float = Field(1e-4, ge=0, description="Decoupled weight decay on kernels and dense weights")
    calibrate_head: bool = Field(True, description="Set the head offset/scale from training labels")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    seconds: float


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)
    timings: List[float] = field(default_factory=list)

    def append(self, record: EpochRecord, measured: float):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ConfigError("Epoch indices must increase")
        self.records.append(record)
        self.timings.append(measured)

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=LOG_COLUMNS)

    def to_csv(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    def timings_to_csv(self, path: Path) -> Path:
        frame = pd.DataFrame({"epoch": [r.epoch for r in self.records], "seconds": self.timings})
        frame.to_csv(path, index=False)
        return path

    @classmethod
    def from_csv(cls, path: Path) -> "TrainLog":
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise ConfigError(f"Cannot read training log {path}: {e}") from e
        if list(frame.columns) != LOG_COLUMNS:
            raise ConfigError(f"{path}: expected columns {','.join(LOG_COLUMNS)}, got {','.join(frame.columns)}")
        try:
            log = cls()
            for row in frame.itertuples(index=False):
                log.append(EpochRecord(int(row.epoch), float(row.train_loss), float(row.val_mae),
                                       float(row.seconds)), float(row.seconds))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{path}: malformed row: {e}") from e
        return log


@dataclass
class EvalResult:
    mae: float
    residuals: pd.DataFrame


@dataclass
class TrainResult:
    model: SlumpRegressor
    log: TrainLog
    best_epoch: int
    best_val_mae: float
    checkpoint: Optional[Path] = None


def check_input_shape(model: SlumpRegressor, shape: Optional[Tuple[int, ...]], name: str):
    if shape is None:
        raise DatasetError(f"The {name} set is empty")
    if len(shape) != 4 or shape[-1] != model.spec.input_shape[-1] or min(shape[1:3]) < 8:
        raise ShapeMismatchError(f"Model-{model.model_id} takes [T,H,W,3] samples with H,W >= 8; "
                                 f"the {name} set holds {shape}")


def shuffle_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Epoch permutation; a pure function of (seed, epoch)"""
    return RngStream(seed=seed, stream_index=SHUFFLE_STREAM_BASE + epoch).generator().permutation(n)


def iterate_batches(dataset: VideoDataset, order: Sequence[int], batch_size: int,
                    prefetch: int = 0, dtype=np.float32) -> Iterator[Tuple[Tensor, Tensor]]:
    """Batches in `order`; the last one may be partial. Prefetching keeps order"""
    chunks = [list(order[i:i + batch_size]) for i in range(0, len(order), batch_size)]
    if prefetch <= 0:
        for chunk in chunks:
            yield dataset.batch(chunk, dtype=dtype)
        return
    with ThreadPoolExecutor(max_workers=1) as pool:
        pending = deque(pool.submit(dataset.batch, chunk, dtype) for chunk in chunks[:prefetch])
        submitted = len(pending)
        while pending:
            ready = pending.popleft().result()
            if submitted < len(chunks):
                pending.append(pool.submit(dataset.batch, chunks[submitted], dtype))
                submitted += 1
            yield ready


def evaluate(model: SlumpRegressor, dataset: VideoDataset, batch_size: int = 16) -> EvalResult:
    """MAE in cm plus per-sample residuals, with BatchNorm in inference mode"""
    if len(dataset) == 0:
        raise DatasetError(f"Cannot evaluate on an empty {dataset.split} set")
    was_training = model.training
    model.eval()
    dtype = model.head.weights.dtype
    predictions = []
    with no_grad():
        for inputs, _ in iterate_batches(dataset, range(len(dataset)), batch_size, dtype=dtype):
            predictions.append(model(inputs).data.reshape(-1).astype(np.float64))
    model._set_mode(was_training)

    predicted = np.concatenate(predictions)
    labels = dataset.labels
    residuals = pd.DataFrame({
        "clip_path": [r.clip_path for r in dataset.records],
        "window_index": [r.window_index for r in dataset.records],
        "slump_cm": labels,
        "predicted_cm": predicted,
        "residual_cm": predicted - labels,
    })
    return EvalResult(mae=float(np.mean(np.abs(predicted - labels))), residuals=residuals)


def train(model: SlumpRegressor, train_set: VideoDataset, val_set: VideoDataset, config: TrainConfig,
          run_dir: Optional[Path] = None, deterministic: bool = True, threads: int = 1,
          metadata: Optional[Dict] = None) -> TrainResult:
    """Fit `model` and return it restored to its best validation epoch"""
    check_input_shape(model, train_set.sample_shape, "train")
    check_input_shape(model, val_set.sample_shape, "val")
    if train_set.sample_shape != val_set.sample_shape:
        raise ShapeMismatchError(f"Train samples {train_set.sample_shape} and val samples "
                                 f"{val_set.sample_shape} differ")
    if config.calibrate_head:
        model.calibrate_head(train_set.labels)
        logger.debug(f"Head calibrated: offset={model.target_offset.item():.3f} "
                     f"scale={model.target_scale.item():.3f}")

    optimizer = AdamW(model.named_parameters(), lr=config.lr, weight_decay=config.weight_decay)
    dtype = model.head.weights.dtype
    prefetch = 2 if threads > 1 else 0
    log = TrainLog()
    best_state, best_epoch, best_mae = None, 0, math.inf
    checkpoint_path = run_dir / "best.ckpt" if run_dir is not None else None

    epochs = tqdm(range(1, config.epochs + 1), desc=f"Model-{model.model_id}", unit="epoch", leave=False)
    for epoch in epochs:
        started = time.perf_counter()
        model.train()
        order = shuffle_order(config.seed, epoch, len(train_set))
        total, seen = 0.0, 0
        for step, (inputs, targets) in enumerate(iterate_batches(train_set, order, config.batch_size,
                                                                 prefetch=prefetch, dtype=dtype), start=1):
            optimizer.zero_grad()
            loss = mae_loss(model(inputs), targets)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericFailureError(f"Non-finite loss at epoch {epoch}, batch {step}")
            backward(loss)
            optimizer.step()
            total += value * inputs.shape[0]
            seen += inputs.shape[0]
        train_loss = total / seen

        val_mae = math.nan
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            val_mae = evaluate(model, val_set, config.batch_size).mae
            if val_mae < best_mae:
                best_state, best_epoch, best_mae = snapshot(model), epoch, val_mae
                if checkpoint_path is not None:
                    meta = dict(metadata or {})
                    meta.update({"model": model.model_id, "epoch": epoch, "val_mae": val_mae,
                                 "seed": config.seed, "input_shape": list(train_set.sample_shape)})
                    save_checkpoint(checkpoint_path, model, meta)

        measured = time.perf_counter() - started
        log.append(EpochRecord(epoch, train_loss, val_mae, 0.0 if deterministic else measured), measured)
        epochs.set_postfix(loss=f"{train_loss:.2f}", val=f"{val_mae:.2f}")
        logger.info(f"epoch {epoch}: train_loss={train_loss:.4f} val_mae={val_mae:.4f}")

    if best_state is not None:
        load_state(model, best_state)
    model.eval()
    if run_dir is not None:
        log.to_csv(run_dir / "train_log.csv")
        log.timings_to_csv(run_dir / "timings.csv")
    return TrainResult(model=model, log=log, best_epoch=best_epoch, best_val_mae=best_mae,
                       checkpoint=checkpoint_path if best_state is not None else None)
