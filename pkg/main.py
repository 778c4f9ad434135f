#!/usr/bin/env python3
"""
SlumpVision - concrete slump estimation from mixing videos
Main application entry point
"""

import hashlib
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import typer
from rich.table import Table

from src.core.config import RunSettings, Settings, describe_keys, parse_config_file, resolve
from src.core.errors import ConfigError, ShapeMismatchError, SlumpVisionError, VerificationError
from src.core.gradcheck import GradcheckSettings, layer_gradchecks, model_gradcheck
from src.core.log import console, get_logger, setup_logging
from src.core.models import (
    DESCRIPTIONS,
    EXPECTED_PARAM_COUNTS,
    MODEL_IDS,
    PUBLISHED_PARAM_COUNTS,
    build_model,
)
from src.core.rng import RngStream
from src.data.pipeline import PipelineConfig, VideoDataset, build_dataset
from src.data.probe import LinearProbe
from src.data.synthgen import SPLITS, SynthSettings, generate_dataset, render_dataset
from src.training.checkpoint import load_checkpoint
from src.training.protocol import (
    EvalSettings,
    compare,
    constant_checkpoint,
    curves,
    evaluate_checkpoints,
    find_checkpoints,
    predict_clip,
    run_seeds,
    write_metrics,
)
from src.training.trainer import TrainConfig, TrainLog

logger = get_logger("cli")

app = typer.Typer(
    help="SlumpVision: estimate concrete slump (cm) from top-down mixing videos.",
    epilog="\b\nConfiguration keys (flag, SLUMP_<KEY> environment variable or 'key = value' file):\n"
           + describe_keys(),
    add_completion=False,
    no_args_is_help=True,
)


class SlumpVisionApp:
    """Shared state of one command invocation: resolved settings, run directory and log"""

    def __init__(self, cli: Dict[str, Any], config_file: Optional[Path] = None, verbose: bool = False):
        self.cli = {k: v for k, v in cli.items() if v is not None}
        self.file_values = parse_config_file(config_file)
        self.run = resolve(RunSettings, self.cli, self.file_values)
        self.run_dir = Path(self.run.run_dir)
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"Cannot create run directory {self.run_dir}: {e}") from e
        setup_logging("DEBUG" if verbose else self.run.log_level, self.run_dir / "run.log")
        logger.info(f"run: {self.run.echo()}")

    def settings(self, model: type) -> Settings:
        resolved = resolve(model, self.cli, self.file_values, preset=self.run.preset)
        logger.info(f"{model.__name__}: {resolved.echo()}")
        return resolved

    @property
    def default_manifest(self) -> Path:
        return self.run_dir / "data" / "manifest.csv"

    def datasets(self, manifest: Optional[Path], splits: List[str], limit: Optional[int] = None
                 ) -> Dict[str, VideoDataset]:
        config = self.settings(PipelineConfig)
        manifest = manifest or self.default_manifest
        if not manifest.is_file():
            raise ConfigError(f"Manifest not found: {manifest} (run 'synth' first)")
        datasets, report = build_dataset(manifest, config, splits=splits, threads=self.run.threads)
        if report.skips:
            console.print(f"⚠️  {len(report.skips)} clip(s) skipped, see run.log")
        if limit is not None:
            for dataset in datasets.values():
                del dataset.records[limit:]
                del dataset.samples[limit:]
        return datasets

    def synth(self, out_dir: Optional[Path]):
        settings = self.settings(SynthSettings)
        out_dir = out_dir or self.run_dir / "data"
        entries = generate_dataset(settings.n, (settings.slump_min, settings.slump_max), self.run.seed,
                                   (settings.train_ratio, settings.val_ratio, settings.test_ratio))
        console.print(f"🎬 Rendering {len(entries)} clips into {out_dir}...")
        try:
            manifest = render_dataset(entries, out_dir, settings, threads=self.run.threads)
        except OSError as e:
            raise ConfigError(f"Cannot write to {out_dir}: {e}") from e

        table = Table(title="Synthetic dataset")
        table.add_column("split")
        table.add_column("clips", justify="right")
        for split in SPLITS:
            table.add_row(split, str(sum(1 for e in entries if e.split == split)))
        console.print(table)
        checksum = hashlib.sha256(manifest.read_bytes()).hexdigest()
        console.print(f"✅ Manifest written to {manifest} (sha256 {checksum[:16]})")

    def train(self, manifest: Optional[Path], limit: Optional[int]):
        config = self.settings(TrainConfig)
        datasets = self.datasets(manifest, ["train", "val"], limit)
        console.print(f"🚀 Training Model-{config.model} for {config.epochs} epoch(s), {config.seeds} seed(s)...")
        results = run_seeds(config.model, datasets, config, self.run_dir,
                            deterministic=self.run.deterministic, threads=self.run.threads)
        for offset, result in enumerate(results):
            log = result.log.records
            console.print(f"✅ seed {config.seed + offset}: train loss {log[0].train_loss:.2f} -> "
                          f"{log[-1].train_loss:.2f}, best val MAE {result.best_val_mae:.2f} cm "
                          f"(epoch {result.best_epoch}) -> {result.checkpoint}")

    def evaluate(self, source: Path, manifest: Optional[Path]):
        settings = self.settings(EvalSettings)
        dataset = self.datasets(manifest, [settings.split])[settings.split]
        checkpoints = find_checkpoints(source, settings.seeds)
        for _, path in checkpoints:
            _, metadata = load_checkpoint(path)
            stored = metadata.get("input_shape")
            if stored is not None and tuple(stored) != dataset.sample_shape:
                raise ShapeMismatchError(f"{path} was trained on {tuple(stored)} samples, "
                                         f"the {settings.split} set holds {dataset.sample_shape}")
        scores = evaluate_checkpoints(checkpoints, dataset)
        frame = write_metrics(self.run_dir / "eval", scores, settings.split)

        table = Table(title=f"MAE results on {len(dataset)} {settings.split} samples")
        table.add_column("seed")
        table.add_column("MAE", justify="right")
        for row in frame.itertuples(index=False):
            table.add_row(str(row.seed), row.report)
        console.print(table)
        console.print(f"✅ Metrics written to {self.run_dir / 'eval' / 'metrics.csv'}")

    def gradcheck(self, model_id: str):
        settings = self.settings(GradcheckSettings)
        rows = layer_gradchecks(model_id, settings, self.run.seed)
        console.print(f"🧪 Checking Model-{model_id} gradients at {settings.scale} scale...")
        rows.append(model_gradcheck(model_id, settings, self.run.seed))

        table = Table(title=f"Model-{model_id} gradient check")
        table.add_column("check")
        table.add_column("max relative error", justify="right")
        table.add_column("status")
        failing = []
        for name, error in rows:
            ok = error < settings.threshold
            table.add_row(name, f"{error:.3e}", "✅" if ok else "❌")
            if not ok:
                failing.append(name)
        console.print(table)
        if failing:
            raise VerificationError(f"Gradient check above {settings.threshold:g} in: {', '.join(failing)}")
        console.print("✅ All gradient checks passed")

    def params(self, model_id: str):
        model = build_model(model_id, RngStream(seed=self.run.seed))
        table = Table(title=f"Model-{model_id}: {DESCRIPTIONS[model_id]}")
        table.add_column("layer")
        table.add_column("parameters", justify="right")
        for name, count in model.layer_param_counts():
            table.add_row(name, f"{count:,}")
        total = model.param_count()
        table.add_row("total", f"{total:,}")
        console.print(table)
        expected = EXPECTED_PARAM_COUNTS[model_id]
        status = "✅ matches" if total == expected else "❌ differs from"
        console.print(f"{status} the expected {expected:,} "
                      f"(~{round(total / 1000)}K, published {PUBLISHED_PARAM_COUNTS[model_id]})")

    def curves(self, log_path: Path, out: Optional[Path]):
        tidy = curves(TrainLog.from_csv(log_path))
        out = out or self.run_dir / "curves.csv"
        tidy.to_csv(out, index=False)
        console.print(f"✅ {len(tidy)} curve points written to {out}")

    def baseline(self, manifest: Optional[Path]):
        settings = self.settings(EvalSettings)
        config = self.settings(TrainConfig)
        splits = ["train"] if settings.split == "train" else ["train", settings.split]
        datasets = self.datasets(manifest, splits)
        train_set, target = datasets["train"], datasets[settings.split]
        mean = float(train_set.labels.mean())

        path = constant_checkpoint(config.model, mean, self.run_dir / "baseline" / "constant.ckpt")
        constant = evaluate_checkpoints([("-", path)], target)[0]
        probe = LinearProbe.fit(train_set)
        table = Table(title=f"Baselines on the {settings.split} split")
        table.add_column("baseline")
        table.add_column("MAE (cm)", justify="right")
        table.add_row(f"predict training mean ({mean:.2f} cm)", f"{constant.mae:.2f}")
        table.add_row("two-statistic linear probe", f"{probe.mae(target):.2f}")
        console.print(table)
        console.print(f"✅ Constant checkpoint written to {path}")

    def predict(self, checkpoint: Path, clip: Path):
        config = self.settings(PipelineConfig)
        prediction = predict_clip(checkpoint, clip, config)
        for index, (value, latency) in enumerate(zip(prediction.windows, prediction.latency_ms)):
            console.print(f"   window {index}: {value:.1f} cm ({latency:.1f} ms)")
        console.print(f"🎯 Estimated slump: {prediction.estimate:.1f} cm")

    def compare(self, runs: List[str], manifest: Optional[Path]):
        settings = self.settings(EvalSettings)
        run_dirs = {}
        for item in runs:
            model_id, _, directory = item.partition("=")
            if model_id not in MODEL_IDS or not directory:
                raise ConfigError(f"Expected MODEL=RUN_DIR with MODEL in {', '.join(MODEL_IDS)}, got '{item}'")
            run_dirs[model_id] = Path(directory)
        dataset = self.datasets(manifest, [settings.split])[settings.split]
        frame = compare(run_dirs, dataset, settings.seeds if "seeds" in self.cli else None)
        frame.to_csv(self.run_dir / "compare.csv", index=False)

        table = Table(title=f"MAE results on {len(dataset)} {settings.split} samples")
        table.add_column("model")
        table.add_column("MAE", justify="right")
        for row in frame.itertuples(index=False):
            table.add_row(row.model, row.report)
        console.print(table)
        if "Model-C" in run_dirs and frame.iloc[0]["model"] != "Model-C":
            console.print("⚠️  Model-C is not the best model on this data")


def _execute(cli: Dict[str, Any], config_file: Optional[Path], verbose: bool,
             action: Callable[[SlumpVisionApp], None]):
    try:
        action(SlumpVisionApp(cli, config_file, verbose))
    except SlumpVisionError as e:
        logger.error(str(e))
        console.print(f"❌ {e}")
        raise typer.Exit(code=e.exit_code)
    except KeyboardInterrupt:
        console.print("\n👋 Goodbye!")
        raise typer.Exit(code=130)
    except Exception as e:
        logging.getLogger("slumpvision").exception("Unexpected failure")
        console.print(f"❌ Error: {e}")
        raise typer.Exit(code=1)


RUN_DIR = typer.Option(None, "--run-dir", help="Directory holding every artifact [runs/default]")
THREADS = typer.Option(None, "--threads", help="Worker threads; 1 keeps outputs byte-identical [1]")
SEED = typer.Option(None, "--seed", help="Master seed [0]")
PRESET = typer.Option(None, "--preset", help="full-scale or desk [full-scale]")
CONFIG = typer.Option(None, "--config", help="Plain-text file of 'key = value' lines")
VERBOSE = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level")
DETERMINISTIC = typer.Option(None, "--deterministic/--measure-time",
                             help="Zero wall-clock columns in train_log.csv [deterministic]")
MANIFEST = typer.Option(None, "--manifest", help="Manifest CSV [<run-dir>/data/manifest.csv]")


@app.command()
def synth(n: Optional[int] = typer.Option(None, "--n", help="Number of clips [255]"),
          out_dir: Optional[Path] = typer.Option(None, "--out-dir", help="Output directory [<run-dir>/data]"),
          raw_seconds: Optional[float] = typer.Option(None, help="Raw clip length in seconds [30]"),
          height: Optional[int] = typer.Option(None, help="Raw frame height [224]"),
          width: Optional[int] = typer.Option(None, help="Raw frame width [224]"),
          run_dir: Optional[Path] = RUN_DIR, threads: Optional[int] = THREADS, seed: Optional[int] = SEED,
          preset: Optional[str] = PRESET, config: Optional[Path] = CONFIG, verbose: bool = VERBOSE):
    """Render synthetic clips and their manifest"""
    cli = dict(n=n, raw_seconds=raw_seconds, height=height, width=width, run_dir=run_dir, threads=threads,
               seed=seed, preset=preset)
    _execute(cli, config, verbose, lambda a: a.synth(out_dir))


@app.command()
def train(model: Optional[str] = typer.Option(None, "--model", "-m", help="A, B or C [C]"),
          manifest: Optional[Path] = MANIFEST,
          epochs: Optional[int] = typer.Option(None, help="Training epochs [50]"),
          batch_size: Optional[int] = typer.Option(None, help="Batch size [16]"),
          lr: Optional[float] = typer.Option(None, help="AdamW learning rate [1e-4]"),
          seeds: Optional[int] = typer.Option(None, help="Training rounds [1]"),
          n: Optional[int] = typer.Option(None, "--n", help="Keep only the first n samples of each split"),
          run_dir: Optional[Path] = RUN_DIR, threads: Optional[int] = THREADS, seed: Optional[int] = SEED,
          preset: Optional[str] = PRESET, config: Optional[Path] = CONFIG,
          deterministic: Optional[bool] = DETERMINISTIC, verbose: bool = VERBOSE):
    """Train a model; writes seed_<s>/best.ckpt and seed_<s>/train_log.csv"""
    cli = dict(model=model, epochs=epochs, batch_size=batch_size, lr=lr, seeds=seeds, run_dir=run_dir,
               threads=threads, seed=seed, preset=preset, deterministic=deterministic)
    _execute(cli, config, verbose, lambda a: a.train(manifest, n))


@app.command("eval")
def eval_command(checkpoint: Path = typer.Argument(..., help="Checkpoint file or training run directory"),
                 manifest: Optional[Path] = MANIFEST,
                 split: Optional[str] = typer.Option(None, help="train, val or test [test]"),
                 seeds: Optional[int] = typer.Option(None, help="Seed checkpoints to evaluate [1]"),
                 run_dir: Optional[Path] = RUN_DIR, threads: Optional[int] = THREADS,
                 preset: Optional[str] = PRESET, config: Optional[Path] = CONFIG, verbose: bool = VERBOSE):
    """Evaluate checkpoints; writes eval/metrics.csv and per-seed residuals"""
    cli = dict(split=split, seeds=seeds, run_dir=run_dir, threads=threads, preset=preset)
    _execute(cli, config, verbose, lambda a: a.evaluate(checkpoint, manifest))


@app.command()
def gradcheck(model: str = typer.Argument(..., help="A, B or C"),
              scale: Optional[str] = typer.Option(None, help="Input scale [reduced]"),
              run_dir: Optional[Path] = RUN_DIR, seed: Optional[int] = SEED,
              config: Optional[Path] = CONFIG, verbose: bool = VERBOSE):
    """Finite-difference check of every primitive and the whole model"""
    cli = dict(scale=scale, run_dir=run_dir, seed=seed)
    _execute(cli, config, verbose, lambda a: a.gradcheck(model.upper()))


@app.command()
def params(model: str = typer.Argument(..., help="A, B or C"), run_dir: Optional[Path] = RUN_DIR,
           verbose: bool = VERBOSE):
    """Per-layer trainable parameter counts"""
    def action(a: SlumpVisionApp):
        if model.upper() not in MODEL_IDS:
            raise ConfigError(f"Unknown model '{model}', expected one of {', '.join(MODEL_IDS)}")
        a.params(model.upper())
    _execute(dict(run_dir=run_dir), None, verbose, action)


@app.command("curves")
def curves_command(log: Path = typer.Argument(..., help="train_log.csv"),
                   out: Optional[Path] = typer.Option(None, "--out", help="Output CSV [<run-dir>/curves.csv]"),
                   run_dir: Optional[Path] = RUN_DIR, verbose: bool = VERBOSE):
    """Long-format (series, epoch, value) convergence curves"""
    _execute(dict(run_dir=run_dir), None, verbose, lambda a: a.curves(log, out))


@app.command()
def baseline(manifest: Optional[Path] = MANIFEST,
             model: Optional[str] = typer.Option(None, "--model", "-m", help="Architecture of the checkpoint [C]"),
             split: Optional[str] = typer.Option(None, help="Evaluated split [test]"),
             run_dir: Optional[Path] = RUN_DIR, threads: Optional[int] = THREADS,
             preset: Optional[str] = PRESET, config: Optional[Path] = CONFIG, verbose: bool = VERBOSE):
    """Predict-training-mean checkpoint and the linear probe"""
    cli = dict(model=model, split=split, run_dir=run_dir, threads=threads, preset=preset)
    _execute(cli, config, verbose, lambda a: a.baseline(manifest))


@app.command()
def predict(checkpoint: Path = typer.Argument(..., help="Checkpoint file"),
            clip: Path = typer.Argument(..., help="Raw CWV1 clip"),
            run_dir: Optional[Path] = RUN_DIR, preset: Optional[str] = PRESET,
            config: Optional[Path] = CONFIG, verbose: bool = VERBOSE):
    """Estimate the slump of one clip"""
    _execute(dict(run_dir=run_dir, preset=preset), config, verbose, lambda a: a.predict(checkpoint, clip))


@app.command("compare")
def compare_command(runs: List[str] = typer.Argument(..., help="MODEL=RUN_DIR pairs, e.g. A=runs/a"),
                    manifest: Optional[Path] = MANIFEST,
                    split: Optional[str] = typer.Option(None, help="Evaluated split [test]"),
                    seeds: Optional[int] = typer.Option(None, help="Seed checkpoints per model"),
                    run_dir: Optional[Path] = RUN_DIR, threads: Optional[int] = THREADS,
                    preset: Optional[str] = PRESET, config: Optional[Path] = CONFIG, verbose: bool = VERBOSE):
    """Rank Model-A/B/C runs by mean MAE"""
    cli = dict(split=split, seeds=seeds, run_dir=run_dir, threads=threads, preset=preset)
    _execute(cli, config, verbose, lambda a: a.compare(runs, manifest))


if __name__ == "__main__":
    app()
