#!/usr/bin/env python3
"""
SlumpVision Demo Script
Desk-scale walk-through: synthesize clips, preprocess, train Model-C, evaluate against baselines
"""

import sys
from pathlib import Path

from dotenv import load_dotenv

from src.core.config import PRESETS
from src.core.log import setup_logging
from src.core.models import build_model
from src.core.rng import RngStream
from src.data.pipeline import PipelineConfig, build_dataset
from src.data.probe import LinearProbe
from src.data.synthgen import SynthSettings, generate_dataset, render_dataset
from src.training.trainer import TrainConfig, evaluate, train


def run_demo(run_dir: Path = Path("runs/demo"), epochs: int = 10):
    """Run the desk-scale pipeline end to end"""
    print("🚀 SlumpVision Demo")
    print("=" * 50)
    load_dotenv()
    setup_logging(log_file=run_dir / "run.log")
    desk = PRESETS["desk"]

    print("\n🎬 Step 1: Synthesizing desk-scale clips...")
    synth = SynthSettings(**{k: v for k, v in desk.items() if k in SynthSettings.model_fields})
    entries = generate_dataset(synth.n, master_seed=0,
                               ratios=(synth.train_ratio, synth.val_ratio, synth.test_ratio))
    manifest = render_dataset(entries, run_dir / "data", synth)
    print(f"✅ {len(entries)} clips written, manifest at {manifest}")

    print("\n🔧 Step 2: Preprocessing...")
    pipeline = PipelineConfig(**{k: v for k, v in desk.items() if k in PipelineConfig.model_fields})
    datasets, report = build_dataset(manifest, pipeline)
    print(f"✅ Samples per split: {report.counts} (input shape {pipeline.input_shape})")

    print("\n📏 Step 3: Baselines...")
    mean_mae = float(abs(datasets["test"].labels - datasets["train"].labels.mean()).mean())
    probe_mae = LinearProbe.fit(datasets["train"]).mae(datasets["test"])
    print(f"   predict-training-mean MAE: {mean_mae:.2f} cm")
    print(f"   two-statistic linear probe MAE: {probe_mae:.2f} cm")

    print(f"\n🧠 Step 4: Training Model-C for {epochs} epochs...")
    config = TrainConfig(model="C", epochs=epochs, lr=desk["lr"], seed=0)
    model = build_model("C", RngStream(seed=0))
    result = train(model, datasets["train"], datasets["val"], config, run_dir=run_dir / "seed_0")
    first, last = result.log.records[0], result.log.records[-1]
    print(f"✅ Train loss {first.train_loss:.2f} -> {last.train_loss:.2f} cm, "
          f"best val MAE {result.best_val_mae:.2f} cm at epoch {result.best_epoch}")

    print("\n🎯 Step 5: Test-set evaluation...")
    test = evaluate(result.model, datasets["test"])
    print(f"   Model-C test MAE: {test.mae:.2f} cm")
    gain = 1.0 - test.mae / mean_mae
    print(f"   {gain:.0%} below the predict-training-mean baseline")

    print("\n" + "=" * 50)
    print("🎉 Demo completed! Artifacts are under", run_dir)


if __name__ == "__main__":
    try:
        run_demo(epochs=int(sys.argv[1]) if len(sys.argv) > 1 else 10)
    except KeyboardInterrupt:
        print("\n👋 Goodbye!")
    except Exception as e:
        print(f"❌ Demo failed: {e}")
        sys.exit(1)
