#!/usr/bin/env python3
"""
Desk-scale acceptance run (needs --runslow): Model-C must clearly beat the mean predictor
"""

import numpy as np
import pytest

from src.core.config import PRESETS
from src.core.models import build_model
from src.core.rng import RngStream
from src.data.pipeline import PipelineConfig, build_dataset
from src.data.synthgen import SynthSettings, generate_dataset, render_dataset
from src.training.trainer import TrainConfig, evaluate, train


def preset_settings(model, name="desk"):
    return model(**{k: v for k, v in PRESETS[name].items() if k in model.model_fields})


@pytest.mark.slow
def test_model_c_beats_mean_baseline_at_desk_scale(tmp_path):
    synth = preset_settings(SynthSettings)
    entries = generate_dataset(synth.n, master_seed=0,
                               ratios=(synth.train_ratio, synth.val_ratio, synth.test_ratio))
    manifest = render_dataset(entries, tmp_path / "data", synth, threads=4)
    datasets, report = build_dataset(manifest, preset_settings(PipelineConfig), threads=4)
    assert not report.skips

    config = TrainConfig(model="C", epochs=PRESETS["desk"]["epochs"], lr=PRESETS["desk"]["lr"], seed=0)
    result = train(build_model("C", RngStream(seed=0)), datasets["train"], datasets["val"], config,
                   run_dir=tmp_path / "seed_0")
    losses = [r.train_loss for r in result.log.records]
    assert np.mean(losses[-5:]) < losses[0]

    baseline = float(np.mean(np.abs(datasets["test"].labels - datasets["train"].labels.mean())))
    assert evaluate(result.model, datasets["test"]).mae <= 0.6 * baseline
