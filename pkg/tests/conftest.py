from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acgate.config import ModelParams, TrainParams
from acgate.panel import SplitSpec, chronological_split, fit_normalizer
from acgate.synth import DgpConfig, generate


def small_model_params(**overrides) -> ModelParams:
    base = dict(k_max=4, hidden=8, layers=2, embed_dim=3, encoder_width=8,
                gate_width=8, decoder_width=8, lag_penalty=0.1,
                temperature=1.0, recon_weight=1.0, detach_recon=True)
    base.update(overrides)
    return ModelParams(**base)


def small_train_params(**overrides) -> TrainParams:
    base = dict(lr=1e-2, epochs=30, patience=30, dropout=0.0, clip="global",
                clip_norm=1.0, init_scale=0.1)
    base.update(overrides)
    return TrainParams(**base)


def make_bundle(n=10, t=36, k=4, scenario="linear", seed=0, **dgp_overrides):
    """Small normalized synthetic bundle for unit tests."""
    cfg = DgpConfig(n_entities=n, n_steps=t, k_max=k, scenario=scenario,
                    seed=seed, **dgp_overrides)
    sp = generate(cfg)
    train_end = int(0.6 * t) - 1
    val_end = train_end + max(2, int(0.2 * t))
    spec = SplitSpec(train_end=train_end, val_end=val_end, warmup=k)
    segments = chronological_split(sp.panel, spec)
    norm = fit_normalizer(sp.panel, segments[0])
    return norm.apply(sp.panel), segments, sp


@pytest.fixture
def small_bundle():
    return make_bundle()
