"""Shared fixtures: vocabulary, a small corpus, and a quickly trained model.

The heavyweight toy-scale runs live in test_acceptance.py; fixtures here stay
small enough for the unit suite to finish in a few minutes.
"""

from __future__ import annotations

import numpy as np
import pytest

from hintsr.datagen import (
    GeneratorConfig,
    HintOptions,
    build_sample,
    default_global_pool,
)
from hintsr.nn import ConditionedRegressor, ModelConfig
from hintsr.train import TrainConfig, train_model
from hintsr.vocab import default_vocabulary

QUICK_PALETTE = {"add": 1.0, "mul": 1.0, "sin": 1.0}


@pytest.fixture(scope="session")
def vocab():
    return default_vocabulary()


@pytest.fixture(scope="session")
def quick_gen_config() -> GeneratorConfig:
    return GeneratorConfig(
        max_depth=3,
        max_prefix_len=12,
        max_vars=2,
        n_points=(24, 48),
        operator_weights=QUICK_PALETTE,
        leaf_const_prob=0.15,
        p_leaf=0.55,
        multiplicative_range=(0.3, 3.0),
        additive_range=(-3.0, 3.0),
        support_bound=4.0,
        min_support_width=6.0,
    )


@pytest.fixture(scope="session")
def quick_pool(quick_gen_config):
    return default_global_pool(quick_gen_config, seed=11, n_expressions=2000)


@pytest.fixture(scope="session")
def quick_corpus(quick_gen_config, quick_pool):
    rng = np.random.default_rng(123)
    options = HintOptions(global_pool=quick_pool)
    return [build_sample(quick_gen_config, rng, options) for _ in range(3000)]


@pytest.fixture(scope="session")
def quick_model_config(vocab) -> ModelConfig:
    return ModelConfig(
        hidden=48,
        heads=4,
        latent_slots=8,
        enc_layers=2,
        dec_layers=2,
        ff_mult=2,
        max_vars=2,
        max_target_len=16,
        max_cond_len=72,
        vocab_size=len(vocab.tokens),
    )


@pytest.fixture(scope="session")
def quick_model(quick_corpus, quick_model_config, vocab):
    """A few hundred steps: enough to decode well-formed expressions."""
    model = ConditionedRegressor(quick_model_config, vocab, seed=0)
    cfg = TrainConfig(
        steps=400, batch_size=64, base_lr=1e-3, warmup=100, max_points=24,
        seed=0, log_every=400, heldout_fraction=0.02, heldout_max=64,
    )
    train_model(model, quick_corpus, vocab, cfg)
    return model


@pytest.fixture(scope="session")
def overfit_model(vocab):
    """Memorizes a single-skeleton corpus; decode tests get a known answer."""
    from hintsr.datagen import Observations, TrainingSample
    from hintsr import hints
    from hintsr.expr import evaluate, parse_prefix

    skeleton = parse_prefix(["sin", "x1"])
    rng = np.random.default_rng(0)
    samples = []
    for _ in range(64):
        pts = rng.uniform(-3.0, 3.0, size=(24, 1))
        samples.append(TrainingSample(
            skeleton=skeleton,
            constants=(),
            known=(),
            intervals=((-3.0, 3.0),),
            observations=Observations(points=pts.astype(np.float32),
                                      values=evaluate(skeleton, pts).astype(np.float32)),
            pi=hints.PrivilegedInfo(),
        ))
    cfg = ModelConfig(hidden=32, heads=2, latent_slots=4, enc_layers=1,
                      dec_layers=1, ff_mult=2, max_vars=2, max_target_len=8,
                      max_cond_len=72, vocab_size=len(vocab.tokens))
    model = ConditionedRegressor(cfg, vocab, seed=1)
    tcfg = TrainConfig(steps=200, batch_size=16, base_lr=2e-3, warmup=20,
                       max_points=24, seed=0, log_every=200,
                       heldout_fraction=0.05, heldout_max=8)
    train_model(model, samples, vocab, tcfg)
    return model, ("sin", "x1")
