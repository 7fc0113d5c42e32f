from dataclasses import replace

import sys

import numpy as np
import pytest

from structprune.calibration import sample_calibration
from structprune.model import ModelConfig
from structprune.model_io import gen_toy_model

TOY = dict(n_layers=4, d_model=64, n_heads=8, d_head=8, d_ff=256, vocab_size=257)


def toy_config(**overrides):
    return ModelConfig(**{**TOY, **overrides})


def zero_outputs(model):
    """Same model with every w_o and w_down zeroed: each block is the identity."""
    layers = [replace(ly, w_o=np.zeros_like(ly.w_o), w_down=np.zeros_like(ly.w_down)) for ly in model.layers]
    return replace(model, layers=layers)


@pytest.fixture(scope="session")
def toy_model():
    return gen_toy_model(toy_config(), 42)


@pytest.fixture(scope="session")
def tiny_model():
    """2 layers, 4 heads, small enough for the loop-based oracles."""
    return gen_toy_model(toy_config(n_layers=2, d_model=16, n_heads=4, d_head=4, d_ff=24, vocab_size=40), 3)


@pytest.fixture(scope="session")
def corpus():
    return np.random.default_rng(1234).integers(0, 257, 20000)


@pytest.fixture(scope="session")
def small_calib(corpus):
    return sample_calibration(corpus, 4, 32, seed=0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.result_lines():
        terminalreporter.write_line(line)
