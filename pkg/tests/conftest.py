import numpy as np
import pytest

from pagdiff import Denoiser, DenoiserConfig, make_linear_schedule


def randomize_weights(model, seed, scale=0.1):
    rng = np.random.default_rng(seed)
    for name in model.weights:
        model.weights[name] = np.asarray(
            scale * rng.standard_normal(model.weights[name].shape))
    return model


@pytest.fixture
def sched100():
    return make_linear_schedule(100)


@pytest.fixture
def small_model():
    """8x8 model with a small token dim and random (untrained) weights."""
    cfg = DenoiserConfig(image_side=8, token_dim=8, num_attention_blocks=2)
    return randomize_weights(Denoiser(cfg), seed=7)


@pytest.fixture
def tiny_model():
    """4x4 model small enough for exhaustive finite-difference checks."""
    cfg = DenoiserConfig(image_side=4, token_dim=8, num_attention_blocks=2)
    return randomize_weights(Denoiser(cfg), seed=3)
