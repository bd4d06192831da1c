"""
Pytest configuration file for redundancy-lens tests.
"""

import os
import sys

import pytest

# Add the parent directory to the path so we can import the package
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from redundancy_lens.layout import TokenLayout
from redundancy_lens.model import Checkpoint, ModelConfig, random_init
from redundancy_lens.ranker import ValidationBatch, synthetic_batch


@pytest.fixture
def tiny_config() -> ModelConfig:
    """A two-layer vanilla model small enough for exhaustive checks."""
    return ModelConfig(
        n_layers=2, d_model=8, d_ff=16, n_heads=2, ffn_kind="vanilla", vocab_size=32
    )


@pytest.fixture
def tiny_ckpt(tiny_config: ModelConfig) -> Checkpoint:
    return random_init(tiny_config, seed=7)


@pytest.fixture
def tiny_layout() -> TokenLayout:
    return TokenLayout.standard(prefix=2, visual=8, suffix=3)


@pytest.fixture
def tiny_batch(tiny_config: ModelConfig) -> ValidationBatch:
    return synthetic_batch(
        tiny_config.vocab_size,
        n_items=4,
        seed=3,
        subsets=("a", "b"),
        prefix=2,
        visual=8,
        suffix=3,
    )
