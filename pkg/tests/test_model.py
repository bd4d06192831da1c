"""
Tests for the toy decoder: checkpoints and the forward pass.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from redundancy_lens.errors import (
    CheckpointError,
    ParameterError,
    PlanError,
    ShapeError,
    TruncationError,
)
from redundancy_lens.layout import TokenLayout
from redundancy_lens.model import (
    Checkpoint,
    ModelConfig,
    checkpoint_paths,
    forward,
    load_checkpoint,
    random_init,
    save_checkpoint,
    tensor_specs,
)
from redundancy_lens.reductions import PruningStep, ReductionPlan


def _ids(ckpt: Checkpoint, layout: TokenLayout, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, ckpt.config.vocab_size, size=len(layout))


def test_model_config_validation() -> None:
    with pytest.raises(ParameterError):
        ModelConfig(n_layers=0)
    with pytest.raises(ParameterError):
        ModelConfig(d_ff=0)
    with pytest.raises(ParameterError):
        ModelConfig(d_model=10, n_heads=4)
    with pytest.raises(ParameterError):
        ModelConfig(ffn_kind="sparse")


def test_tensor_count() -> None:
    """Two embeddings, ten tensors per vanilla layer, final norm and output."""
    config = ModelConfig(n_layers=2, d_model=8, d_ff=16, n_heads=2, vocab_size=32)
    assert len(tensor_specs(config)) == 2 + 2 * 10 + 2
    gated = ModelConfig(
        n_layers=2, d_model=8, d_ff=16, n_heads=2, vocab_size=32, ffn_kind="gated"
    )
    names = [name for name, _ in tensor_specs(gated)]
    assert len(names) == 2 + 2 * 9 + 2
    assert "layers.1.wg" in names and "layers.1.wd" in names
    assert "layers.1.w1" not in names


def test_random_init_deterministic(tiny_config: ModelConfig) -> None:
    a = random_init(tiny_config, seed=5)
    b = random_init(tiny_config, seed=5)
    c = random_init(tiny_config, seed=6)
    assert a.tensor_bytes() == b.tensor_bytes()
    assert a.tensor_bytes() != c.tensor_bytes()


def test_random_init_gains_and_biases(tiny_ckpt: Checkpoint) -> None:
    assert np.array_equal(tiny_ckpt.tensors["layers.0.attn_norm"], np.ones(8))
    assert np.array_equal(tiny_ckpt.tensors["layers.1.b1"], np.zeros(16))
    assert abs(float(tiny_ckpt.tensors["output"].std()) - 0.02) < 0.01


def test_save_load_round_trip(tiny_ckpt: Checkpoint, tmp_path: Path) -> None:
    manifest, blob = save_checkpoint(tiny_ckpt, tmp_path / "toy")
    assert manifest.name == "toy.manifest.json"
    assert blob.name == "toy.bin"
    loaded = load_checkpoint(manifest)
    assert loaded.config == tiny_ckpt.config
    for name, _ in tensor_specs(tiny_ckpt.config):
        assert np.array_equal(loaded.tensors[name], tiny_ckpt.tensors[name])


def test_manifests_equal_across_seeds(tiny_config: ModelConfig, tmp_path: Path) -> None:
    save_checkpoint(random_init(tiny_config, 1), tmp_path / "a")
    save_checkpoint(random_init(tiny_config, 2), tmp_path / "b")
    ma = json.loads((tmp_path / "a.manifest.json").read_text())
    mb = json.loads((tmp_path / "b.manifest.json").read_text())
    ma.pop("blob")
    mb.pop("blob")
    assert ma == mb
    assert (tmp_path / "a.bin").read_bytes() != (tmp_path / "b.bin").read_bytes()


def test_checkpoint_paths_accept_either_file() -> None:
    expected = (Path("x/toy.manifest.json"), Path("x/toy.bin"))
    assert checkpoint_paths("x/toy") == expected
    assert checkpoint_paths("x/toy.bin") == expected
    assert checkpoint_paths("x/toy.manifest.json") == expected


def test_truncated_blob_names_tensor(tiny_ckpt: Checkpoint, tmp_path: Path) -> None:
    _, blob = save_checkpoint(tiny_ckpt, tmp_path / "toy")
    blob.write_bytes(blob.read_bytes()[:-1])
    with pytest.raises(TruncationError) as excinfo:
        load_checkpoint(tmp_path / "toy")
    assert excinfo.value.tensor == "output"
    assert "output" in str(excinfo.value)


def test_shape_mismatch(tiny_ckpt: Checkpoint, tmp_path: Path) -> None:
    manifest, _ = save_checkpoint(tiny_ckpt, tmp_path / "toy")
    data = json.loads(manifest.read_text())
    for entry in data["tensors"]:
        if entry["name"] == "layers.0.w1":
            entry["shape"] = [8, 8]
    manifest.write_text(json.dumps(data))
    with pytest.raises(ShapeError):
        load_checkpoint(manifest)


def test_unknown_ffn_kind(tiny_ckpt: Checkpoint, tmp_path: Path) -> None:
    manifest, _ = save_checkpoint(tiny_ckpt, tmp_path / "toy")
    data = json.loads(manifest.read_text())
    data["config"]["ffn_kind"] = "sparse"
    manifest.write_text(json.dumps(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(manifest)


def test_missing_manifest(tmp_path: Path) -> None:
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nothing")


def test_forward_shapes(tiny_ckpt: Checkpoint, tiny_layout: TokenLayout) -> None:
    result = forward(tiny_ckpt, _ids(tiny_ckpt, tiny_layout), tiny_layout)
    assert result.logits.shape == (len(tiny_layout), tiny_ckpt.config.vocab_size)
    assert np.isfinite(result.logits).all()
    assert result.positions.tolist() == list(range(len(tiny_layout)))


def test_forward_deterministic(tiny_ckpt: Checkpoint, tiny_layout: TokenLayout) -> None:
    ids = _ids(tiny_ckpt, tiny_layout)
    plan = ReductionPlan(ffn_layers=frozenset({0, 1}), attn_layers=frozenset({1}))
    a = forward(tiny_ckpt, ids, tiny_layout, plan, seed=3)
    b = forward(tiny_ckpt, ids, tiny_layout, plan, seed=3)
    assert np.array_equal(a.logits, b.logits)


def test_forward_noop_plan_bitwise(
    tiny_ckpt: Checkpoint, tiny_layout: TokenLayout
) -> None:
    ids = _ids(tiny_ckpt, tiny_layout)
    plain = forward(tiny_ckpt, ids, tiny_layout)
    empty = forward(tiny_ckpt, ids, tiny_layout, ReductionPlan())
    assert np.array_equal(plain.logits, empty.logits)


def test_full_selection_forward_bitwise() -> None:
    """K = d_ff reproduces the unreduced logits bitwise on random models."""
    layout = TokenLayout.standard(prefix=2, visual=6, suffix=2)
    for trial in range(100):
        config = ModelConfig(
            n_layers=2,
            d_model=8,
            d_ff=12,
            n_heads=2,
            vocab_size=24,
            ffn_kind="gated" if trial % 2 else "vanilla",
            activation="silu" if trial % 3 == 0 else "relu",
        )
        ckpt = random_init(config, seed=trial)
        ids = _ids(ckpt, layout, seed=trial)
        plan = ReductionPlan(
            ffn_layers=frozenset({0, 1}),
            k_fraction=1.0,
            probe_fraction=0.5,
            scope="all_tokens" if trial % 4 == 0 else "visual_only",
        )
        full = forward(ckpt, ids, layout)
        reduced = forward(ckpt, ids, layout, plan, seed=trial)
        assert np.array_equal(full.logits, reduced.logits)


def test_wide_window_hollow_attention_matches() -> None:
    """R_A >= n_visual leaves the forward pass unchanged."""
    config = ModelConfig(n_layers=2, d_model=8, d_ff=12, n_heads=2, vocab_size=24)
    for trial in range(100):
        rng = np.random.default_rng(trial)
        n = int(rng.integers(1, 16))
        layout = TokenLayout(tuple(rng.choice(["visual", "text"], size=n)))
        ckpt = random_init(config, seed=trial)
        ids = _ids(ckpt, layout, seed=trial)
        plan = ReductionPlan(
            attn_layers=frozenset({0, 1}),
            attention_range=max(1, layout.n_visual + int(rng.integers(0, 3))),
        )
        full = forward(ckpt, ids, layout)
        reduced = forward(ckpt, ids, layout, plan)
        assert np.max(np.abs(full.logits - reduced.logits)) <= 1e-9


def test_forward_rejects_bad_input(
    tiny_ckpt: Checkpoint, tiny_layout: TokenLayout
) -> None:
    ids = _ids(tiny_ckpt, tiny_layout)
    with pytest.raises(ShapeError):
        forward(tiny_ckpt, ids[:-1], tiny_layout)
    bad = ids.copy()
    bad[0] = tiny_ckpt.config.vocab_size
    with pytest.raises(ParameterError):
        forward(tiny_ckpt, bad, tiny_layout)
    with pytest.raises(PlanError):
        forward(tiny_ckpt, ids, tiny_layout, ReductionPlan(ffn_layers=frozenset({5})))


def test_pruned_forward_keeps_text(
    tiny_ckpt: Checkpoint, tiny_layout: TokenLayout
) -> None:
    plan = ReductionPlan(pruning=PruningStep(at_layer=0, keep_ratio=0.5))
    result = forward(tiny_ckpt, _ids(tiny_ckpt, tiny_layout), tiny_layout, plan)
    kept = set(result.positions.tolist())
    assert set(tiny_layout.text_positions.tolist()) <= kept
    assert len(kept) == tiny_layout.n_text + 4
    assert result.layout.n_visual == 4
    assert result.logits.shape[0] == len(kept)


def test_record_attention(tiny_ckpt: Checkpoint, tiny_layout: TokenLayout) -> None:
    result = forward(
        tiny_ckpt, _ids(tiny_ckpt, tiny_layout), tiny_layout, record_attention=True
    )
    assert result.per_layer_attention is not None
    assert len(result.per_layer_attention) == tiny_ckpt.config.n_layers
    # every query row sums to 1, so the received mass sums to 1 per layer
    for received in result.per_layer_attention:
        assert received.sum() == pytest.approx(1.0)


def test_text_only_sequence_ignores_visual_plan(tiny_ckpt: Checkpoint) -> None:
    """A visual_only plan leaves a sequence without visual tokens untouched."""
    layout = TokenLayout.parse("TTTTTTTTT")
    ids = _ids(tiny_ckpt, layout, seed=4)
    every_layer = frozenset(range(tiny_ckpt.config.n_layers))
    plan = ReductionPlan(
        attn_layers=every_layer,
        ffn_layers=every_layer,
        attention_range=1,
        k_fraction=0.1,
        pruning=PruningStep(at_layer=0, keep_ratio=0.5),
    )
    full = forward(tiny_ckpt, ids, layout)
    reduced = forward(tiny_ckpt, ids, layout, plan, seed=11)
    assert np.array_equal(reduced.positions, full.positions)
    assert np.array_equal(reduced.logits, full.logits)


def test_pruning_never_drops_text(tiny_ckpt: Checkpoint) -> None:
    rng = np.random.default_rng(29)
    n_layers = tiny_ckpt.config.n_layers
    for trial in range(100):
        layout = TokenLayout.standard(
            int(rng.integers(0, 4)), int(rng.integers(1, 12)), int(rng.integers(1, 4))
        )
        plan = ReductionPlan(
            attn_layers=frozenset(
                int(i) for i in np.flatnonzero(rng.random(n_layers) < 0.5)
            ),
            ffn_layers=frozenset(
                int(i) for i in np.flatnonzero(rng.random(n_layers) < 0.5)
            ),
            attention_range=int(rng.integers(1, 6)),
            k_fraction=float(rng.uniform(0.05, 1.0)),
            scope="all_tokens" if rng.random() < 0.3 else "visual_only",
            pruning=PruningStep(
                at_layer=int(rng.integers(0, n_layers)),
                keep_ratio=float(rng.uniform(0.05, 1.0)),
            ),
        )
        result = forward(tiny_ckpt, _ids(tiny_ckpt, layout, trial), layout, plan)
        kept = set(result.positions.tolist())
        assert set(layout.text_positions.tolist()) <= kept
        assert result.layout.n_text == layout.n_text
        assert result.logits.shape[0] == len(kept)
