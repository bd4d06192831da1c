"""Toy decoder-only multimodal transformer.

Pre-norm decoder with RMS-norm and no positional encoding, so the attention
mask alone decides which tokens interact. Each token embedding is the sum of a
vocabulary row and a modality row (text or visual).

Checkpoints are a JSON manifest plus one little-endian float32 blob::

    <name>.manifest.json
    <name>.bin
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from redundancy_lens.config import (
    DEFAULT_ACTIVATION,
    DEFAULT_D_FF,
    DEFAULT_D_MODEL,
    DEFAULT_FFN_KIND,
    DEFAULT_LAYERS,
    DEFAULT_N_HEADS,
    DEFAULT_VOCAB,
    INIT_STD,
)
from redundancy_lens.errors import (
    CheckpointError,
    ParameterError,
    PlanError,
    ShapeError,
    TruncationError,
)
from redundancy_lens.fileio import write_atomic
from redundancy_lens.layout import TokenLayout
from redundancy_lens.numkernel import (
    AttentionMask,
    Matrix,
    masked_softmax_rows,
    matmul,
    rms_norm,
)
from redundancy_lens.reductions import (
    FFNWeights,
    ReductionPlan,
    fastv_prune,
    hollow_mask,
    reduced_ffn,
)

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = "redundancy-lens/1"
BLOB_DTYPE = "<f4"

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = DEFAULT_LAYERS
    d_model: int = DEFAULT_D_MODEL
    d_ff: int = DEFAULT_D_FF
    n_heads: int = DEFAULT_N_HEADS
    ffn_kind: str = DEFAULT_FFN_KIND
    vocab_size: int = DEFAULT_VOCAB
    activation: str = DEFAULT_ACTIVATION

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ParameterError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_ff < 1:
            raise ParameterError(f"d_ff must be >= 1, got {self.d_ff}")
        if self.d_model < 1 or self.n_heads < 1 or self.vocab_size < 1:
            raise ParameterError("d_model, n_heads and vocab_size must be positive")
        if self.d_model % self.n_heads:
            raise ParameterError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}"
            )
        if self.ffn_kind not in ("vanilla", "gated"):
            raise ParameterError(f"unknown ffn_kind: {self.ffn_kind!r}")
        if self.activation not in ("relu", "silu"):
            raise ParameterError(f"unknown activation: {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> Dict[str, Union[int, str]]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Union[int, str]]) -> "ModelConfig":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        return cls(**known)  # type: ignore[arg-type]


def tensor_specs(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Names and shapes of every checkpoint tensor, in blob order."""
    d, f = config.d_model, config.d_ff
    specs: List[Tuple[str, Tuple[int, ...]]] = [
        ("token_embedding", (config.vocab_size, d)),
        ("modality_embedding", (2, d)),
    ]
    for i in range(config.n_layers):
        p = f"layers.{i}"
        specs += [
            (f"{p}.wq", (d, d)),
            (f"{p}.wk", (d, d)),
            (f"{p}.wv", (d, d)),
            (f"{p}.wo", (d, d)),
            (f"{p}.attn_norm", (d,)),
            (f"{p}.ffn_norm", (d,)),
        ]
        if config.ffn_kind == "vanilla":
            specs += [
                (f"{p}.w1", (d, f)),
                (f"{p}.b1", (f,)),
                (f"{p}.w2", (f, d)),
                (f"{p}.b2", (d,)),
            ]
        else:
            specs += [(f"{p}.wg", (d, f)), (f"{p}.wu", (d, f)), (f"{p}.wd", (f, d))]
    specs += [("final_norm", (d,)), ("output", (d, config.vocab_size))]
    return specs


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    attn_norm: np.ndarray
    ffn_norm: np.ndarray
    ffn: FFNWeights


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Model configuration plus its named float64 tensors (read-only)."""

    config: ModelConfig
    tensors: Dict[str, np.ndarray]

    def __post_init__(self) -> None:
        for name, shape in tensor_specs(self.config):
            if name not in self.tensors:
                raise CheckpointError(f"missing tensor '{name}'")
            if self.tensors[name].shape != shape:
                raise ShapeError(
                    f"tensor '{name}' has shape {self.tensors[name].shape}, "
                    f"config requires {shape}"
                )
            self.tensors[name].setflags(write=False)

    def layer(self, i: int) -> LayerWeights:
        t = self.tensors
        p = f"layers.{i}"
        if self.config.ffn_kind == "vanilla":
            ffn = FFNWeights(
                kind="vanilla",
                act=self.config.activation,  # type: ignore[arg-type]
                w1=t[f"{p}.w1"],
                b1=t[f"{p}.b1"],
                w2=t[f"{p}.w2"],
                b2=t[f"{p}.b2"],
            )
        else:
            ffn = FFNWeights(
                kind="gated",
                act=self.config.activation,  # type: ignore[arg-type]
                wg=t[f"{p}.wg"],
                wu=t[f"{p}.wu"],
                wd=t[f"{p}.wd"],
            )
        return LayerWeights(
            wq=t[f"{p}.wq"],
            wk=t[f"{p}.wk"],
            wv=t[f"{p}.wv"],
            wo=t[f"{p}.wo"],
            attn_norm=t[f"{p}.attn_norm"],
            ffn_norm=t[f"{p}.ffn_norm"],
            ffn=ffn,
        )

    def tensor_bytes(self) -> bytes:
        """The blob this checkpoint serializes to."""
        return b"".join(
            self.tensors[name].astype(BLOB_DTYPE).tobytes()
            for name, _ in tensor_specs(self.config)
        )


def random_init(config: ModelConfig, seed: int) -> Checkpoint:
    """Draw a checkpoint from N(0, 0.02); norm gains are 1 and biases 0.

    Values are rounded to float32 so that saving and loading is exact.
    """
    rng = np.random.default_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in tensor_specs(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("norm"):
            value = np.ones(shape)
        elif leaf in ("b1", "b2"):
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, INIT_STD, size=shape)
        tensors[name] = value.astype(np.float32).astype(np.float64)
    return Checkpoint(config=config, tensors=tensors)


def checkpoint_paths(path: PathLike) -> Tuple[Path, Path]:
    """Manifest and blob paths for a checkpoint name or either of its files."""
    base = str(path)
    for suffix in (".manifest.json", ".bin"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    return Path(base + ".manifest.json"), Path(base + ".bin")


def save_checkpoint(ckpt: Checkpoint, path: PathLike) -> Tuple[Path, Path]:
    manifest_path, blob_path = checkpoint_paths(path)
    entries = []
    offset = 0
    for name, shape in tensor_specs(ckpt.config):
        nbytes = int(np.prod(shape)) * 4
        entries.append(
            {
                "name": name,
                "shape": list(shape),
                "dtype": BLOB_DTYPE,
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    manifest = {
        "format": MANIFEST_FORMAT,
        "config": ckpt.config.to_dict(),
        "blob": blob_path.name,
        "tensors": entries,
    }
    write_atomic(blob_path, ckpt.tensor_bytes())
    write_atomic(manifest_path, json.dumps(manifest, indent=2) + "\n")
    logger.info("saved checkpoint %s (%d tensors)", manifest_path, len(entries))
    return manifest_path, blob_path


def load_checkpoint(path: PathLike) -> Checkpoint:
    """Load and validate a checkpoint written by ``save_checkpoint``."""
    manifest_path, blob_path = checkpoint_paths(path)
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise CheckpointError(f"{manifest_path}: manifest not found") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{manifest_path}: invalid manifest JSON: {e}") from e

    try:
        config = ModelConfig.from_dict(manifest["config"])
    except KeyError as e:
        raise CheckpointError(f"{manifest_path}: manifest has no config") from e
    except (ParameterError, TypeError) as e:
        raise CheckpointError(f"{manifest_path}: {e}") from e

    blob_path = manifest_path.with_name(manifest.get("blob", blob_path.name))
    try:
        blob = blob_path.read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"{blob_path}: blob not found") from e

    declared = {entry["name"]: entry for entry in manifest.get("tensors", [])}
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in tensor_specs(config):
        entry = declared.get(name)
        if entry is None:
            raise CheckpointError(f"{manifest_path}: tensor '{name}' not declared")
        missing = {"shape", "offset"} - set(entry)
        if missing:
            raise CheckpointError(
                f"{manifest_path}: tensor '{name}' lacks {sorted(missing)[0]}"
            )
        if tuple(entry["shape"]) != shape:
            raise ShapeError(
                f"{manifest_path}: tensor '{name}' declared as {entry['shape']}, "
                f"config requires {list(shape)}"
            )
        if entry.get("dtype", BLOB_DTYPE) != BLOB_DTYPE:
            raise CheckpointError(
                f"{manifest_path}: tensor '{name}' has dtype {entry['dtype']}"
            )
        count = int(np.prod(shape))
        offset = int(entry["offset"])
        if offset + count * 4 > len(blob):
            raise TruncationError(name, count * 4, max(0, len(blob) - offset))
        data = np.frombuffer(blob, dtype=BLOB_DTYPE, count=count, offset=offset)
        tensors[name] = data.astype(np.float64).reshape(shape)
    extra = sorted(set(declared) - {name for name, _ in tensor_specs(config)})
    if extra:
        raise CheckpointError(f"{manifest_path}: unexpected tensor '{extra[0]}'")
    logger.info("loaded checkpoint %s", manifest_path)
    return Checkpoint(config=config, tensors=tensors)


def causal_mask(n: int) -> AttentionMask:
    if n < 1:
        raise ParameterError(f"sequence length must be >= 1, got {n}")
    return AttentionMask(np.tril(np.ones((n, n), dtype=bool)))


@dataclass
class ForwardResult:
    """Output of one forward pass.

    ``positions`` maps each logits row to its position in the input; it is
    shorter than the input only when the plan prunes tokens.
    """

    logits: Matrix
    positions: np.ndarray
    layout: TokenLayout
    per_layer_attention: Optional[List[np.ndarray]] = None


def attention(
    h: Matrix, layer: LayerWeights, mask: AttentionMask, n_heads: int
) -> Tuple[Matrix, np.ndarray]:
    """Multi-head self-attention under ``mask``.

    Returns:
        The output projection and the per-head attention probabilities
    """
    q = matmul(h, layer.wq)
    k = matmul(h, layer.wk)
    v = matmul(h, layer.wv)
    head_dim = h.shape[1] // n_heads
    scale = 1.0 / math.sqrt(head_dim)
    heads = []
    probs = []
    for i in range(n_heads):
        cols = slice(i * head_dim, (i + 1) * head_dim)
        p = masked_softmax_rows(matmul(q[:, cols], k[:, cols].T) * scale, mask)
        heads.append(matmul(p, v[:, cols]))
        probs.append(p)
    return matmul(np.concatenate(heads, axis=1), layer.wo), np.stack(probs)


def layer_rng(seed: int, layer: int) -> np.random.Generator:
    """Probe generator for one layer, decorrelated across layers."""
    return np.random.default_rng([seed, layer])


def forward(
    ckpt: Checkpoint,
    token_ids: Sequence[int],
    layout: TokenLayout,
    plan: Optional[ReductionPlan] = None,
    seed: int = 0,
    record_attention: bool = False,
) -> ForwardResult:
    """Run the model over one sequence, applying ``plan`` when given.

    Args:
        ckpt: Model weights
        token_ids: One id per position
        layout: Modality tag per position
        plan: Reductions to apply; None runs the unreduced model
        seed: Seed for probe sampling
        record_attention: Keep the attention received per position and layer

    Returns:
        Logits for every surviving position
    """
    config = ckpt.config
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.shape != (len(layout),):
        raise ShapeError(f"{ids.size} token ids for a layout of {len(layout)}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        bad = int(ids[(ids < 0) | (ids >= config.vocab_size)][0])
        raise ParameterError(
            f"token id {bad} out of range for vocab_size={config.vocab_size}"
        )
    if plan is not None:
        try:
            plan.validate(config.n_layers)
        except PlanError as e:
            raise PlanError(f"plan does not fit the model: {e}") from e

    modality = layout.visual_mask.astype(np.int64)
    token_rows = ckpt.tensors["token_embedding"][ids]
    x = token_rows + ckpt.tensors["modality_embedding"][modality]
    positions = np.arange(len(layout))
    live = layout
    received: Optional[List[np.ndarray]] = [] if record_attention else None

    for i in range(config.n_layers):
        weights = ckpt.layer(i)
        if plan is not None and i in plan.attn_layers:
            mask = hollow_mask(live, plan.attention_range, plan.scope)
        else:
            mask = causal_mask(len(live))
        attn_out, probs = attention(
            rms_norm(x, weights.attn_norm), weights, mask, config.n_heads
        )
        x = x + attn_out

        h = rms_norm(x, weights.ffn_norm)
        if plan is not None and i in plan.ffn_layers:
            x = x + reduced_ffn(h, weights.ffn, live, plan, layer_rng(seed, i))
        else:
            x = x + weights.ffn.forward(h)

        pruning = plan.pruning if plan is not None else None
        if received is not None or (pruning is not None and pruning.at_layer == i):
            per_position = probs.mean(axis=(0, 1))
            if received is not None:
                received.append(per_position)
            if pruning is not None and pruning.at_layer == i:
                keep = fastv_prune(per_position, live, pruning.keep_ratio)
                logger.debug(
                    "layer %d pruning kept %d of %d tokens", i, keep.size, len(live)
                )
                x = x[keep]
                positions = positions[keep]
                live = live.subset(keep)

    logits = matmul(rms_norm(x, ckpt.tensors["final_norm"]), ckpt.tensors["output"])
    return ForwardResult(
        logits=logits,
        positions=positions,
        layout=live,
        per_layer_attention=received,
    )
