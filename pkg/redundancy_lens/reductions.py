"""Computational reductions for visual tokens.

Two reductions are applied per layer:

- Probe-Activated Dynamic FFN: a random probe of M token rows picks the K
  hidden units with the largest mean absolute activation, and the FFN runs on
  those K units only.
- Hollow Attention: a visual query sees every causally earlier text token but
  only the R_A visual tokens preceding it (plus itself). Text queries keep the
  full causal row.

A FastV-style pruning step, which drops the visual tokens that receive the
least attention at one layer, is provided so both approaches can be combined.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, Literal, Optional, Union

import numpy as np

from redundancy_lens.config import (
    DEFAULT_ATTENTION_RANGE,
    DEFAULT_K_FRACTION,
    DEFAULT_PROBE_FRACTION,
)
from redundancy_lens.errors import ParameterError, PlanError, SelectionError
from redundancy_lens.fileio import write_atomic
from redundancy_lens.layout import TokenLayout
from redundancy_lens.numkernel import (
    ActivationKind,
    AttentionMask,
    Matrix,
    activation,
    as_matrix,
    matmul,
)

logger = logging.getLogger(__name__)

Scope = Literal["visual_only", "all_tokens"]
FFNKind = Literal["vanilla", "gated"]
SCOPES = ("visual_only", "all_tokens")


def fraction_count(fraction: float, total: int) -> int:
    """ceil(fraction * total), ignoring float noise such as 0.3 * 10."""
    return int(math.ceil(round(fraction * total, 9)))


def probe_count(probe_fraction: float, n_rows: int) -> int:
    """M = max(1, ceil(M_frac * N))."""
    return max(1, fraction_count(probe_fraction, n_rows))


def active_units(k_fraction: float, d_ff: int) -> int:
    """K = ceil(k_fraction * d_ff)."""
    return fraction_count(k_fraction, d_ff)


@dataclass(frozen=True)
class FFNWeights:
    """Weights of one feed-forward block.

    Vanilla blocks use ``w1, b1, w2, b2``; gated blocks use ``wg, wu, wd``.
    """

    kind: FFNKind
    act: ActivationKind
    w1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    b2: Optional[np.ndarray] = None
    wg: Optional[np.ndarray] = None
    wu: Optional[np.ndarray] = None
    wd: Optional[np.ndarray] = None

    @property
    def d_ff(self) -> int:
        up = self.w1 if self.kind == "vanilla" else self.wg
        assert up is not None
        return int(up.shape[1])

    def hidden(self, x: Matrix, units: Optional[np.ndarray] = None) -> Matrix:
        """Hidden activations, restricted to ``units`` when given."""
        cols = slice(None) if units is None else units
        if self.kind == "vanilla":
            assert self.w1 is not None and self.b1 is not None
            return activation(matmul(x, self.w1[:, cols]) + self.b1[cols], self.act)
        assert self.wg is not None and self.wu is not None
        gate = activation(matmul(x, self.wg[:, cols]), self.act)
        return gate * matmul(x, self.wu[:, cols])

    def project(self, h: Matrix, units: Optional[np.ndarray] = None) -> Matrix:
        rows = slice(None) if units is None else units
        if self.kind == "vanilla":
            assert self.w2 is not None and self.b2 is not None
            return matmul(h, self.w2[rows]) + self.b2
        assert self.wd is not None
        return matmul(h, self.wd[rows])

    def forward(self, x: Matrix) -> Matrix:
        """Unreduced FFN over every hidden unit."""
        return self.project(self.hidden(x))


@dataclass(frozen=True)
class Selection:
    """Sorted hidden-unit indices chosen by the probe."""

    indices: np.ndarray

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise SelectionError("selection must be a flat index list")
        if idx.size and np.any(np.diff(idx) <= 0):
            raise SelectionError("selection indices must be strictly increasing")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)

    @classmethod
    def full(cls, d_ff: int) -> "Selection":
        return cls(np.arange(d_ff))


@dataclass(frozen=True)
class PruningStep:
    at_layer: int
    keep_ratio: float


@dataclass(frozen=True)
class ReductionPlan:
    """Which layers are reduced, and how."""

    attn_layers: FrozenSet[int] = field(default_factory=frozenset)
    ffn_layers: FrozenSet[int] = field(default_factory=frozenset)
    attention_range: int = DEFAULT_ATTENTION_RANGE
    k_fraction: float = DEFAULT_K_FRACTION
    probe_fraction: float = DEFAULT_PROBE_FRACTION
    scope: Scope = "visual_only"
    pruning: Optional[PruningStep] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "attn_layers", frozenset(self.attn_layers))
        object.__setattr__(self, "ffn_layers", frozenset(self.ffn_layers))
        if self.attention_range < 1:
            raise PlanError(f"R_A must be >= 1, got {self.attention_range}")
        if not 0.0 < self.k_fraction <= 1.0:
            raise PlanError(f"k_fraction must be in (0, 1], got {self.k_fraction}")
        if not 0.0 < self.probe_fraction <= 1.0:
            raise PlanError(
                f"probe_fraction must be in (0, 1], got {self.probe_fraction}"
            )
        if self.scope not in SCOPES:
            raise PlanError(f"unknown scope: {self.scope!r}")
        if self.pruning is not None:
            if not 0.0 < self.pruning.keep_ratio <= 1.0:
                raise PlanError(
                    f"keep_ratio must be in (0, 1], got {self.pruning.keep_ratio}"
                )
            if self.pruning.at_layer < 0:
                raise PlanError("pruning layer must be non-negative")
        if any(i < 0 for i in self.attn_layers | self.ffn_layers):
            raise PlanError("layer indices must be non-negative")

    def validate(self, n_layers: int) -> None:
        """Raise PlanError if the plan references a layer outside the model."""
        for name, layers in (
            ("attn_layers", self.attn_layers),
            ("ffn_layers", self.ffn_layers),
        ):
            bad = sorted(i for i in layers if i >= n_layers)
            if bad:
                raise PlanError(
                    f"{name} references layer {bad[0]} but the model has {n_layers}"
                )
        if self.pruning is not None and self.pruning.at_layer >= n_layers:
            raise PlanError(
                f"pruning at layer {self.pruning.at_layer} "
                f"but the model has {n_layers}"
            )

    def is_noop(self) -> bool:
        return not self.attn_layers and not self.ffn_layers and self.pruning is None

    def with_layers(
        self, attn_layers: Iterable[int] = (), ffn_layers: Iterable[int] = ()
    ) -> "ReductionPlan":
        return replace(
            self, attn_layers=frozenset(attn_layers), ffn_layers=frozenset(ffn_layers)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "attn_layers": sorted(self.attn_layers),
            "ffn_layers": sorted(self.ffn_layers),
            "R_A": self.attention_range,
            "k_fraction": self.k_fraction,
            "probe_fraction": self.probe_fraction,
            "scope": self.scope,
            "pruning": (
                None
                if self.pruning is None
                else {
                    "at_layer": self.pruning.at_layer,
                    "keep_ratio": self.pruning.keep_ratio,
                }
            ),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ReductionPlan":
        try:
            pruning = data.get("pruning")
            return cls(
                attn_layers=frozenset(int(i) for i in data.get("attn_layers", [])),
                ffn_layers=frozenset(int(i) for i in data.get("ffn_layers", [])),
                attention_range=int(data.get("R_A", DEFAULT_ATTENTION_RANGE)),
                k_fraction=float(data.get("k_fraction", DEFAULT_K_FRACTION)),
                probe_fraction=float(
                    data.get("probe_fraction", DEFAULT_PROBE_FRACTION)
                ),
                scope=data.get("scope", "visual_only"),
                pruning=(
                    None
                    if pruning is None
                    else PruningStep(
                        at_layer=int(pruning["at_layer"]),
                        keep_ratio=float(pruning["keep_ratio"]),
                    )
                ),
            )
        except PlanError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise PlanError(f"invalid reduction plan: {e}") from e


def save_plan(plan: ReductionPlan, path: Union[str, Path]) -> Path:
    return write_atomic(path, json.dumps(plan.to_dict(), indent=2) + "\n")


def load_plan(path: Union[str, Path]) -> ReductionPlan:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise PlanError(f"{path}: invalid plan JSON: {e}") from e
    if not isinstance(data, dict):
        raise PlanError(f"{path}: plan must be a JSON object")
    try:
        return ReductionPlan.from_dict(data)
    except PlanError as e:
        raise PlanError(f"{path}: {e}") from e


def probe_select(
    x: Matrix,
    weights: FFNWeights,
    m: int,
    k: int,
    rng: np.random.Generator,
) -> Selection:
    """Pick the K hidden units most active on a random probe of M rows.

    Args:
        x: Token rows entering the FFN, shape (N, d_model)
        weights: FFN weights
        m: Number of probe rows, 1 <= M <= N
        k: Number of hidden units to keep, 1 <= K <= d_ff
        rng: Generator used to draw the probe rows

    Returns:
        Ascending selection of K hidden-unit indices
    """
    x = as_matrix(x)
    n = x.shape[0]
    d_ff = weights.d_ff
    if not 1 <= m <= n:
        raise ParameterError(f"probe size M={m} must be in [1, {n}]")
    if not 1 <= k <= d_ff:
        raise ParameterError(f"unit count K={k} must be in [1, {d_ff}]")
    if m == n:
        sample = np.arange(n)
    else:
        sample = np.sort(rng.choice(n, size=m, replace=False))
    h_bar = np.abs(weights.hidden(x[sample])).mean(axis=0)
    # stable sort on -h_bar keeps the lower index first among ties
    top = np.argsort(-h_bar, kind="stable")[:k]
    selection = Selection(np.sort(top))
    logger.debug("probe over %d of %d rows kept %d of %d units", m, n, k, d_ff)
    return selection


def dynamic_ffn_forward(x: Matrix, weights: FFNWeights, selection: Selection) -> Matrix:
    """Run the FFN through the selected hidden units only."""
    idx = selection.indices
    if idx.size and (idx[0] < 0 or idx[-1] >= weights.d_ff):
        raise SelectionError(
            f"selection index {int(idx[-1])} out of range for d_ff={weights.d_ff}"
        )
    x = as_matrix(x)
    return weights.project(weights.hidden(x, idx), idx)


def hollow_mask(
    layout: TokenLayout, attention_range: int, scope: Scope = "visual_only"
) -> AttentionMask:
    """Causal mask with visual-to-visual attention limited to a look-back window.

    A visual query with visual ordinal j keeps every earlier text key and the
    visual keys with ordinals j - R_A .. j. Under ``all_tokens`` every position
    is treated as visual, which gives a plain causal sliding window.
    """
    if attention_range < 1:
        raise ParameterError(f"R_A must be >= 1, got {attention_range}")
    n = len(layout)
    if scope == "all_tokens":
        is_visual = np.ones(n, dtype=bool)
    else:
        is_visual = np.array(layout.visual_mask)
    ordinal = np.cumsum(is_visual, dtype=np.int32) - 1
    visual_pair = is_visual[:, None] & is_visual[None, :]
    in_window = (ordinal[:, None] - ordinal[None, :]) <= attention_range
    allowed = np.tril(np.ones((n, n), dtype=bool)) & ~(visual_pair & ~in_window)
    return AttentionMask(allowed)


def hollow_pair_count(layout: TokenLayout, attention_range: int) -> int:
    """Closed-form count of allowed pairs in ``hollow_mask(layout, R_A)``.

    Text rows keep q + 1 pairs; a visual row at ordinal j keeps the earlier
    text tokens plus min(j, R_A) + 1 visual tokens.
    """
    total = 0
    text_seen = 0
    ordinal = 0
    for q, is_visual in enumerate(layout.visual_mask):
        if is_visual:
            total += text_seen + min(ordinal, attention_range) + 1
            ordinal += 1
        else:
            text_seen += 1
            total += q + 1
    return total


def fastv_prune(
    attention_received: np.ndarray, layout: TokenLayout, keep_ratio: float
) -> np.ndarray:
    """Positions that survive attention-based visual token pruning.

    Args:
        attention_received: Average attention each position receives
        layout: Layout of the current sequence
        keep_ratio: Fraction of visual tokens to keep, in (0, 1]

    Returns:
        Ascending kept positions: every text position plus the
        ceil(keep_ratio * n_visual) most attended visual positions
    """
    scores = np.asarray(attention_received, dtype=np.float64)
    if scores.shape != (len(layout),):
        raise ParameterError(
            f"{scores.shape[0]} attention scores for a layout of {len(layout)}"
        )
    if not 0.0 < keep_ratio <= 1.0:
        raise ParameterError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    visual = layout.visual_positions
    n_keep = fraction_count(keep_ratio, visual.size)
    order = np.argsort(-scores[visual], kind="stable")
    kept_visual = visual[order[:n_keep]]
    return np.sort(np.concatenate([layout.text_positions, kept_visual]))


def scope_rows(layout: TokenLayout, scope: Scope) -> np.ndarray:
    if scope == "all_tokens":
        return np.arange(len(layout))
    if scope == "visual_only":
        return layout.visual_positions
    raise ParameterError(f"unknown scope: {scope!r}")


def reduced_ffn(
    x: Matrix,
    weights: FFNWeights,
    layout: TokenLayout,
    plan: ReductionPlan,
    rng: np.random.Generator,
) -> Matrix:
    """Apply the dynamic FFN to the plan's scope rows and the full FFN elsewhere."""
    rows = scope_rows(layout, plan.scope)
    if rows.size == 0:
        logger.debug("no %s rows; running the full FFN", plan.scope)
        return weights.forward(x)
    m = probe_count(plan.probe_fraction, rows.size)
    k = active_units(plan.k_fraction, weights.d_ff)
    selection = probe_select(x[rows], weights, m, k, rng)
    out = np.empty_like(x)
    out[rows] = dynamic_ffn_forward(x[rows], weights, selection)
    rest = np.setdiff1d(np.arange(x.shape[0]), rows, assume_unique=True)
    if rest.size:
        out[rest] = weights.forward(x[rest])
    return out
