"""Analytic FLOPs accounting.

Two FLOPs per multiply-accumulate; biases, norms and the LM head are left out.
Per layer with n live tokens, model width d and FFN width d_ff:

    attn_proj      = 8 n d^2                 (Q, K, V, O)
    attn_core      = 4 d * allowed pairs     (QK^T and AV under the layer's mask)
    ffn            = c n_full d d_ff + c n_red d K      (c = 4 vanilla, 6 gated)
    probe_overhead = 2 M d d_ff (vanilla) or 4 M d d_ff (gated)
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from redundancy_lens.config import DEFAULT_KEEP_RATIO, DEFAULT_PRUNE_LAYER
from redundancy_lens.layout import TokenLayout
from redundancy_lens.model import ModelConfig, causal_mask
from redundancy_lens.numkernel import AttentionMask
from redundancy_lens.reductions import (
    PruningStep,
    ReductionPlan,
    active_units,
    fraction_count,
    hollow_mask,
    probe_count,
    scope_rows,
)


@dataclass(frozen=True)
class LayerFlops:
    attn_proj: int
    attn_core: int
    ffn: int
    probe_overhead: int

    @property
    def total(self) -> int:
        return self.attn_proj + self.attn_core + self.ffn + self.probe_overhead


@dataclass(frozen=True)
class FlopsBreakdown:
    per_layer: List[LayerFlops]
    total: int
    full_total: int
    # attention pairs after pruning depend on which visual tokens survive
    estimated: bool = False

    @property
    def ratio_vs_full(self) -> float:
        return self.total / self.full_total

    @property
    def probe_total(self) -> int:
        return sum(layer.probe_overhead for layer in self.per_layer)

    @property
    def ratio_without_probe(self) -> float:
        """Ratio when the probe's own cost is not counted."""
        return (self.total - self.probe_total) / self.full_total

    def to_dict(self) -> Dict[str, Any]:
        return {
            "per_layer": [
                {
                    "attn_proj": layer.attn_proj,
                    "attn_core": layer.attn_core,
                    "ffn": layer.ffn,
                    "probe_overhead": layer.probe_overhead,
                }
                for layer in self.per_layer
            ],
            "total": self.total,
            "full_total": self.full_total,
            "ratio_vs_full": self.ratio_vs_full,
            "ratio_without_probe": self.ratio_without_probe,
            "estimated": self.estimated,
        }


def mask_pair_count(mask: AttentionMask) -> int:
    return mask.pair_count()


def pruned_layout(layout: TokenLayout, keep_ratio: float) -> TokenLayout:
    """Layout after pruning, keeping all text and the first visual tokens.

    Which visual tokens survive depends on the data; for counting only their
    number matters when the visual tokens form one block.
    """
    visual = layout.visual_positions
    kept = visual[: fraction_count(keep_ratio, visual.size)]
    return layout.subset(np.sort(np.concatenate([layout.text_positions, kept])))


def pruning_is_estimated(layout: TokenLayout, plan: Optional[ReductionPlan]) -> bool:
    """True when Hollow Attention pair counts after pruning are position dependent.

    That is the case for visual_only scope on a layout with more than one visual
    block, where the surviving tokens decide which keys fall in each window.
    """
    if plan is None or plan.pruning is None or plan.scope != "visual_only":
        return False
    if not any(layer > plan.pruning.at_layer for layer in plan.attn_layers):
        return False
    visual = layout.visual_positions
    return bool(visual.size) and int(visual[-1] - visual[0]) + 1 != visual.size


def _layer_flops(
    config: ModelConfig,
    layout: TokenLayout,
    plan: Optional[ReductionPlan],
    layer: int,
    pair_cache: Dict[Tuple[TokenLayout, bool], int],
) -> LayerFlops:
    n = len(layout)
    d, d_ff = config.d_model, config.d_ff
    c = 4 if config.ffn_kind == "vanilla" else 6

    hollow = plan is not None and layer in plan.attn_layers
    key = (layout, hollow)
    if key not in pair_cache:
        if hollow:
            assert plan is not None
            mask = hollow_mask(layout, plan.attention_range, plan.scope)
        else:
            mask = causal_mask(n)
        pair_cache[key] = mask_pair_count(mask)
    pairs = pair_cache[key]

    n_red = 0
    probe = 0
    k = d_ff
    if plan is not None and layer in plan.ffn_layers:
        n_red = int(scope_rows(layout, plan.scope).size)
        if n_red:
            k = active_units(plan.k_fraction, d_ff)
            m = probe_count(plan.probe_fraction, n_red)
            probe_factor = 2 if config.ffn_kind == "vanilla" else 4
            probe = probe_factor * m * d * d_ff
    return LayerFlops(
        attn_proj=8 * n * d * d,
        attn_core=4 * d * pairs,
        ffn=c * (n - n_red) * d * d_ff + c * n_red * d * k,
        probe_overhead=probe,
    )


def _layers(
    config: ModelConfig, layout: TokenLayout, plan: Optional[ReductionPlan]
) -> List[LayerFlops]:
    pair_cache: Dict[Tuple[TokenLayout, bool], int] = {}
    live = layout
    per_layer = []
    for i in range(config.n_layers):
        per_layer.append(_layer_flops(config, live, plan, i, pair_cache))
        if plan is not None and plan.pruning is not None and plan.pruning.at_layer == i:
            live = pruned_layout(live, plan.pruning.keep_ratio)
    return per_layer


def count_flops(
    config: ModelConfig, layout: TokenLayout, plan: Optional[ReductionPlan] = None
) -> FlopsBreakdown:
    """FLOPs of one forward pass over ``layout`` under ``plan``."""
    if plan is not None:
        plan.validate(config.n_layers)
    full = _layers(config, layout, None)
    full_total = sum(layer.total for layer in full)
    per_layer = full if plan is None else _layers(config, layout, plan)
    return FlopsBreakdown(
        per_layer=per_layer,
        total=sum(layer.total for layer in per_layer),
        full_total=full_total,
        estimated=pruning_is_estimated(layout, plan),
    )


def format_table(breakdown: FlopsBreakdown) -> str:
    """Human-readable per-layer table."""
    header = (
        f"{'layer':>5} | {'attn_proj':>12} | {'attn_core':>12} | "
        f"{'ffn':>12} | {'probe':>12} | {'total':>12}"
    )
    lines = [header, "-" * len(header)]
    for i, layer in enumerate(breakdown.per_layer):
        lines.append(
            f"{i:>5} | {layer.attn_proj:>12.4e} | {layer.attn_core:>12.4e} | "
            f"{layer.ffn:>12.4e} | {layer.probe_overhead:>12.4e} | "
            f"{layer.total:>12.4e}"
        )
    lines.append("-" * len(header))
    lines.append(f"total          {breakdown.total:.6e}")
    lines.append(f"full model     {breakdown.full_total:.6e}")
    lines.append(f"FLOPs ratio    {breakdown.ratio_vs_full:.3f}")
    gap = abs(breakdown.ratio_vs_full - breakdown.ratio_without_probe)
    if gap > 0.005:
        lines.append(
            f"without probe  {breakdown.ratio_without_probe:.3f} "
            f"(probe overhead {gap * 100:.1f} points)"
        )
    if breakdown.estimated:
        lines.append(
            "note: attention pairs after pruning assume the first visual tokens "
            "survive"
        )
    return "\n".join(lines)


@dataclass(frozen=True)
class Scenario:
    """A named model, layout and plan whose FLOPs ratio can be reported."""

    name: str
    description: str
    config: ModelConfig
    layout: TokenLayout
    plan: ReductionPlan


# 8B-class gated decoder; visual and text token counts are assumed
_LARGE_CONFIG = ModelConfig(
    n_layers=32,
    d_model=4096,
    d_ff=14336,
    n_heads=32,
    ffn_kind="gated",
    vocab_size=92553,
    activation="silu",
)
_LARGE_LAYOUT = TokenLayout.standard(prefix=32, visual=3072, suffix=96)
_LARGE_PLAN = ReductionPlan(
    attn_layers=frozenset(range(16, 32)),
    ffn_layers=frozenset(range(15, 32)),
    attention_range=256,
    k_fraction=0.2,
    probe_fraction=0.1,
)
_FASTV_R30 = PruningStep(at_layer=DEFAULT_PRUNE_LAYER, keep_ratio=DEFAULT_KEEP_RATIO)
_FASTV_R50 = PruningStep(at_layer=DEFAULT_PRUNE_LAYER, keep_ratio=0.5)
_SCENARIO_NOTE = "n_visual=3072, n_text=128 (32 before the image, 96 after)"

PRESETS: Dict[str, Scenario] = {
    "internvl2-table1": Scenario(
        "internvl2-table1",
        f"Hollow Attention in 16 layers, dynamic FFN in 17, R_A=256, K=20%, "
        f"M=10%; {_SCENARIO_NOTE}",
        _LARGE_CONFIG,
        _LARGE_LAYOUT,
        _LARGE_PLAN,
    ),
    "internvl2-8b-fastv": Scenario(
        "internvl2-8b-fastv",
        f"internvl2-table1 plus pruning after layer 2 keeping 70%; {_SCENARIO_NOTE}",
        _LARGE_CONFIG,
        _LARGE_LAYOUT,
        ReductionPlan(
            attn_layers=_LARGE_PLAN.attn_layers,
            ffn_layers=_LARGE_PLAN.ffn_layers,
            attention_range=256,
            k_fraction=0.2,
            probe_fraction=0.1,
            pruning=_FASTV_R30,
        ),
    ),
    "fastv-r30": Scenario(
        "fastv-r30",
        f"pruning only, after layer 2 keeping 70%; {_SCENARIO_NOTE}",
        _LARGE_CONFIG,
        _LARGE_LAYOUT,
        ReductionPlan(pruning=_FASTV_R30),
    ),
    "fastv-r50": Scenario(
        "fastv-r50",
        f"pruning only, after layer 2 keeping 50%; {_SCENARIO_NOTE}",
        _LARGE_CONFIG,
        _LARGE_LAYOUT,
        ReductionPlan(pruning=_FASTV_R50),
    ),
}
PRESETS["internvl2-8b"] = PRESETS["internvl2-table1"]
