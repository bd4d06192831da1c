#!/usr/bin/env python3
"""
redundancy-lens command line

Generates toy checkpoints and validation batches, ranks layers, sweeps
reductions over layer fractions, and reports FLOPs.
"""

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from tqdm import tqdm

from redundancy_lens.__version__ import __version__
from redundancy_lens.charts import line_chart
from redundancy_lens.config import (
    DEFAULT_ACTIVATION,
    DEFAULT_ALPHA,
    DEFAULT_ATTENTION_RANGE,
    DEFAULT_D_FF,
    DEFAULT_D_MODEL,
    DEFAULT_FFN_KIND,
    DEFAULT_K_FRACTION,
    DEFAULT_LAYERS,
    DEFAULT_LOG_LEVEL,
    DEFAULT_N_HEADS,
    DEFAULT_PROBE_FRACTION,
    DEFAULT_PROGRESS,
    DEFAULT_SEED,
    DEFAULT_VOCAB,
    DEFAULT_WORKERS,
    DEMO_ATTENTION_RANGE,
    DEMO_ITEMS,
    DEMO_SEED,
    DEMO_TEXT_PREFIX,
    DEMO_TEXT_SUFFIX,
    DEMO_VISUAL,
)
from redundancy_lens.errors import LensError, ParameterError
from redundancy_lens.fileio import write_atomic
from redundancy_lens.flops import PRESETS, count_flops, format_table
from redundancy_lens.layout import TokenLayout
from redundancy_lens.model import (
    Checkpoint,
    ModelConfig,
    load_checkpoint,
    random_init,
    save_checkpoint,
    tensor_specs,
)
from redundancy_lens.ranker import (
    STRATEGIES,
    TARGETS,
    DivergenceOracle,
    RankingResult,
    ScoreConfig,
    ValidationBatch,
    hybrid_ranking,
    penalty_score,
    plan_for_fraction,
    strategy_lp,
    synthetic_batch,
)
from redundancy_lens.reductions import (
    SCOPES,
    ReductionPlan,
    load_plan,
    save_plan,
)

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = (
    "fraction",
    "target",
    "scope",
    "divergence",
    "penalty_score",
    "flops_ratio",
)
ABLATION_PARAMS = ("attention_range", "k_fraction")


@dataclass(frozen=True)
class SweepGrid:
    targets: Tuple[str, ...]
    fractions: Tuple[float, ...]
    scope: str
    seed: int

    def __post_init__(self) -> None:
        if list(self.fractions) != sorted(self.fractions):
            raise ParameterError("fractions must be sorted ascending")
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ParameterError("fractions must lie in [0, 1]")
        for target in self.targets:
            if target not in TARGETS + ("both",):
                raise ParameterError(f"unknown sweep target: {target!r}")


@dataclass(frozen=True)
class SweepRow:
    fraction: float
    target: str
    scope: str
    divergence: float
    penalty_score: float
    flops_ratio: float

    def cells(self) -> List[str]:
        return [
            repr(self.fraction),
            self.target,
            self.scope,
            repr(self.divergence),
            repr(self.penalty_score),
            repr(self.flops_ratio),
        ]


def default_fractions(n_layers: int) -> Tuple[float, ...]:
    return tuple(i / n_layers for i in range(n_layers + 1))


def parse_fractions(text: Optional[str], n_layers: int) -> Tuple[float, ...]:
    if not text:
        return default_fractions(n_layers)
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise ParameterError(f"invalid fraction list {text!r}") from e


def parse_targets(text: str) -> Tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def batch_flops_ratio(
    config: ModelConfig, batch: ValidationBatch, plan: ReductionPlan
) -> float:
    """FLOPs of the whole batch under ``plan`` relative to the unreduced model."""
    cache: Dict[TokenLayout, Tuple[int, int]] = {}
    total = full = 0
    for item in batch.items:
        if item.layout not in cache:
            breakdown = count_flops(config, item.layout, plan)
            cache[item.layout] = (breakdown.total, breakdown.full_total)
        t, f = cache[item.layout]
        total += t
        full += f
    return total / full


def run_sweep(
    ckpt: Checkpoint,
    batch: ValidationBatch,
    rankings: Mapping[str, RankingResult],
    grid: SweepGrid,
    plan_template: ReductionPlan,
    alpha: float = DEFAULT_ALPHA,
    progress: bool = False,
    plans_dir: Optional[Path] = None,
) -> List[SweepRow]:
    """Evaluate the top-ranked layer fractions for each target."""
    template = replace(plan_template, scope=grid.scope)  # type: ignore[arg-type]
    oracle = DivergenceOracle(ckpt, batch, seed=grid.seed)
    baseline = oracle(template.with_layers())
    rows = []
    points = [(t, f) for t in grid.targets for f in grid.fractions]
    for target, fraction in tqdm(points, desc="sweep", disable=not progress):
        wanted = TARGETS if target == "both" else (target,)
        missing = [t for t in wanted if t not in rankings]
        if missing:
            raise ParameterError(f"no ranking given for target {missing[0]!r}")
        plan = plan_for_fraction(
            {t: rankings[t] for t in wanted}, fraction, template
        )
        if plans_dir is not None:
            save_plan(plan, plans_dir / f"plan-{target}-{fraction:.4f}.json")
        divergences = oracle.divergences(plan)
        scores = {s: 0.0 - d for s, d in divergences.items()}
        row = SweepRow(
            fraction=fraction,
            target=target,
            scope=grid.scope,
            divergence=sum(divergences.values()) / len(divergences),
            penalty_score=penalty_score(
                [scores[s] - baseline[s] for s in sorted(baseline)], alpha
            ),
            flops_ratio=batch_flops_ratio(ckpt.config, batch, plan),
        )
        logger.info(
            "%s at %.3f: divergence %.6g, FLOPs %.3f",
            target,
            fraction,
            row.divergence,
            row.flops_ratio,
        )
        rows.append(row)
    return rows


def rows_to_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_sweep(rows: Sequence[SweepRow], prefix: Path) -> List[Path]:
    written = [
        write_atomic(
            prefix.with_name(prefix.name + ".csv"),
            rows_to_csv(SWEEP_COLUMNS, [r.cells() for r in rows]),
        )
    ]
    for target in dict.fromkeys(r.target for r in rows):
        pts = [(r.fraction, r.penalty_score) for r in rows if r.target == target]
        scope = rows[0].scope
        svg = line_chart(
            {f"{target} ({scope})": pts},
            title=f"{target} reductions, {scope}",
            x_label="fraction of layers reduced",
            y_label="penalty score",
        )
        written.append(
            write_atomic(prefix.with_name(f"{prefix.name}-{target}.svg"), svg)
        )
    return written


def plan_template_from_args(args: argparse.Namespace) -> ReductionPlan:
    return ReductionPlan(
        attention_range=args.attention_range,
        k_fraction=args.k_fraction,
        probe_fraction=getattr(args, "probe_fraction", DEFAULT_PROBE_FRACTION),
        scope=getattr(args, "scope", "visual_only"),
    )


def load_rankings(paths: Sequence[str]) -> Dict[str, RankingResult]:
    rankings: Dict[str, RankingResult] = {}
    for path in paths:
        ranking = RankingResult.load(path)
        rankings[ranking.target] = ranking
    return rankings


def cmd_gen(args: argparse.Namespace) -> int:
    config = ModelConfig(
        n_layers=args.layers,
        d_model=args.d_model,
        d_ff=args.d_ff,
        n_heads=args.heads,
        ffn_kind=args.ffn_kind,
        vocab_size=args.vocab,
        activation=args.activation,
    )
    ckpt = random_init(config, args.seed)
    manifest, blob = save_checkpoint(ckpt, args.out)
    specs = tensor_specs(config)
    for name, shape in specs:
        print(f"{name:<24} {'x'.join(str(s) for s in shape)}")
    print(f"{len(specs)} tensors -> {manifest}, {blob}")
    return 0


def cmd_batch(args: argparse.Namespace) -> int:
    vocab = load_checkpoint(args.ckpt).config.vocab_size if args.ckpt else args.vocab
    batch = synthetic_batch(
        vocab,
        args.items,
        args.seed,
        prefix=args.prefix,
        visual=args.visual,
        suffix=args.suffix,
    )
    path = batch.save(args.out)
    print(f"{len(batch.items)} items in {len(batch.subsets)} subsets -> {path}")
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    batch = ValidationBatch.load(args.batch)
    n_layers = ckpt.config.n_layers
    lp = strategy_lp(args.strategy, n_layers, args.lp)
    oracle = DivergenceOracle(ckpt, batch, seed=args.seed)
    result = hybrid_ranking(
        oracle,
        n_layers,
        args.target,
        lp,
        plan_template_from_args(args),
        ScoreConfig(alpha=args.alpha),
        workers=args.workers,
        progress=args.progress,
        strategy=args.strategy,
    )
    path = result.save(args.out)
    for round_no, entries in result.rounds():
        best = max(entries, key=lambda e: e.score)
        winner = result.ranked[lp + round_no]
        print(f"round {round_no}: layer {winner} score {best.score!r}")
    print(f"ranked {result.ranked} ({len(result.eval_log)} evaluations) -> {path}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    batch = ValidationBatch.load(args.batch)
    grid = SweepGrid(
        targets=parse_targets(args.targets),
        fractions=parse_fractions(args.fractions, ckpt.config.n_layers),
        scope=args.scope,
        seed=args.seed,
    )
    rows = run_sweep(
        ckpt,
        batch,
        load_rankings(args.ranking),
        grid,
        plan_template_from_args(args),
        alpha=args.alpha,
        progress=args.progress,
        plans_dir=Path(args.plans_dir) if args.plans_dir else None,
    )
    for path in write_sweep(rows, Path(args.out)):
        print(path)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    batch = ValidationBatch.load(args.batch)
    rankings = load_rankings(args.ranking)
    grid = SweepGrid(
        targets=(args.target,),
        fractions=parse_fractions(args.fractions, ckpt.config.n_layers),
        scope=args.scope,
        seed=args.seed,
    )
    cast = int if args.param == "attention_range" else float
    try:
        values = [cast(v) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise ParameterError(f"invalid values for {args.param}: {args.values}") from e
    template = plan_template_from_args(args)
    table = []
    series = {}
    for value in values:
        rows = run_sweep(
            ckpt,
            batch,
            rankings,
            grid,
            replace(template, **{args.param: value}),
            alpha=args.alpha,
            progress=args.progress,
        )
        table += [[args.param, repr(value)] + r.cells() for r in rows]
        series[f"{args.param}={value}"] = [(r.fraction, r.penalty_score) for r in rows]
    out = Path(args.out)
    csv_path = write_atomic(
        out.with_name(out.name + ".csv"),
        rows_to_csv(("param", "value") + SWEEP_COLUMNS, table),
    )
    svg_path = write_atomic(
        out.with_name(out.name + ".svg"),
        line_chart(
            series,
            title=f"{args.target} reductions by {args.param}",
            x_label="fraction of layers reduced",
            y_label="penalty score",
        ),
    )
    print(csv_path)
    print(svg_path)
    return 0


def cmd_flops(args: argparse.Namespace) -> int:
    if args.preset:
        scenario = PRESETS[args.preset]
        config, layout, plan = scenario.config, scenario.layout, scenario.plan
        print(f"scenario {scenario.name}: {scenario.description}")
    else:
        if args.ckpt:
            config = load_checkpoint(args.ckpt).config
        else:
            config = ModelConfig(
                n_layers=args.layers,
                d_model=args.d_model,
                d_ff=args.d_ff,
                n_heads=args.heads,
                ffn_kind=args.ffn_kind,
                vocab_size=args.vocab,
                activation=args.activation,
            )
        if args.layout:
            layout = TokenLayout.parse(args.layout)
        else:
            layout = TokenLayout.standard(args.prefix, args.visual, args.suffix)
        plan = load_plan(args.plan) if args.plan else ReductionPlan()
    breakdown = count_flops(config, layout, plan)
    print(format_table(breakdown))
    report = json.dumps(breakdown.to_dict(), indent=2)
    if args.json:
        write_atomic(args.json, report + "\n")
    else:
        print(report)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    batch = ValidationBatch.load(args.batch)
    plan = load_plan(args.plan)
    oracle = DivergenceOracle(ckpt, batch, seed=args.seed)
    baseline = oracle(replace(plan.with_layers(), pruning=None))
    divergences = oracle.divergences(plan)
    scores = {s: 0.0 - d for s, d in divergences.items()}
    deltas = [scores[s] - baseline[s] for s in sorted(baseline)]
    total = penalty_score(deltas, args.alpha)
    ratio = batch_flops_ratio(ckpt.config, batch, plan)
    print(f"{'subset':<16} {'divergence':>24} {'score':>24}")
    for subset in sorted(scores):
        print(f"{subset:<16} {divergences[subset]!r:>24} {scores[subset]!r:>24}")
    print(f"divergence {sum(divergences.values()) / len(divergences)!r}")
    print(f"penalty_score {total!r}")
    print(f"flops_ratio {ratio!r}")
    if args.json:
        write_atomic(
            args.json,
            json.dumps(
                {
                    "divergences": divergences,
                    "scores": scores,
                    "penalty_score": total,
                    "flops_ratio": ratio,
                },
                indent=2,
            )
            + "\n",
        )
    return 0


def run_demo(out: Path, seed: int = DEMO_SEED, progress: bool = False) -> List[Path]:
    """Generate, rank both targets and sweep both scopes into ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    ckpt = random_init(ModelConfig(), seed)
    written = list(save_checkpoint(ckpt, out / "demo"))
    batch = synthetic_batch(ckpt.config.vocab_size, DEMO_ITEMS, seed)
    written.append(batch.save(out / "batch.jsonl"))

    n_layers = ckpt.config.n_layers
    template = ReductionPlan(attention_range=DEMO_ATTENTION_RANGE)
    oracle = DivergenceOracle(ckpt, batch, seed=seed)
    rankings = {}
    for target in TARGETS:
        rankings[target] = hybrid_ranking(
            oracle,
            n_layers,
            target,  # type: ignore[arg-type]
            strategy_lp("hybrid", n_layers),
            template,
            progress=progress,
        )
        written.append(rankings[target].save(out / f"rank-{target}.json"))

    for scope in SCOPES:
        grid = SweepGrid(
            targets=TARGETS + ("both",),
            fractions=default_fractions(n_layers),
            scope=scope,
            seed=seed,
        )
        rows = run_sweep(ckpt, batch, rankings, grid, template, progress=progress)
        written += write_sweep(rows, out / f"sweep-{scope}")
    return written


def cmd_demo(args: argparse.Namespace) -> int:
    for path in run_demo(Path(args.out), args.seed, args.progress):
        print(path)
    return 0


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, default=DEFAULT_LAYERS, help="Layer count")
    p.add_argument("--d-model", type=int, default=DEFAULT_D_MODEL, help="Model width")
    p.add_argument("--d-ff", type=int, default=DEFAULT_D_FF, help="FFN width")
    p.add_argument("--heads", type=int, default=DEFAULT_N_HEADS, help="Head count")
    p.add_argument(
        "--ffn-kind",
        default=DEFAULT_FFN_KIND,
        choices=["vanilla", "gated"],
        help="FFN type",
    )
    p.add_argument("--vocab", type=int, default=DEFAULT_VOCAB, help="Vocabulary size")
    p.add_argument(
        "--activation",
        default=DEFAULT_ACTIVATION,
        choices=["relu", "silu"],
        help="FFN activation",
    )


def _add_plan_flags(p: argparse.ArgumentParser, scope: bool = True) -> None:
    p.add_argument(
        "--attention-range",
        type=int,
        default=DEFAULT_ATTENTION_RANGE,
        help="R_A, visual look-back window of Hollow Attention",
    )
    p.add_argument(
        "--k-fraction",
        type=float,
        default=DEFAULT_K_FRACTION,
        help="Fraction of FFN hidden units kept",
    )
    if scope:
        p.add_argument(
            "--probe-fraction",
            type=float,
            default=DEFAULT_PROBE_FRACTION,
            help="Fraction of scope tokens sampled by the probe",
        )
        p.add_argument(
            "--scope",
            default="visual_only",
            choices=list(SCOPES),
            help="Tokens the reductions apply to",
        )


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ckpt", required=True, help="Checkpoint name or manifest path")
    p.add_argument("--batch", required=True, help="Validation batch (JSON lines)")
    p.add_argument(
        "--alpha", type=float, default=DEFAULT_ALPHA, help="Penalty coefficient"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lens",
        description="Training-free redundancy analysis for a toy multimodal decoder",
    )
    parser.add_argument(
        "-v",
        "--version",
        action="version",
        version=f"redundancy-lens {__version__}",
        help="Show version and exit",
    )
    parser.add_argument(
        "--log-level",
        default=DEFAULT_LOG_LEVEL,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (stderr)",
    )
    parser.add_argument(
        "--progress",
        action="store_true",
        default=DEFAULT_PROGRESS,
        help="Show progress bars",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help=f"Seed for weights, batches and probes (default {DEFAULT_SEED}, "
        f"demo {DEMO_SEED})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="Write a randomly initialised checkpoint")
    _add_model_flags(p)
    p.add_argument("--out", required=True, help="Checkpoint name (no extension)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("batch", help="Write a synthetic validation batch")
    p.add_argument("--ckpt", help="Take the vocabulary size from this checkpoint")
    p.add_argument("--vocab", type=int, default=DEFAULT_VOCAB, help="Vocabulary size")
    p.add_argument("--items", type=int, default=DEMO_ITEMS, help="Item count")
    p.add_argument("--prefix", type=int, default=DEMO_TEXT_PREFIX, help="Text prefix")
    p.add_argument("--visual", type=int, default=DEMO_VISUAL, help="Visual tokens")
    p.add_argument("--suffix", type=int, default=DEMO_TEXT_SUFFIX, help="Text suffix")
    p.add_argument("--out", required=True, help="Output JSON lines file")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("rank", help="Rank layers by redundancy")
    _add_eval_flags(p)
    p.add_argument("--target", required=True, choices=list(TARGETS))
    p.add_argument(
        "--strategy",
        default="hybrid",
        choices=list(STRATEGIES),
        help="Ranking strategy",
    )
    p.add_argument(
        "--lp", type=int, help="Layers ranked by position (default: layers // 4)"
    )
    p.add_argument(
        "--workers", type=int, default=DEFAULT_WORKERS, help="Evaluation threads"
    )
    _add_plan_flags(p, scope=False)
    p.add_argument("--out", required=True, help="Output ranking JSON")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("sweep", help="Sweep reductions over layer fractions")
    _add_eval_flags(p)
    p.add_argument(
        "--ranking", action="append", required=True, help="Ranking JSON (repeatable)"
    )
    p.add_argument(
        "--targets", default="attention,ffn", help="Comma list of attention,ffn,both"
    )
    p.add_argument("--fractions", help="Comma list (default: 0, 1/L, ..., 1)")
    p.add_argument("--plans-dir", help="Also save the plan of every sweep point")
    _add_plan_flags(p)
    p.add_argument("--out", required=True, help="Output prefix for CSV and SVG")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="Sweep one reduction hyperparameter")
    _add_eval_flags(p)
    p.add_argument("--ranking", action="append", required=True, help="Ranking JSON")
    p.add_argument("--target", required=True, choices=list(TARGETS))
    p.add_argument("--param", required=True, choices=list(ABLATION_PARAMS))
    p.add_argument("--values", required=True, help="Comma list of values")
    p.add_argument("--fractions", help="Comma list (default: 0, 1/L, ..., 1)")
    _add_plan_flags(p)
    p.add_argument("--out", required=True, help="Output prefix for CSV and SVG")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("flops", help="Report analytic FLOPs")
    p.add_argument("--preset", choices=sorted(PRESETS), help="Named scenario")
    p.add_argument("--ckpt", help="Take the model config from this checkpoint")
    _add_model_flags(p)
    p.add_argument("--layout", help="Layout shorthand such as TTVVVVT")
    p.add_argument("--prefix", type=int, default=DEMO_TEXT_PREFIX, help="Text prefix")
    p.add_argument("--visual", type=int, default=DEMO_VISUAL, help="Visual tokens")
    p.add_argument("--suffix", type=int, default=DEMO_TEXT_SUFFIX, help="Text suffix")
    p.add_argument("--plan", help="Reduction plan JSON")
    p.add_argument("--json", help="Write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("eval", help="Evaluate one reduction plan")
    _add_eval_flags(p)
    p.add_argument("--plan", required=True, help="Reduction plan JSON")
    p.add_argument("--json", help="Also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", help="Run the full pipeline on a toy model")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="Same as the global --seed"
    )
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = DEMO_SEED if args.command == "demo" else DEFAULT_SEED
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    try:
        return int(args.func(args))
    except (LensError, OSError) as e:
        message = " ".join(str(e).split())
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
