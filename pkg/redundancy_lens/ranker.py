"""Layer ranking search.

Layers are ranked greedily by how little the model's outputs change when one
reduction (Hollow Attention or dynamic FFN) is applied to them. Each round
tries every unranked layer on top of the layers already ranked and keeps the
best-scoring one. The hybrid strategy ranks the last L_p layers by position
first and searches only the rest.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Literal,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from tqdm import tqdm

from redundancy_lens.config import (
    DEFAULT_ALPHA,
    DEFAULT_WORKERS,
    DEMO_SUBSETS,
    DEMO_TEXT_PREFIX,
    DEMO_TEXT_SUFFIX,
    DEMO_VISUAL,
    SEARCH_PROBE_FRACTION,
)
from redundancy_lens.errors import LensError, OracleError, ParameterError
from redundancy_lens.fileio import write_atomic
from redundancy_lens.layout import TokenLayout
from redundancy_lens.model import Checkpoint, forward
from redundancy_lens.numkernel import log_softmax_rows
from redundancy_lens.reductions import ReductionPlan

logger = logging.getLogger(__name__)

Target = Literal["attention", "ffn"]
TARGETS: Tuple[Target, ...] = ("attention", "ffn")
STRATEGIES = ("hybrid", "position", "search")
OracleKind = Literal["divergence", "plugin"]
ORACLE_KINDS: Tuple[OracleKind, ...] = ("divergence", "plugin")

Oracle = Callable[[ReductionPlan], Mapping[str, float]]
PathLike = Union[str, Path]


@dataclass(frozen=True)
class ValidationItem:
    token_ids: Tuple[int, ...]
    layout: TokenLayout
    subset: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "token_ids", tuple(int(i) for i in self.token_ids))
        if len(self.token_ids) != len(self.layout):
            raise ParameterError(
                f"{len(self.token_ids)} ids for a layout of {len(self.layout)}"
            )


@dataclass
class ValidationBatch:
    """Compact validation set, grouped into named subsets."""

    items: List[ValidationItem]

    def __post_init__(self) -> None:
        if not self.items:
            raise ParameterError("a validation batch needs at least one item")

    def validate(self, vocab_size: int) -> None:
        for n, item in enumerate(self.items):
            bad = [i for i in item.token_ids if not 0 <= i < vocab_size]
            if bad:
                raise ParameterError(
                    f"item {n}: token id {bad[0]} out of range for "
                    f"vocab_size={vocab_size}"
                )

    @property
    def subsets(self) -> List[str]:
        return sorted({item.subset for item in self.items})

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "ids": list(item.token_ids),
                    "tags": list(item.layout.to_list()),
                    "subset": item.subset,
                }
            )
            for item in self.items
        ]
        return "\n".join(lines) + "\n"

    def save(self, path: PathLike) -> Path:
        return write_atomic(path, self.to_jsonl())

    @classmethod
    def load(cls, path: PathLike) -> "ValidationBatch":
        items = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    items.append(
                        ValidationItem(
                            token_ids=tuple(record["ids"]),
                            layout=TokenLayout(tuple(record["tags"])),
                            subset=str(record.get("subset", "default")),
                        )
                    )
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    raise ParameterError(f"{path}:{lineno}: bad record: {e}") from e
                except LensError as e:
                    raise ParameterError(f"{path}:{lineno}: {e}") from e
        if not items:
            raise ParameterError(f"{path}: no validation items")
        return cls(items)


def synthetic_batch(
    vocab_size: int,
    n_items: int,
    seed: int,
    subsets: Sequence[str] = DEMO_SUBSETS,
    prefix: int = DEMO_TEXT_PREFIX,
    visual: int = DEMO_VISUAL,
    suffix: int = DEMO_TEXT_SUFFIX,
) -> ValidationBatch:
    """Random [text][visual][text] items spread round-robin over ``subsets``.

    Text ids come from the lower half of the vocabulary and visual ids from
    the upper half.
    """
    if n_items < 1 or vocab_size < 2:
        raise ParameterError("need n_items >= 1 and vocab_size >= 2")
    rng = np.random.default_rng(seed)
    half = vocab_size // 2
    layout = TokenLayout.standard(prefix, visual, suffix)
    items = []
    for n in range(n_items):
        ids = np.concatenate(
            [
                rng.integers(0, half, size=prefix),
                rng.integers(half, vocab_size, size=visual),
                rng.integers(0, half, size=suffix),
            ]
        )
        items.append(
            ValidationItem(
                token_ids=tuple(int(i) for i in ids),
                layout=layout,
                subset=subsets[n % len(subsets)],
            )
        )
    return ValidationBatch(items)


@dataclass(frozen=True)
class ScoreConfig:
    alpha: float = DEFAULT_ALPHA
    # recorded in the ranking; the oracle callable itself does the scoring
    oracle_kind: OracleKind = "divergence"

    def __post_init__(self) -> None:
        if self.alpha < 1:
            raise ParameterError(f"alpha must be >= 1, got {self.alpha}")
        if self.oracle_kind not in ORACLE_KINDS:
            raise ParameterError(f"unknown oracle kind: {self.oracle_kind!r}")


def penalty_score(deltas: Iterable[float], alpha: float = DEFAULT_ALPHA) -> float:
    """Sum per-subset deltas, multiplying the negative ones by ``alpha``."""
    if alpha < 1:
        raise ParameterError(f"alpha must be >= 1, got {alpha}")
    return sum((d if d >= 0 else alpha * d for d in deltas), 0.0)


class DivergenceOracle:
    """Scores a plan by how far it moves the model's text-position outputs.

    For each item the full model's next-token distributions at text positions
    are compared with the reduced model's by KL(full || reduced). A subset's
    score is the negated mean divergence of its items, so the unreduced model
    scores 0 and worse plans score lower.
    """

    def __init__(self, ckpt: Checkpoint, batch: ValidationBatch, seed: int = 0):
        batch.validate(ckpt.config.vocab_size)
        self.ckpt = ckpt
        self.seed = seed
        self._items: List[ValidationItem] = []
        self._reference: List[np.ndarray] = []
        for n, item in enumerate(batch.items):
            if item.layout.n_text == 0:
                logger.warning("item %d has no text positions; skipped", n)
                continue
            full = forward(ckpt, item.token_ids, item.layout)
            text = item.layout.text_positions
            self._items.append(item)
            self._reference.append(log_softmax_rows(full.logits[text]))
        for subset in batch.subsets:
            if not any(item.subset == subset for item in self._items):
                logger.warning("subset %r has no scorable items; excluded", subset)
        self.subsets = sorted({item.subset for item in self._items})
        if not self.subsets:
            raise ParameterError("validation batch has no scorable items")

    def item_divergence(self, index: int, plan: ReductionPlan) -> float:
        item = self._items[index]
        result = forward(self.ckpt, item.token_ids, item.layout, plan, self.seed)
        rows = np.searchsorted(result.positions, item.layout.text_positions)
        log_q = log_softmax_rows(result.logits[rows])
        log_p = self._reference[index]
        kl = (np.exp(log_p) * (log_p - log_q)).sum(axis=1)
        return float(np.maximum(kl, 0.0).mean())

    def divergences(self, plan: ReductionPlan) -> Dict[str, float]:
        """Mean divergence per subset."""
        per_subset: Dict[str, List[float]] = {s: [] for s in self.subsets}
        for n, item in enumerate(self._items):
            per_subset[item.subset].append(self.item_divergence(n, plan))
        return {s: float(np.mean(v)) for s, v in per_subset.items()}

    def __call__(self, plan: ReductionPlan) -> Dict[str, float]:
        return {s: 0.0 - d for s, d in self.divergences(plan).items()}


@dataclass(frozen=True)
class Evaluation:
    layers: Tuple[int, ...]
    score: float
    round: int


@dataclass
class RankingResult:
    target: Target
    ranked: List[int]
    eval_log: List[Evaluation] = field(default_factory=list)
    L_p: int = 0
    strategy: str = "search"
    # the other target's reductions stay off while this one is searched
    other_target: str = "disabled"
    oracle_kind: str = "divergence"

    def rounds(self) -> Iterator[Tuple[int, List[Evaluation]]]:
        by_round: Dict[int, List[Evaluation]] = {}
        for entry in self.eval_log:
            by_round.setdefault(entry.round, []).append(entry)
        yield from sorted(by_round.items())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target,
            "ranked": list(self.ranked),
            "L_p": self.L_p,
            "strategy": self.strategy,
            "other_target": self.other_target,
            "oracle_kind": self.oracle_kind,
            "eval_log": [
                {"layers": list(e.layers), "score": e.score, "round": e.round}
                for e in self.eval_log
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RankingResult":
        target = data["target"]
        if target not in TARGETS:
            raise ParameterError(f"unknown ranking target: {target!r}")
        return cls(
            target=target,
            ranked=[int(i) for i in data["ranked"]],
            eval_log=[
                Evaluation(
                    layers=tuple(int(i) for i in e["layers"]),
                    score=float(e["score"]),
                    round=int(e.get("round", 0)),
                )
                for e in data.get("eval_log", [])
            ],
            L_p=int(data.get("L_p", 0)),
            strategy=str(data.get("strategy", "search")),
            other_target=str(data.get("other_target", "disabled")),
            oracle_kind=str(data.get("oracle_kind", "divergence")),
        )

    def save(self, path: PathLike) -> Path:
        return write_atomic(path, json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: PathLike) -> "RankingResult":
        try:
            with open(path, encoding="utf-8") as f:
                return cls.from_dict(json.load(f))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ParameterError(f"{path}: invalid ranking file: {e}") from e


def candidate_plan(
    template: ReductionPlan, target: Target, layers: Iterable[int]
) -> ReductionPlan:
    """Plan that reduces ``layers`` for one target with a full-size probe."""
    layers = frozenset(layers)
    plan = (
        template.with_layers(attn_layers=layers)
        if target == "attention"
        else template.with_layers(ffn_layers=layers)
    )
    return replace(plan, probe_fraction=SEARCH_PROBE_FRACTION, pruning=None)


def _deltas(scores: Mapping[str, float], baseline: Mapping[str, float]) -> List[float]:
    missing = sorted(set(baseline) - set(scores))
    if missing:
        raise OracleError(f"oracle returned no score for subset {missing[0]!r}")
    return [scores[s] - baseline[s] for s in sorted(baseline)]


def rank_layers(
    oracle: Oracle,
    target: Target,
    search_space: Iterable[int],
    plan_template: Optional[ReductionPlan] = None,
    score_cfg: Optional[ScoreConfig] = None,
    pre_ranked: Sequence[int] = (),
    workers: int = DEFAULT_WORKERS,
    progress: bool = False,
) -> RankingResult:
    """Greedy layer ranking.

    Args:
        oracle: Maps a plan to per-subset scores (higher is better)
        target: Which reduction is being ranked
        search_space: Layers to rank
        plan_template: Hyperparameters for candidate plans
        score_cfg: Penalty coefficient
        pre_ranked: Layers already ranked; reduced in every candidate
        workers: Threads evaluating the candidates of a round
        progress: Show a progress bar

    Returns:
        ``pre_ranked`` followed by the searched layers, and every evaluation
    """
    if target not in TARGETS:
        raise ParameterError(f"unknown ranking target: {target!r}")
    unranked = sorted(set(search_space))
    if not unranked:
        raise ParameterError("search space is empty")
    if set(pre_ranked) & set(unranked):
        raise ParameterError("pre-ranked layers overlap the search space")
    template = plan_template or ReductionPlan()
    cfg = score_cfg or ScoreConfig()

    fixed = list(pre_ranked)
    ranked: List[int] = []
    log: List[Evaluation] = []
    s = len(unranked)
    try:
        baseline = dict(oracle(candidate_plan(template, target, ())))
    except Exception as e:
        raise OracleError(f"oracle failed on the unreduced baseline: {e}") from e
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    bar = tqdm(
        total=s * (s + 1) // 2,
        desc=f"rank {target}",
        disable=not progress,
        leave=False,
    )
    try:
        round_no = 0
        while unranked:
            sets = [tuple(sorted(fixed + ranked + [layer])) for layer in unranked]
            plans = [candidate_plan(template, target, layers) for layers in sets]
            results = pool.map(oracle, plans) if pool else map(oracle, plans)
            best = -math.inf
            winner = unranked[0]
            try:
                for layer, layers, scores in zip(unranked, sets, results):
                    score = penalty_score(_deltas(scores, baseline), cfg.alpha)
                    if math.isnan(score):
                        raise OracleError(f"oracle scored {list(layers)} as NaN")
                    log.append(Evaluation(layers=layers, score=score, round=round_no))
                    bar.update(1)
                    logger.debug("round %d layer %d score %r", round_no, layer, score)
                    if score > best:
                        best = score
                        winner = layer
            except OracleError as e:
                raise OracleError(str(e), log) from e
            except Exception as e:
                raise OracleError(f"oracle failed in round {round_no}: {e}", log) from e
            ranked.append(winner)
            unranked.remove(winner)
            logger.info(
                "%s round %d: layer %d (score %.6g)", target, round_no, winner, best
            )
            round_no += 1
    finally:
        bar.close()
        if pool is not None:
            pool.shutdown()

    return RankingResult(
        target=target,
        ranked=fixed + ranked,
        eval_log=log,
        oracle_kind=cfg.oracle_kind,
    )


def strategy_lp(strategy: str, n_layers: int, lp: Optional[int] = None) -> int:
    """Number of position-ranked layers for a ranking strategy."""
    if strategy == "position":
        return n_layers
    if strategy == "search":
        return 0
    if strategy == "hybrid":
        return n_layers // 4 if lp is None else lp
    raise ParameterError(f"unknown ranking strategy: {strategy!r}")


def hybrid_ranking(
    oracle: Oracle,
    n_layers: int,
    target: Target,
    lp: int,
    plan_template: Optional[ReductionPlan] = None,
    score_cfg: Optional[ScoreConfig] = None,
    workers: int = DEFAULT_WORKERS,
    progress: bool = False,
    strategy: str = "hybrid",
) -> RankingResult:
    """Rank the last ``lp`` layers deepest-first, then search the rest."""
    if not 0 <= lp <= n_layers:
        raise ParameterError(f"L_p must be in [0, {n_layers}], got {lp}")
    tail = list(range(n_layers - 1, n_layers - lp - 1, -1))
    if lp == n_layers:
        result = RankingResult(target=target, ranked=tail)
    else:
        result = rank_layers(
            oracle,
            target,
            range(n_layers - lp),
            plan_template,
            score_cfg,
            pre_ranked=tail,
            workers=workers,
            progress=progress,
        )
    oracle_kind = (score_cfg or ScoreConfig()).oracle_kind
    return replace(result, L_p=lp, strategy=strategy, oracle_kind=oracle_kind)


def layer_count(fraction: float, n_layers: int) -> int:
    """round(fraction * n_layers), halves rounding up."""
    return int(math.floor(round(fraction * n_layers, 9) + 0.5))


def plan_for_fraction(
    rankings: Mapping[str, RankingResult],
    fraction: float,
    plan_template: Optional[ReductionPlan] = None,
) -> ReductionPlan:
    """Reduce the top-ranked fraction of layers of each given ranking."""
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must be in [0, 1], got {fraction}")
    template = plan_template or ReductionPlan()
    chosen: Dict[str, List[int]] = {}
    for target in TARGETS:
        ranking = rankings.get(target)
        if ranking is None:
            chosen[target] = []
            continue
        chosen[target] = ranking.ranked[: layer_count(fraction, len(ranking.ranked))]
    return template.with_layers(
        attn_layers=chosen["attention"], ffn_layers=chosen["ffn"]
    )
