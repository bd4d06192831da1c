"""Token layouts: which positions of a sequence hold visual or text tokens."""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from redundancy_lens.errors import ParameterError


class Modality(str, Enum):
    VISUAL = "visual"
    TEXT = "text"


_SHORTHAND = {"V": Modality.VISUAL, "T": Modality.TEXT}


def _as_modality(tag: Union[str, Modality]) -> Modality:
    if isinstance(tag, Modality):
        return tag
    if tag in _SHORTHAND:
        return _SHORTHAND[tag]
    try:
        return Modality(tag)
    except ValueError as e:
        raise ParameterError(f"unknown token tag: {tag!r}") from e


@dataclass(frozen=True)
class TokenLayout:
    """Per-position modality tags of one input sequence."""

    tags: Tuple[Modality, ...]

    def __post_init__(self) -> None:
        tags = tuple(_as_modality(t) for t in self.tags)
        if not tags:
            raise ParameterError("a token layout needs at least one position")
        object.__setattr__(self, "tags", tags)

    @classmethod
    def parse(cls, shorthand: str) -> "TokenLayout":
        """Build a layout from a string such as ``"TTVVVVT"``."""
        return cls(tuple(_as_modality(c) for c in shorthand.replace(" ", "")))

    @classmethod
    def standard(cls, prefix: int, visual: int, suffix: int) -> "TokenLayout":
        """Text prefix, visual block, text suffix (prompt, image, question)."""
        tags = (
            (Modality.TEXT,) * prefix
            + (Modality.VISUAL,) * visual
            + (Modality.TEXT,) * suffix
        )
        return cls(tags)

    def __len__(self) -> int:
        return len(self.tags)

    def __str__(self) -> str:
        return "".join("V" if t is Modality.VISUAL else "T" for t in self.tags)

    @cached_property
    def visual_mask(self) -> np.ndarray:
        mask = np.array([t is Modality.VISUAL for t in self.tags], dtype=bool)
        mask.setflags(write=False)
        return mask

    @property
    def visual_positions(self) -> np.ndarray:
        return np.flatnonzero(self.visual_mask)

    @property
    def text_positions(self) -> np.ndarray:
        return np.flatnonzero(~self.visual_mask)

    @property
    def n_visual(self) -> int:
        return int(self.visual_mask.sum())

    @property
    def n_text(self) -> int:
        return len(self) - self.n_visual

    def subset(self, positions: Iterable[int]) -> "TokenLayout":
        """Layout of the tokens kept at ``positions`` (ascending)."""
        return TokenLayout(tuple(self.tags[int(p)] for p in positions))

    def to_list(self) -> Sequence[str]:
        return [t.value for t in self.tags]
