"""
Tests for token layouts.
"""

import numpy as np
import pytest

from redundancy_lens.errors import ParameterError
from redundancy_lens.layout import Modality, TokenLayout


def test_parse_shorthand() -> None:
    layout = TokenLayout.parse("TTVVVVT")
    assert len(layout) == 7
    assert str(layout) == "TTVVVVT"
    assert layout.visual_positions.tolist() == [2, 3, 4, 5]
    assert layout.text_positions.tolist() == [0, 1, 6]
    assert layout.n_visual == 4
    assert layout.n_text == 3


def test_standard_layout() -> None:
    layout = TokenLayout.standard(prefix=1, visual=2, suffix=3)
    assert str(layout) == "TVVTTT"


def test_accepts_full_tag_names() -> None:
    layout = TokenLayout(("text", "visual", Modality.TEXT))  # type: ignore[arg-type]
    assert layout.to_list() == ["text", "visual", "text"]


def test_unknown_tag() -> None:
    with pytest.raises(ParameterError):
        TokenLayout.parse("TXV")


def test_empty_layout() -> None:
    with pytest.raises(ParameterError):
        TokenLayout(())


def test_visual_mask_read_only() -> None:
    layout = TokenLayout.parse("TV")
    with pytest.raises(ValueError):
        layout.visual_mask[0] = True


def test_subset() -> None:
    layout = TokenLayout.parse("TTVVVVT")
    assert str(layout.subset(np.array([0, 3, 6]))) == "TVT"
