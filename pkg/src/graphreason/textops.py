"""Shared text utilities: the frozen tokenizer used by scoring and retrieval."""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Case-fold and split on runs of non-alphanumeric characters.

    Empty pieces are dropped, so ``tokenize("head, skin of body")`` yields
    ``["head", "skin", "of", "body"]``. This tokenizer is frozen: both the
    answer-overlap metric and the default lexical retriever rely on it, and
    changing it would shift every reported score.
    """
    return _TOKEN_RE.findall(text.lower())
