"""Answer-matching metrics for QA-style evaluation.

Normalization: lowercase, strip punctuation, collapse whitespace.  Exact
match compares normalized strings; F1 is the token-multiset overlap of
the normalized answers (so F1 is 1 exactly when the multisets agree).
"""

from __future__ import annotations

import re
from collections import Counter

_PUNCT = re.compile(r"[^\w\s]")
_WS = re.compile(r"\s+")


def normalize_answer(text: str) -> str:
    text = _PUNCT.sub(" ", text.lower())
    return " ".join(_WS.split(text.strip())) if text.strip() else ""


def answer_tokens(text: str) -> list[str]:
    normalized = normalize_answer(text)
    return normalized.split() if normalized else []


def metric_exact_match(prediction: str, truth: str) -> float:
    return 1.0 if normalize_answer(prediction) == normalize_answer(truth) else 0.0


def metric_f1(prediction: str, truth: str) -> float:
    pred = Counter(answer_tokens(prediction))
    gold = Counter(answer_tokens(truth))
    if not pred and not gold:
        return 1.0
    common = sum((pred & gold).values())
    if common == 0:
        return 0.0
    precision = common / sum(pred.values())
    recall = common / sum(gold.values())
    return 2 * precision * recall / (precision + recall)
