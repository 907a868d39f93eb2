from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from symgrad import metric_exact_match, metric_f1
from symgrad.metrics import answer_tokens, normalize_answer


# --- independent oracle ----------------------------------------------------------
# A second implementation, character loop + list-based multiset overlap, kept
# deliberately different from the library code.


def oracle_normalize(text: str) -> str:
    kept = []
    for ch in text.lower():
        if ch.isalnum() or ch == "_":
            kept.append(ch)
        else:
            kept.append(" ")
    return " ".join("".join(kept).split())


def oracle_em(prediction: str, truth: str) -> float:
    return 1.0 if oracle_normalize(prediction) == oracle_normalize(truth) else 0.0


def oracle_f1(prediction: str, truth: str) -> float:
    pred = oracle_normalize(prediction).split()
    gold = oracle_normalize(truth).split()
    if not pred and not gold:
        return 1.0
    remaining = list(gold)
    common = 0
    for token in pred:
        if token in remaining:
            remaining.remove(token)
            common += 1
    if common == 0:
        return 0.0
    precision = common / len(pred)
    recall = common / len(gold)
    return 2 * precision * recall / (precision + recall)


# Expected values below were computed with the oracle above and frozen.
FIXTURES = [
    # (prediction, truth, em, f1)
    ("The answer is BUST.", "BUST", 0.0, 0.4),
    ("", "x", 0.0, 0.0),
    ("A  cat", "a cat", 1.0, 1.0),
    ("a b c", "b c d", 0.0, 2.0 / 3.0),
    ("BUST", "BUST", 1.0, 1.0),
    ("bust!", "BUST", 1.0, 1.0),
    ("The women's lifestyle magazine is 'BUST' magazine.", "BUST", 0.0, 2.0 / 9.0),
    ("", "", 1.0, 1.0),
    ("x", "", 0.0, 0.0),
    ("cat cat", "cat", 0.0, 2.0 / 3.0),
    ("cat", "cat cat", 0.0, 2.0 / 3.0),
    ("cat dog", "dog cat", 0.0, 1.0),
    ("42", "42", 1.0, 1.0),
    ("answer: 42", "42", 0.0, 2.0 / 3.0),
    ("New York City", "new york", 0.0, 0.8),
    ("it is a truth universally acknowledged", "universally acknowledged truth", 0.0, 2.0 / 3.0),
    ("Hello,   world!!!", "hello world", 1.0, 1.0),
    ("don't", "dont", 0.0, 0.0),
    ("1 2 3 4", "2 4 6", 0.0, 4.0 / 7.0),
    ("alpha beta beta gamma", "beta gamma gamma", 0.0, 4.0 / 7.0),
    ("Paris", "paris France", 0.0, 2.0 / 3.0),
    ("to be or not to be", "not to be", 0.0, 2.0 / 3.0),
]


@pytest.mark.parametrize("prediction,truth,em,f1", FIXTURES)
def test_fixtures_match_frozen_values(prediction, truth, em, f1):
    assert metric_exact_match(prediction, truth) == em
    assert abs(metric_f1(prediction, truth) - f1) < 1e-9


@pytest.mark.parametrize("prediction,truth,em,f1", FIXTURES)
def test_fixtures_agree_with_oracle(prediction, truth, em, f1):
    assert oracle_em(prediction, truth) == em
    assert abs(oracle_f1(prediction, truth) - f1) < 1e-9


def test_normalization_rules():
    assert normalize_answer("  The   CAT. ") == "the cat"
    assert answer_tokens("one,two;three") == ["one", "two", "three"]
    assert answer_tokens("") == []


_words = st.lists(st.from_regex(r"[a-z0-9]{1,6}", fullmatch=True), max_size=8)


@given(pred=_words, truth=_words)
def test_bounds_and_multiset_law(pred, truth):
    prediction, reference = " ".join(pred), " ".join(truth)
    em = metric_exact_match(prediction, reference)
    f1 = metric_f1(prediction, reference)
    assert em in (0.0, 1.0)
    assert 0.0 <= f1 <= 1.0
    # F1 = 1 exactly when the normalized token multisets are equal.
    assert (f1 == 1.0) == (sorted(pred) == sorted(truth))
    assert abs(f1 - oracle_f1(prediction, reference)) < 1e-12
    assert em == oracle_em(prediction, reference)


@given(text=st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), max_size=40))
def test_metrics_agree_with_oracle_on_ascii(text):
    assert metric_exact_match(text, text) == 1.0
    assert abs(metric_f1(text, "fixed point") - oracle_f1(text, "fixed point")) < 1e-12
