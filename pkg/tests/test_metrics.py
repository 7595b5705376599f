import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tagqa.metrics import anls_score, levenshtein, normalize_answer, vqa_accuracy

words = st.text(alphabet="abcde", max_size=8)


def dp_oracle(a, b):
    """Full Wagner-Fischer table."""
    table = np.zeros((len(a) + 1, len(b) + 1), dtype=int)
    table[:, 0] = np.arange(len(a) + 1)
    table[0, :] = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            table[i, j] = min(table[i - 1, j] + 1, table[i, j - 1] + 1,
                              table[i - 1, j - 1] + (a[i - 1] != b[j - 1]))
    return int(table[-1, -1])


@pytest.mark.parametrize("a, b, d", [("", "abc", 3), ("kitten", "sitting", 3), ("abc", "abc", 0),
                                     ("flaw", "lawn", 2), ("", "", 0)])
def test_levenshtein_examples(a, b, d):
    assert levenshtein(a, b) == d


def test_levenshtein_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = "".join(rng.choice(list("abcxyz"), rng.integers(0, 9)))
        b = "".join(rng.choice(list("abcxyz"), rng.integers(0, 9)))
        assert levenshtein(a, b) == dp_oracle(a, b)


@given(words, words, words)
def test_levenshtein_metric_axioms(a, b, c):
    assert levenshtein(a, a) == 0
    assert levenshtein(a, b) == levenshtein(b, a)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
    assert (levenshtein(a, b) == 0) == (a == b)


@pytest.mark.parametrize("pred, refs, score", [
    ("hello", ["hello"], 1.0),
    ("hello", ["hallo"], 0.8),
    ("abc", ["xyz"], 0.0),
    ("  Hello ", ["hello"], 1.0),
    ("hello", ["xyz", "hallo", "help"], 0.8),
])
def test_anls_examples(pred, refs, score):
    assert anls_score(pred, refs) == pytest.approx(score, abs=1e-12)


def test_anls_threshold_is_strict():
    # NL exactly 0.5 is at the threshold and scores 0
    assert anls_score("ab", ["ax"]) == 0.0


def test_anls_needs_a_reference():
    with pytest.raises(ValueError):
        anls_score("x", [])


@given(st.integers(0, 6), st.integers(0, 6))
@settings(max_examples=60)
def test_anls_non_increasing_in_distance(d1, d2):
    ref = "abcdef"
    p1 = "z" * min(d1, 6) + ref[min(d1, 6):]
    p2 = "z" * min(d2, 6) + ref[min(d2, 6):]
    if levenshtein(p1, ref) <= levenshtein(p2, ref):
        assert anls_score(p1, [ref]) >= anls_score(p2, [ref])


@pytest.mark.parametrize("matches, score", [(10, 1.0), (3, 1.0), (2, 2 / 3), (1, 1 / 3), (0, 0.0)])
def test_vqa_accuracy_examples(matches, score):
    refs = ["cola"] * matches + ["pepsi"] * (10 - matches)
    assert vqa_accuracy("cola", refs) == pytest.approx(score, abs=1e-15)


def test_vqa_accuracy_normalizes_and_checks_count():
    assert vqa_accuracy("Cola!", ["cola"] * 10) == 1.0
    with pytest.raises(ValueError, match="10"):
        vqa_accuracy("cola", ["cola"] * 9)


def test_normalize_answer():
    assert normalize_answer("  The  END. ") == "the end"


@given(st.text(alphabet="ab c", max_size=6), st.lists(st.text(alphabet="ab c", max_size=6), min_size=10, max_size=10))
def test_metric_bounds(pred, refs):
    assert 0.0 <= vqa_accuracy(pred, refs) <= 1.0
    assert 0.0 <= anls_score(pred, refs) <= 1.0
