"""Text-VQA answer metrics: soft VQA accuracy and ANLS."""
from __future__ import annotations

import re

_PUNCT = re.compile(r"[^\w\s]")


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_PUNCT.sub("", text.lower()).split())


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def anls_score(prediction: str, references, tau: float = 0.5) -> float:
    """Max over references of thresholded normalized Levenshtein similarity."""
    if not references:
        raise ValueError("anls_score needs at least one reference")
    pred = prediction.strip().lower()
    best = 0.0
    for ref in references:
        ref = ref.strip().lower()
        longest = max(len(pred), len(ref))
        nl = levenshtein(pred, ref) / longest if longest else 0.0
        best = max(best, 1.0 - nl if nl < tau else 0.0)
    return best


def vqa_accuracy(prediction: str, references) -> float:
    """Soft voting accuracy ``min(#matching references / 3, 1)`` over 10 answers."""
    references = list(references)
    if len(references) != 10:
        raise ValueError(f"vqa_accuracy needs exactly 10 references, got {len(references)}")
    pred = normalize_answer(prediction)
    matches = sum(normalize_answer(r) == pred for r in references)
    return min(matches / 3.0, 1.0)
