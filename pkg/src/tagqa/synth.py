"""Deterministic synthetic scene-text corpus.

Stands in for detector and OCR output: every scene carries a handful of
labelled object regions, several OCR tokens nested inside them and exactly
one annotated QA pair, so most of the scene text is never asked about.
"""
from __future__ import annotations

import hashlib
import math
import random
from collections import Counter
from typing import NamedTuple

import numpy as np

from .scene import ORIGINAL, BBox, ObjectRegion, OcrToken, QAPair, Scene, ranked_ocr_tokens

CLASSES = ("sign", "bottle", "book", "bus", "shirt", "car", "cup", "box", "poster", "door")
OBJECT_TEMPLATES = (
    "what is written on the {c}",
    "what does the {c} say",
    "what word is on the {c}",
)
LARGEST_TEMPLATES = ("what word is the largest", "what is the biggest word")
LARGEST_TEMPLATE_PROB = 0.25
APPEARANCE_DIM = 32
NOISE_SCALE = 0.1

_TEMPLATE_WORDS = {w for t in OBJECT_TEMPLATES + LARGEST_TEMPLATES for w in t.split()}


def _build_lexicon(size: int = 200) -> tuple[str, ...]:
    rnd = random.Random(20221001)
    onsets = "b c d f g h j k l m n p r s t v w z br cr dr fl gr pl st tr".split()
    vowels = "a e i o u ai ea oo".split()
    codas = ["", "", "n", "r", "s", "t", "x", "ck", "m", "l"]
    reserved = _TEMPLATE_WORDS | set(CLASSES)
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < size:
        if rnd.random() < 0.12:
            w = rnd.choice("abcdefghkmnprstxz") + str(rnd.randint(1, 99))
        else:
            w = "".join(
                rnd.choice(onsets) + rnd.choice(vowels) + rnd.choice(codas)
                for _ in range(rnd.randint(1, 2))
            )
        if 2 <= len(w) <= 9 and w not in seen and w not in reserved:
            seen.add(w)
            words.append(w)
    return tuple(words)


LEXICON = _build_lexicon()


def identity_vector(key: str, dim: int = APPEARANCE_DIM) -> np.ndarray:
    """Deterministic standard-normal vector keyed by a string."""
    digest = hashlib.sha256(key.encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.standard_normal(dim)


def _object_appearance(label: str, rng: np.random.Generator) -> tuple[float, ...]:
    v = identity_vector("obj:" + label) + NOISE_SCALE * rng.standard_normal(APPEARANCE_DIM)
    return tuple(float(x) for x in v)


def _token_appearance(text: str, host_label: str, rng: np.random.Generator) -> tuple[float, ...]:
    # a word crop also shows the surface it is printed on
    base = (identity_vector("txt:" + text) + identity_vector("ctx:" + host_label)) / math.sqrt(2.0)
    v = base + NOISE_SCALE * rng.standard_normal(APPEARANCE_DIM)
    return tuple(float(x) for x in v)


def split_of(image_id: str) -> str:
    """80/10/10 assignment by image_id hash."""
    bucket = int(hashlib.sha256(image_id.encode()).hexdigest(), 16) % 10
    return "train" if bucket < 8 else ("val" if bucket == 8 else "test")


class Splits(NamedTuple):
    train: list[Scene]
    val: list[Scene]
    test: list[Scene]


def _layout_objects(rng, width, height, n_obj):
    strip = width / n_obj
    boxes = []
    for k in range(n_obj):
        w = strip * rng.uniform(0.65, 0.95)
        h = height * rng.uniform(0.5, 0.9)
        x1 = k * strip + rng.uniform(0.0, strip - w)
        y1 = rng.uniform(0.0, height - h)
        boxes.append(BBox(round(x1, 2), round(y1, 2), round(x1 + w, 2), round(y1 + h, 2)))
    return boxes


def _layout_tokens(rng, obj: BBox, words: list[str]) -> list[BBox]:
    """Stack words as lines inside ``obj``; one line gets a headline font."""
    k = len(words)
    ow, oh = obj.x2 - obj.x1, obj.y2 - obj.y1
    head = int(rng.integers(k))
    scale = [rng.uniform(1.6, 2.2) if i == head else rng.uniform(0.6, 1.0) for i in range(k)]
    base = 0.9 * oh / (sum(scale) * 1.15)
    slot_top = obj.y1 + 0.05 * oh
    boxes = []
    for word, s in zip(words, scale):
        h = base * s
        w = min(h * 0.55 * len(word), 0.95 * ow)
        x1 = obj.x1 + rng.uniform(0.0, ow - w)
        y1 = slot_top + rng.uniform(0.0, 0.1 * h)
        x1r, y1r = round(x1, 2), round(y1, 2)
        x2r = min(round(x1 + w, 2), obj.x2)
        y2r = min(round(y1 + h, 2), obj.y2)
        boxes.append(BBox(x1r, y1r, x2r, y2r))
        slot_top += h * 1.15
    return boxes


def synth_scene(
    rng: np.random.Generator,
    image_id: str,
    ocr_per_scene_min: int = 5,
    annotation_sparsity: float = 0.4,
    ocr_spread: int = 5,
) -> Scene:
    width = float(rng.integers(640, 1025))
    height = float(rng.integers(480, 769))
    n_obj = int(rng.integers(2, 5))
    labels = [CLASSES[i] for i in rng.choice(len(CLASSES), n_obj, replace=False)]
    obj_boxes = _layout_objects(rng, width, height, n_obj)
    objects = [ObjectRegion(lab, box, _object_appearance(lab, rng)) for lab, box in zip(labels, obj_boxes)]

    n_ocr = max(int(rng.integers(ocr_per_scene_min, ocr_per_scene_min + ocr_spread)), n_obj)
    host = list(range(n_obj)) + [int(h) for h in rng.integers(0, n_obj, n_ocr - n_obj)]
    words = [LEXICON[i] for i in rng.choice(len(LEXICON), n_ocr, replace=False)]

    tokens: list[tuple[OcrToken, int]] = []
    for m in range(n_obj):
        mine = [i for i, h in enumerate(host) if h == m]
        boxes = _layout_tokens(rng, obj_boxes[m], [words[i] for i in mine])
        for i, box in zip(mine, boxes):
            tokens.append((OcrToken(words[i], box, _token_appearance(words[i], labels[m], rng)), m))
    order = rng.permutation(len(tokens))
    tokens = [tokens[i] for i in order]
    ocr = tuple(t for t, _ in tokens)
    hosts = [m for _, m in tokens]

    base = Scene(image_id, width, height, tuple(objects), ocr, ())
    ranked = ranked_ocr_tokens(base)
    headline = {}
    for i in ranked:
        headline.setdefault(hosts[i], i)

    # annotators only look at part of the image
    n_elig = max(1, math.ceil(annotation_sparsity * n_obj))
    eligible = sorted(int(m) for m in rng.choice(n_obj, n_elig, replace=False))
    if rng.random() < LARGEST_TEMPLATE_PROB:
        template = LARGEST_TEMPLATES[int(rng.integers(len(LARGEST_TEMPLATES)))]
        question = template
        answer_idx = ranked[0]
    else:
        m = eligible[int(rng.integers(len(eligible)))]
        template = OBJECT_TEMPLATES[int(rng.integers(len(OBJECT_TEMPLATES)))]
        question = template.format(c=labels[m])
        answer_idx = headline[m]
    qa = QAPair(tuple(question.split()), (ocr[answer_idx].text,), ORIGINAL, (answer_idx,))
    return Scene(image_id, width, height, tuple(objects), ocr, (qa,))


def synth_generate(
    seed: int,
    n_scenes: int,
    ocr_per_scene_min: int = 5,
    annotation_sparsity: float = 0.4,
) -> Splits:
    """Generate a corpus and split it 80/10/10 by image_id hash.

    A pure function of its arguments.
    """
    if n_scenes < 10:
        raise ValueError("n_scenes must be at least 10")
    if ocr_per_scene_min < 1:
        raise ValueError("ocr_per_scene_min must be at least 1")
    if not 0 < annotation_sparsity <= 1:
        raise ValueError("annotation_sparsity must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    out: dict[str, list[Scene]] = {"train": [], "val": [], "test": []}
    for i in range(n_scenes):
        image_id = f"s{seed}-{i:05d}"
        scene = synth_scene(rng, image_id, ocr_per_scene_min, annotation_sparsity)
        out[split_of(image_id)].append(scene)
    return Splits(out["train"], out["val"], out["test"])


def corpus_stats(scenes) -> dict:
    """QA-per-image and OCR-per-image histograms plus text-usage counts."""
    qa_hist = Counter(len(s.qa_pairs) for s in scenes)
    ocr_hist = Counter(len(s.ocr_tokens) for s in scenes)
    n = max(len(scenes), 1)
    ocr_texts = {t.text for s in scenes for t in s.ocr_tokens}
    answers = {qa.answer for s in scenes for qa in s.qa_pairs}
    n_tokens = sum(len(s.ocr_tokens) for s in scenes)
    used = sum(len(set(j for qa in s.qa_pairs for j in qa.answer_source_indices)) for s in scenes)
    return {
        "scenes": len(scenes),
        "qa_per_image_hist": {str(k): v for k, v in sorted(qa_hist.items())},
        "ocr_per_image_hist": {str(k): v for k, v in sorted(ocr_hist.items())},
        "mean_ocr_per_image": sum(len(s.ocr_tokens) for s in scenes) / n,
        "mean_qa_per_image": sum(len(s.qa_pairs) for s in scenes) / n,
        "distinct_ocr_texts": len(ocr_texts),
        "distinct_answer_texts": len(answers),
        "fraction_tokens_unused": 1.0 - used / max(n_tokens, 1),
    }
