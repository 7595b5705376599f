"""Scene data model and the JSON Lines corpus format."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

ORIGINAL = "original"
GENERATED = "generated"
PROVENANCES = (ORIGINAL, GENERATED)

_NON_ALNUM = re.compile(r"[^a-z0-9]+")
_VALID_WORD = re.compile(r"^[a-z0-9]+$")


class CorpusError(ValueError):
    """Malformed corpus line or a scene that violates its invariants."""


class NoSceneTextError(ValueError):
    pass


def normalize_word(text: str) -> str:
    """Lowercase and drop everything outside ``[a-z0-9]``."""
    return _NON_ALNUM.sub("", text.lower())


def normalize_words(text: str) -> list[str]:
    """Split free text into normalized words, dropping empties."""
    words = (normalize_word(w) for w in text.lower().split())
    return [w for w in words if w]


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def contains(self, other: BBox) -> bool:
        return (
            self.x1 <= other.x1 and self.y1 <= other.y1
            and other.x2 <= self.x2 and other.y2 <= self.y2
        )

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class ObjectRegion:
    class_label: str
    bbox: BBox
    appearance: tuple[float, ...]


@dataclass(frozen=True)
class OcrToken:
    text: str
    bbox: BBox
    appearance: tuple[float, ...]


@dataclass(frozen=True)
class QAPair:
    question_words: tuple[str, ...]
    answer_words: tuple[str, ...]
    provenance: str = ORIGINAL
    answer_source_indices: tuple[int, ...] = ()

    @property
    def question(self) -> str:
        return " ".join(self.question_words)

    @property
    def answer(self) -> str:
        return " ".join(self.answer_words)


@dataclass(frozen=True)
class Scene:
    image_id: str
    width: float
    height: float
    objects: tuple[ObjectRegion, ...] = ()
    ocr_tokens: tuple[OcrToken, ...] = ()
    qa_pairs: tuple[QAPair, ...] = ()

    def original_pairs(self) -> list[QAPair]:
        return [qa for qa in self.qa_pairs if qa.provenance == ORIGINAL]


@dataclass
class ValidationResult:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _check_bbox(b: BBox, width: float, height: float, where: str, errors: list[str]) -> None:
    if not (0 <= b.x1 < b.x2 <= width):
        errors.append(f"{where}.bbox x-range [{b.x1}, {b.x2}] invalid for width {width}")
    if not (0 <= b.y1 < b.y2 <= height):
        errors.append(f"{where}.bbox y-range [{b.y1}, {b.y2}] invalid for height {height}")


def validate_scene(
    scene: Scene,
    appearance_dim: int | None = None,
    m_cap: int | None = None,
    n_cap: int | None = None,
) -> ValidationResult:
    """Check every scene invariant without mutating the scene."""
    res = ValidationResult()
    err = res.errors
    if not scene.image_id:
        err.append("image_id empty")
    if not scene.width > 0 or not scene.height > 0:
        err.append(f"image size {scene.width}x{scene.height} must be positive")
    if m_cap is not None and len(scene.objects) > m_cap:
        err.append(f"objects: {len(scene.objects)} exceeds cap {m_cap}")
    if n_cap is not None and len(scene.ocr_tokens) > n_cap:
        err.append(f"ocr_tokens: {len(scene.ocr_tokens)} exceeds cap {n_cap}")

    dims = set()
    for i, obj in enumerate(scene.objects):
        where = f"objects[{i}]"
        if not obj.class_label or obj.class_label != obj.class_label.lower():
            err.append(f"{where}.class_label must be non-empty lowercase")
        _check_bbox(obj.bbox, scene.width, scene.height, where, err)
        dims.add(len(obj.appearance))
    for i, tok in enumerate(scene.ocr_tokens):
        where = f"ocr_tokens[{i}]"
        if not tok.text:
            err.append("ocr.text empty" + f" ({where})")
        elif not _VALID_WORD.match(tok.text):
            err.append(f"{where}.text {tok.text!r} has characters outside [a-z0-9]")
        _check_bbox(tok.bbox, scene.width, scene.height, where, err)
        dims.add(len(tok.appearance))
    if appearance_dim is not None:
        bad = sorted(d for d in dims if d != appearance_dim)
        if bad:
            err.append(f"appearance length {bad} != configured {appearance_dim}")
    elif len(dims) > 1:
        err.append(f"inconsistent appearance lengths {sorted(dims)}")

    n_tok = len(scene.ocr_tokens)
    for i, qa in enumerate(scene.qa_pairs):
        where = f"qa_pairs[{i}]"
        if not qa.question_words:
            err.append(f"{where}.question empty")
        if qa.provenance not in PROVENANCES:
            err.append(f"{where}.provenance {qa.provenance!r} not in {PROVENANCES}")
        for j in qa.answer_source_indices:
            if not 0 <= j < n_tok:
                err.append(f"{where}.answer_source_indices {j} out of range")
    if n_tok == 0:
        res.warnings.append("no scene text")
    return res


def largest_ocr_token(scene: Scene) -> int:
    """Index of the OCR token with maximal box area.

    Ties go to reading order: smaller y1, then smaller x1, then smaller index.
    """
    if not scene.ocr_tokens:
        raise NoSceneTextError(f"scene {scene.image_id!r} has no scene text")
    return ranked_ocr_tokens(scene)[0]


def ranked_ocr_tokens(scene: Scene) -> list[int]:
    """OCR token indices by descending area with the reading-order tie-break."""
    toks = scene.ocr_tokens
    return sorted(
        range(len(toks)),
        key=lambda i: (-toks[i].bbox.area(), toks[i].bbox.y1, toks[i].bbox.x1, i),
    )


# -- JSON Lines ------------------------------------------------------------
def scene_to_dict(scene: Scene) -> dict:
    return {
        "image_id": scene.image_id,
        "width": scene.width,
        "height": scene.height,
        "objects": [
            {"class_label": o.class_label, "bbox": o.bbox.as_list(), "appearance": list(o.appearance)}
            for o in scene.objects
        ],
        "ocr_tokens": [
            {"text": t.text, "bbox": t.bbox.as_list(), "appearance": list(t.appearance)}
            for t in scene.ocr_tokens
        ],
        "qa_pairs": [
            {
                "question": qa.question,
                "answer": qa.answer,
                "provenance": qa.provenance,
                "answer_source_indices": list(qa.answer_source_indices),
            }
            for qa in scene.qa_pairs
        ],
    }


def _bbox(raw) -> BBox:
    if len(raw) != 4:
        raise ValueError(f"bbox needs 4 numbers, got {len(raw)}")
    return BBox(*(float(v) for v in raw))


def scene_from_dict(d: dict) -> Scene:
    return Scene(
        image_id=str(d["image_id"]),
        width=float(d["width"]),
        height=float(d["height"]),
        objects=tuple(
            ObjectRegion(o["class_label"], _bbox(o["bbox"]), tuple(float(v) for v in o["appearance"]))
            for o in d["objects"]
        ),
        ocr_tokens=tuple(
            OcrToken(t["text"], _bbox(t["bbox"]), tuple(float(v) for v in t["appearance"]))
            for t in d["ocr_tokens"]
        ),
        qa_pairs=tuple(
            QAPair(
                question_words=tuple(q["question"].split()),
                answer_words=tuple(q["answer"].split()),
                provenance=q["provenance"],
                answer_source_indices=tuple(int(j) for j in q["answer_source_indices"]),
            )
            for q in d["qa_pairs"]
        ),
    )


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), separators=(",", ":"))


def save_corpus(scenes, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            fh.write(dumps_scene(s))
            fh.write("\n")


def load_corpus(path) -> list[Scene]:
    """Read a JSONL corpus; every scene must pass :func:`validate_scene`."""
    scenes: list[Scene] = []
    seen: set[str] = set()
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                scene = scene_from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed scene ({exc})") from exc
            res = validate_scene(scene)
            if not res.ok:
                raise CorpusError(
                    f"{path}: line {lineno}: scene {scene.image_id!r}: " + "; ".join(res.errors)
                )
            if scene.image_id in seen:
                raise CorpusError(f"{path}: line {lineno}: duplicate image_id {scene.image_id!r}")
            seen.add(scene.image_id)
            scenes.append(scene)
    return scenes
