"""Feature extraction and the three d-dimensional input embeddings.

* extended text words: primary words (answer for generation, question for
  answering) followed by object labels and OCR words
* object regions: appearance + relative box
* OCR tokens: appearance + relative box + lexical vector + PHOC
"""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import tensor as T
from .core.tensor import Tensor
from .scene import BBox, Scene, normalize_word

PAD, BEGIN, END, UNK = "<pad>", "<begin>", "<end>", "<unk>"
SPECIALS = (PAD, BEGIN, END, UNK)

ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"
_CHAR_INDEX = {c: i for i, c in enumerate(ALPHABET)}
UNIGRAM_LEVELS = (2, 3, 4, 5)
BIGRAM_LEVELS = (2,)
N_BIGRAMS = 50
PHOC_DIM = sum(UNIGRAM_LEVELS) * len(ALPHABET) + sum(BIGRAM_LEVELS) * N_BIGRAMS  # 604

# segment ids inside the joint sequence
SEG_PRIMARY, SEG_OBJ_LABEL, SEG_OCR_WORD, SEG_OBJ, SEG_OCR, SEG_DECODE = range(6)
N_SEGMENTS = 6


# -- vocabulary ------------------------------------------------------------
class Vocabulary:
    """Word ids with the special tokens first, plus the frozen PHOC bigram list."""

    def __init__(self, words, bigrams=()):
        self.itos: list[str] = list(SPECIALS)
        for w in words:
            if w in SPECIALS:
                continue
            if w in self.itos:
                raise ValueError(f"duplicate vocabulary word {w!r}")
            self.itos.append(w)
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        self.bigrams: tuple[str, ...] = tuple(bigrams)

    pad_id = property(lambda self: self.stoi[PAD])
    begin_id = property(lambda self: self.stoi[BEGIN])
    end_id = property(lambda self: self.stoi[END])
    unk_id = property(lambda self: self.stoi[UNK])

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi and word not in SPECIALS

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos and self.bigrams == other.bigrams

    def id_of(self, word: str) -> int:
        return self.stoi.get(word, self.unk_id)

    @classmethod
    def build(cls, scenes, sides=("question", "answer")) -> Vocabulary:
        """Words of the chosen sides of all QA pairs; deterministic order."""
        words = set()
        for s in scenes:
            for qa in s.qa_pairs:
                if "question" in sides:
                    words.update(qa.question_words)
                if "answer" in sides:
                    words.update(qa.answer_words)
        ocr_texts = [t.text for s in scenes for t in s.ocr_tokens]
        return cls(sorted(words), top_bigrams(ocr_texts))

    def to_text(self) -> str:
        return "".join(f"{w}\t{i}\n" for i, w in enumerate(self.itos))

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_text())
        path.with_suffix(".bigrams").write_text("".join(b + "\n" for b in self.bigrams))

    @classmethod
    def load(cls, path) -> Vocabulary:
        path = Path(path)
        rows = [line.split("\t") for line in path.read_text().splitlines() if line]
        rows.sort(key=lambda r: int(r[1]))
        words = [w for w, _ in rows]
        if tuple(words[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"{path}: special tokens must come first")
        bpath = path.with_suffix(".bigrams")
        bigrams = bpath.read_text().split() if bpath.exists() else ()
        return cls(words[len(SPECIALS):], bigrams)


def top_bigrams(texts, k: int = N_BIGRAMS) -> tuple[str, ...]:
    """The ``k`` most frequent character bigrams; ties break lexicographically."""
    counts = Counter()
    for t in texts:
        counts.update(t[i : i + 2] for i in range(len(t) - 1))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple(b for b, _ in ranked[:k])


# -- text features -----------------------------------------------------------
def _occupies(start: int, stop: int, region: int, n: int, level: int) -> bool:
    # gram covers chars [start, stop) of an n-char word; region r of `level`.
    # Work in units of 1/(n*level): gram -> [start*level, stop*level),
    # region -> [r*n, (r+1)*n). Set iff overlap >= half the gram length.
    lo = max(start * level, region * n)
    hi = min(stop * level, (region + 1) * n)
    return 2 * (hi - lo) >= (stop - start) * level


def phoc(word: str, bigrams=()) -> np.ndarray:
    """604-d pyramidal histogram of characters for a normalized word."""
    if not word or normalize_word(word) != word:
        raise ValueError(f"phoc needs a non-empty word over [a-z0-9], got {word!r}")
    return _phoc_cached(word, tuple(bigrams)).copy()


@lru_cache(maxsize=65536)
def _phoc_cached(word: str, bigrams: tuple[str, ...]) -> np.ndarray:
    n = len(word)
    vec = np.zeros(PHOC_DIM)
    offset = 0
    na = len(ALPHABET)
    for level in UNIGRAM_LEVELS:
        for i, ch in enumerate(word):
            c = _CHAR_INDEX[ch]
            for r in range(level):
                if _occupies(i, i + 1, r, n, level):
                    vec[offset + r * na + c] = 1.0
        offset += level * na
    bindex = {b: j for j, b in enumerate(bigrams[:N_BIGRAMS])}
    for level in BIGRAM_LEVELS:
        for i in range(n - 1):
            j = bindex.get(word[i : i + 2])
            if j is None:
                continue
            for r in range(level):
                if _occupies(i, i + 2, r, n, level):
                    vec[offset + r * N_BIGRAMS + j] = 1.0
        offset += level * N_BIGRAMS
    vec.flags.writeable = False
    return vec


@lru_cache(maxsize=None)
def _gram_vector(gram: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(("lex3:" + gram).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal(dim)


@lru_cache(maxsize=65536)
def _lexical_cached(word: str, dim: int) -> np.ndarray:
    padded = f"<{word}>"
    v = np.zeros(dim)
    for i in range(len(padded) - 2):
        v += _gram_vector(padded[i : i + 3], dim)
    v /= np.linalg.norm(v)
    v.flags.writeable = False
    return v


def lexical_embed(word: str, dim: int = 64) -> np.ndarray:
    """Frozen unit vector from hashed character 3-grams (boundary-marked)."""
    if not word:
        raise ValueError("lexical_embed needs a non-empty word")
    return _lexical_cached(word, dim).copy()


def relative_bbox(bbox: BBox, width: float, height: float) -> np.ndarray:
    if width <= 0 or height <= 0:
        raise ValueError(f"image size must be positive, got {width}x{height}")
    return np.array([bbox.x1 / width, bbox.y1 / height, bbox.x2 / width, bbox.y2 / height])


# -- per-scene numeric features ----------------------------------------------
def object_features(scene: Scene, m_cap: int, appearance_dim: int) -> tuple[np.ndarray, int]:
    out = np.zeros((m_cap, appearance_dim + 4))
    objs = scene.objects[:m_cap]
    for i, o in enumerate(objs):
        out[i, :appearance_dim] = o.appearance
        out[i, appearance_dim:] = relative_bbox(o.bbox, scene.width, scene.height)
    return out, len(objs)


def ocr_feature_dim(appearance_dim: int, lex_dim: int) -> int:
    return appearance_dim + 4 + lex_dim + PHOC_DIM


def ocr_features(
    scene: Scene, n_cap: int, appearance_dim: int, lex_dim: int, bigrams=()
) -> tuple[np.ndarray, int]:
    out = np.zeros((n_cap, ocr_feature_dim(appearance_dim, lex_dim)))
    toks = scene.ocr_tokens[:n_cap]
    a, b, c = appearance_dim, appearance_dim + 4, appearance_dim + 4 + lex_dim
    bigrams = tuple(bigrams)
    for i, t in enumerate(toks):
        out[i, :a] = t.appearance
        out[i, a:b] = relative_bbox(t.bbox, scene.width, scene.height)
        out[i, b:c] = _lexical_cached(t.text, lex_dim)
        out[i, c:] = _phoc_cached(t.text, bigrams)
    return out, len(toks)


@dataclass
class TextFeatures:
    ids: np.ndarray  # (K,) vocabulary ids
    segments: np.ndarray  # (K,)
    lexical: np.ndarray  # (K, lex)
    length: int


def extended_text_features(
    primary_words,
    object_labels,
    ocr_texts,
    vocab: Vocabulary,
    k_cap: int,
    lex_dim: int,
    max_primary: int = 20,
) -> TextFeatures:
    """Primary words (capped) ++ object labels ++ OCR words, truncated to ``k_cap``."""
    words = [(w, SEG_PRIMARY) for w in list(primary_words)[:max_primary]]
    words += [(w, SEG_OBJ_LABEL) for w in object_labels]
    words += [(w, SEG_OCR_WORD) for w in ocr_texts]
    words = words[:k_cap]
    ids = np.full(k_cap, vocab.pad_id, dtype=np.int64)
    seg = np.zeros(k_cap, dtype=np.int64)
    lex = np.zeros((k_cap, lex_dim))
    for i, (w, s) in enumerate(words):
        ids[i] = vocab.id_of(w)
        seg[i] = s
        lex[i] = _lexical_cached(w, lex_dim)
    return TextFeatures(ids, seg, lex, len(words))


# -- trainable embedding tables ----------------------------------------------
@dataclass
class EmbeddingTables:
    word: Tensor  # |V| x d
    lexical_proj: Tensor  # lex x d
    position: Tensor  # K x d
    segment: Tensor  # N_SEGMENTS x d
    obj_w: Tensor  # (A+4) x d
    obj_b: Tensor
    ocr_w: Tensor  # (A+4+lex+604) x d
    ocr_b: Tensor
    decode_position: Tensor  # T x d

    @classmethod
    def from_params(cls, params: dict[str, Tensor]) -> EmbeddingTables:
        return cls(
            word=params["emb.word"],
            lexical_proj=params["emb.lexical_proj"],
            position=params["emb.position"],
            segment=params["emb.segment"],
            obj_w=params["emb.obj_proj.w"],
            obj_b=params["emb.obj_proj.b"],
            ocr_w=params["emb.ocr_proj.w"],
            ocr_b=params["emb.ocr_proj.b"],
            decode_position=params["emb.decode_position"],
        )


def init_embedding_params(cfg, vocab_size: int, rng: np.random.Generator) -> dict[str, Tensor]:
    d, A, lex = cfg.d, cfg.appearance_dim, cfg.lex_dim
    shapes = {
        "emb.word": (vocab_size, d),
        "emb.lexical_proj": (lex, d),
        "emb.position": (cfg.k_cap, d),
        "emb.segment": (N_SEGMENTS, d),
        "emb.obj_proj.w": (A + 4, d),
        "emb.ocr_proj.w": (ocr_feature_dim(A, lex), d),
        "emb.decode_position": (cfg.t_cap, d),
    }
    params = {k: Tensor(rng.normal(0.0, 0.02, s), requires_grad=True, name=k) for k, s in shapes.items()}
    params["emb.obj_proj.b"] = Tensor(np.zeros(d), requires_grad=True, name="emb.obj_proj.b")
    params["emb.ocr_proj.b"] = Tensor(np.zeros(d), requires_grad=True, name="emb.ocr_proj.b")
    return params


def row_mask(lengths, cap: int) -> np.ndarray:
    """(B, cap, 1) float mask of valid rows."""
    lengths = np.asarray(lengths).reshape(-1, 1)
    return (np.arange(cap)[None, :] < lengths).astype(np.float64)[..., None]


def embed_text_batch(ids, segments, lexical, lengths, tables: EmbeddingTables) -> Tensor:
    """(B, K) ids -> (B, K, d) with word, lexical, position and segment terms."""
    k = ids.shape[1]
    x = T.embedding(tables.word, ids)
    x = x + T.matmul(Tensor(lexical), tables.lexical_proj)
    x = x + tables.position[:k]
    x = x + T.embedding(tables.segment, segments)
    return x * row_mask(lengths, k)


def embed_objects_batch(feats, lengths, tables: EmbeddingTables) -> Tensor:
    m = feats.shape[1]
    x = T.matmul(Tensor(feats), tables.obj_w) + tables.obj_b
    x = x + tables.segment[SEG_OBJ]
    return x * row_mask(lengths, m)


def embed_ocr_batch(feats, lengths, tables: EmbeddingTables) -> Tensor:
    n = feats.shape[1]
    x = T.matmul(Tensor(feats), tables.ocr_w) + tables.ocr_b
    x = x + tables.segment[SEG_OCR]
    return x * row_mask(lengths, n)


# -- single-scene conveniences -------------------------------------------------
def embed_answer_extended(answer_words, object_labels, ocr_texts, tables, vocab, cfg) -> tuple[Tensor, int]:
    """K x d embedding of the extended answer sequence, plus ``k_used``."""
    f = extended_text_features(
        answer_words, object_labels, ocr_texts, vocab, cfg.k_cap, cfg.lex_dim, cfg.max_answer_words
    )
    x = embed_text_batch(f.ids[None], f.segments[None], f.lexical[None], [f.length], tables)
    return T.reshape(x, x.shape[1:]), f.length


def embed_objects(scene: Scene, tables, cfg) -> tuple[Tensor, int]:
    feats, m = object_features(scene, cfg.m_cap, cfg.appearance_dim)
    x = embed_objects_batch(feats[None], [m], tables)
    return T.reshape(x, x.shape[1:]), m


def embed_ocr(scene: Scene, tables, cfg, bigrams=()) -> tuple[Tensor, int]:
    feats, n = ocr_features(scene, cfg.n_cap, cfg.appearance_dim, cfg.lex_dim, bigrams)
    x = embed_ocr_batch(feats[None], [n], tables)
    return T.reshape(x, x.shape[1:]), n
