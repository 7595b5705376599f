"""Dynamic pointer-network decoding head.

At each step the model scores every fixed-vocabulary word and, through a
bilinear form, every OCR token of the scene. Training uses sigmoid BCE over
the concatenated scores with multi-hot targets; inference is greedy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import tensor as T
from .core.tensor import Tensor
from .embeddings import END, SEG_DECODE

VOCAB_SOURCE = "vocab"


def init_decoder_params(cfg, vocab_size: int, rng: np.random.Generator) -> dict[str, Tensor]:
    d = cfg.d
    params = {}
    for name, shape in (
        ("head.vocab.w", (d, vocab_size)),
        ("head.ptr_dec.w", (d, d)),
        ("head.ptr_ocr.w", (d, d)),
    ):
        params[name] = Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True, name=name)
    for name, n in (("head.vocab.b", vocab_size), ("head.ptr_dec.b", d), ("head.ptr_ocr.b", d)):
        params[name] = Tensor(np.zeros(n), requires_grad=True, name=name)
    return params


@dataclass
class OutputScores:
    vocab_scores: np.ndarray  # (|V|,)
    pointer_scores: np.ndarray  # (N,)

    def concatenated(self) -> np.ndarray:
        return np.concatenate([self.vocab_scores, self.pointer_scores])

    def argmax(self) -> tuple[str, int]:
        """("vocab", id) or ("ocr", j) of the best-scoring output."""
        i = int(np.argmax(self.concatenated()))
        v = len(self.vocab_scores)
        return (VOCAB_SOURCE, i) if i < v else ("ocr", i - v)


@dataclass
class DecodeState:
    step: int = 0
    emitted: list[tuple[str, int]] = field(default_factory=list)
    finished: bool = False


@dataclass
class LossReport:
    total: float
    per_step: list[float]
    supervised_steps: int


def forbidden_vocab_mask(vocab) -> np.ndarray:
    """True for vocab entries that may be predicted."""
    ok = np.ones(len(vocab), dtype=bool)
    ok[vocab.begin_id] = False
    ok[vocab.pad_id] = False
    return ok


def pointer_scores(dec: Tensor, ocr: Tensor, params) -> Tensor:
    """``(W_d dec + b_d) . (W_o ocr_j + b_o)`` for every OCR row j.

    ``dec`` is (..., t, d), ``ocr`` is (..., N, d); returns (..., t, N).
    """
    q = T.matmul(dec, params["head.ptr_dec.w"]) + params["head.ptr_dec.b"]
    k = T.matmul(ocr, params["head.ptr_ocr.w"]) + params["head.ptr_ocr.b"]
    return T.matmul(q, T.transpose(k))


def output_scores(dec: Tensor, ocr: Tensor, params) -> Tensor:
    """Concatenated [vocab | pointer] scores, (..., t, |V| + N)."""
    vocab = T.matmul(dec, params["head.vocab.w"]) + params["head.vocab.b"]
    return T.concat([vocab, pointer_scores(dec, ocr, params)], axis=-1)


def score_step(enriched_decode_t, enriched_ocr, params, vocab, n_used: int) -> OutputScores:
    """Masked scores for one decoding step of one example."""
    dec = T.as_tensor(enriched_decode_t)
    ocr = T.as_tensor(enriched_ocr)
    dec2 = T.reshape(dec, (1, dec.shape[-1]))
    s = output_scores(dec2, ocr, params).data[0]
    v = len(vocab)
    vs = np.where(forbidden_vocab_mask(vocab), s[:v], -np.inf)
    ps = s[v:].copy()
    ps[n_used:] = -np.inf
    return OutputScores(vs, ps)


def step_input_embeddings(prev_vocab: np.ndarray, prev_ocr: np.ndarray, ocr_emb: Tensor, tables) -> Tensor:
    """Decode-step inputs, (B, t, d).

    ``prev_vocab`` holds vocabulary ids and ``prev_ocr`` OCR slot indices
    (-1 where the previous token came from the vocabulary). Vocabulary
    tokens use the word table row, pointed tokens the OCR embedding row.
    """
    b, t = prev_vocab.shape
    n = ocr_emb.shape[-2]
    if np.any(prev_ocr >= n):
        raise IndexError(f"pointed OCR index out of range [0, {n})")
    is_ocr = prev_ocr >= 0
    word = T.embedding(tables.word, np.where(is_ocr, 0, prev_vocab)) * (~is_ocr)[..., None]
    x = word
    if is_ocr.any():
        onehot = np.zeros((b, t, n))
        bi, ti = np.nonzero(is_ocr)
        onehot[bi, ti, prev_ocr[bi, ti]] = 1.0
        x = x + T.matmul(Tensor(onehot), ocr_emb)
    x = x + tables.decode_position[:t]
    return x + tables.segment[SEG_DECODE]


def step_input_embedding(prev_token: tuple[str, int], step: int, ocr_emb: Tensor, tables) -> Tensor:
    """Single-token form of :func:`step_input_embeddings`; returns (d,)."""
    kind, idx = prev_token
    if kind == VOCAB_SOURCE:
        if not 0 <= idx < tables.word.shape[0]:
            raise IndexError(f"vocabulary id {idx} out of range")
        pv, po = np.array([[idx]]), np.array([[-1]])
    else:
        pv, po = np.array([[0]]), np.array([[idx]])
        if not 0 <= idx < ocr_emb.shape[-2]:
            raise IndexError(f"OCR index {idx} out of range")
    ocr3 = ocr_emb if ocr_emb.ndim == 3 else T.reshape(ocr_emb, (1,) + ocr_emb.shape)
    x = step_input_embeddings(pv, po, ocr3, tables)
    # decode_position[:1] was used; shift to the requested step
    x = x - tables.decode_position[0] + tables.decode_position[step]
    return T.reshape(x, (x.shape[-1],))


@dataclass
class TeacherPlan:
    """Per-example teacher-forcing inputs and multi-hot targets."""

    prev_vocab: np.ndarray  # (T,)
    prev_ocr: np.ndarray  # (T,)
    target_vocab: np.ndarray  # (T,) vocab id or -1
    target_ocr: list[list[int]]  # per step OCR slots matching the word
    supervised: np.ndarray  # (T,) bool


def teacher_plan(words, vocab, ocr_texts, n_used: int, t_cap: int) -> TeacherPlan:
    if not words:
        raise ValueError("unsupervisable example: empty target sequence")
    steps = list(words[:t_cap])
    if len(steps) < t_cap:
        steps.append(END)
    prev_vocab = np.full(t_cap, vocab.pad_id, dtype=np.int64)
    prev_ocr = np.full(t_cap, -1, dtype=np.int64)
    prev_vocab[0] = vocab.begin_id
    target_vocab = np.full(t_cap, -1, dtype=np.int64)
    target_ocr: list[list[int]] = [[] for _ in range(t_cap)]
    supervised = np.zeros(t_cap, dtype=bool)
    live = list(ocr_texts[:n_used])
    for t, w in enumerate(steps):
        in_vocab = w == END or w in vocab
        if in_vocab:
            target_vocab[t] = vocab.stoi[w]
        if w != END:
            target_ocr[t] = [j for j, txt in enumerate(live) if txt == w]
        supervised[t] = in_vocab or bool(target_ocr[t])
        if t + 1 < t_cap:
            if in_vocab:
                prev_vocab[t + 1] = vocab.stoi[w]
            elif target_ocr[t]:
                prev_ocr[t + 1] = target_ocr[t][0]
            else:
                prev_vocab[t + 1] = vocab.unk_id
    if not supervised.any():
        raise ValueError("unsupervisable example: no step has a target")
    return TeacherPlan(prev_vocab, prev_ocr, target_vocab, target_ocr, supervised)


def stack_plans(plans: list[TeacherPlan], vocab_size: int, n_cap: int):
    """Batch arrays: prev_vocab, prev_ocr (B,T); targets (B,T,V+N); supervised (B,T)."""
    b, t = len(plans), len(plans[0].supervised)
    targets = np.zeros((b, t, vocab_size + n_cap))
    for i, p in enumerate(plans):
        steps = np.nonzero(p.target_vocab >= 0)[0]
        targets[i, steps, p.target_vocab[steps]] = 1.0
        for s, slots in enumerate(p.target_ocr):
            for j in slots:
                targets[i, s, vocab_size + j] = 1.0
    prev_vocab = np.stack([p.prev_vocab for p in plans])
    prev_ocr = np.stack([p.prev_ocr for p in plans])
    supervised = np.stack([p.supervised for p in plans])
    return prev_vocab, prev_ocr, targets, supervised


def bce_loss(scores: Tensor, targets: np.ndarray, class_valid: np.ndarray, supervised: np.ndarray):
    """Mean over supervised steps of the class-summed sigmoid BCE.

    Returns the loss tensor and a :class:`LossReport` whose per-step entries
    sum to the total.
    """
    weight = class_valid[:, None, :] * supervised[:, :, None]
    n_sup = int(supervised.sum())
    if n_sup == 0:
        raise ValueError("unsupervisable example: no supervised steps")
    loss = T.bce_with_logits(scores, targets, weight) * (1.0 / n_sup)
    x = np.where(weight > 0, scores.data, 0.0)
    elem = T.bce_elementwise(x, targets) * weight
    per_step = (elem.sum(axis=(0, 2)) / n_sup).tolist()
    return loss, LossReport(float(loss.data), per_step, n_sup)
