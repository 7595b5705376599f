"""Shared multimodal pointer model used for question generation and answering.

The same machinery runs in both directions: for generation the primary text
is the answer and the decoded sequence is the question; for answering it is
the other way round.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import decoder as dec
from . import fusion
from .config import ModelConfig
from .core import tensor as T
from .core.checkpoint import dumps_checkpoint, loads_checkpoint
from .core.optim import Adam, DivergenceError, LrSchedule
from .core.tensor import Tensor, no_grad
from .embeddings import (
    SPECIALS,
    EmbeddingTables,
    Vocabulary,
    embed_objects_batch,
    embed_ocr_batch,
    embed_text_batch,
    extended_text_features,
    init_embedding_params,
    object_features,
    ocr_features,
)
from .scene import Scene

log = logging.getLogger(__name__)

MODALITIES = ("obj", "ocr")


@dataclass
class SceneFeatures:
    obj: np.ndarray
    m_used: int
    ocr: np.ndarray
    n_used: int
    ocr_texts: tuple[str, ...]
    object_labels: tuple[str, ...]


@dataclass
class Batch:
    """Numeric inputs for B examples."""

    text_ids: np.ndarray
    text_seg: np.ndarray
    text_lex: np.ndarray
    k_used: np.ndarray
    obj: np.ndarray
    m_used: np.ndarray
    ocr: np.ndarray
    n_used: np.ndarray
    ocr_texts: list[tuple[str, ...]]

    def __len__(self) -> int:
        return len(self.k_used)

    def valid_lengths(self) -> np.ndarray:
        return np.stack([self.k_used, self.m_used, self.n_used], axis=1)


@dataclass
class DecodeResult:
    words: list[str]
    sources: list[str]  # "vocab" or "ocr:<j>" per emitted word
    tokens: list[tuple[str, int]]


class PointerQAModel:
    """Embeddings + fusion transformer + pointer decoder over one parameter registry."""

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, modalities=MODALITIES, init: bool = True):
        self.cfg = cfg
        self.vocab = vocab
        self.modalities = tuple(m for m in MODALITIES if m in set(modalities))
        self.params: dict[str, Tensor] = {}
        self._scene_cache: dict[str, SceneFeatures] = {}
        if init:
            rng = np.random.default_rng(cfg.seed)
            self.params.update(init_embedding_params(cfg, len(vocab), rng))
            self.params.update(fusion.init_fusion_params(cfg, rng))
            self.params.update(dec.init_decoder_params(cfg, len(vocab), rng))

    @property
    def tables(self) -> EmbeddingTables:
        return EmbeddingTables.from_params(self.params)

    # -- featurization ---------------------------------------------------
    def scene_features(self, scene: Scene) -> SceneFeatures:
        hit = self._scene_cache.get(scene.image_id)
        if hit is not None:
            return hit
        cfg = self.cfg
        obj, m = object_features(scene, cfg.m_cap, cfg.appearance_dim)
        ocr, n = ocr_features(scene, cfg.n_cap, cfg.appearance_dim, cfg.lex_dim, self.vocab.bigrams)
        if "obj" not in self.modalities:
            obj, m = np.zeros_like(obj), 0
        if "ocr" not in self.modalities:
            ocr, n = np.zeros_like(ocr), 0
        feats = SceneFeatures(
            obj, m, ocr, n,
            tuple(t.text for t in scene.ocr_tokens[: cfg.n_cap]),
            tuple(o.class_label for o in scene.objects[: cfg.m_cap]),
        )
        self._scene_cache[scene.image_id] = feats
        return feats

    def encode(self, scenes, primary_words) -> Batch:
        """Featurize (scene, primary text) pairs into one batch."""
        cfg = self.cfg
        rows = []
        for scene, words in zip(scenes, primary_words):
            sf = self.scene_features(scene)
            all_texts = [t.text for t in scene.ocr_tokens]
            tf = extended_text_features(
                words, sf.object_labels, all_texts, self.vocab, cfg.k_cap, cfg.lex_dim, cfg.max_answer_words
            )
            rows.append((tf, sf))
        return Batch(
            text_ids=np.stack([tf.ids for tf, _ in rows]),
            text_seg=np.stack([tf.segments for tf, _ in rows]),
            text_lex=np.stack([tf.lexical for tf, _ in rows]),
            k_used=np.array([tf.length for tf, _ in rows], dtype=np.int64),
            obj=np.stack([sf.obj for _, sf in rows]),
            m_used=np.array([sf.m_used for _, sf in rows], dtype=np.int64),
            ocr=np.stack([sf.ocr for _, sf in rows]),
            n_used=np.array([sf.n_used for _, sf in rows], dtype=np.int64),
            ocr_texts=[sf.ocr_texts for _, sf in rows],
        )

    # -- forward ---------------------------------------------------------
    def class_valid(self, batch: Batch) -> np.ndarray:
        v = len(self.vocab)
        out = np.zeros((len(batch), v + self.cfg.n_cap), dtype=bool)
        out[:, :v] = dec.forbidden_vocab_mask(self.vocab)
        out[:, v:] = np.arange(self.cfg.n_cap)[None, :] < batch.n_used[:, None]
        return out

    def context_embeddings(self, batch: Batch) -> tuple[Tensor, Tensor, Tensor]:
        tables = self.tables
        text = embed_text_batch(batch.text_ids, batch.text_seg, batch.text_lex, batch.k_used, tables)
        obj = embed_objects_batch(batch.obj, batch.m_used, tables)
        ocr = embed_ocr_batch(batch.ocr, batch.n_used, tables)
        return text, obj, ocr

    def scores(self, batch: Batch, prev_vocab, prev_ocr, training: bool = False, rng=None) -> Tensor:
        """Raw [vocab | pointer] scores for every decode position, (B, t, |V|+N)."""
        cfg = self.cfg
        t_len = prev_vocab.shape[1]
        text, obj, ocr = self.context_embeddings(batch)
        dec_in = dec.step_input_embeddings(prev_vocab, prev_ocr, ocr, self.tables)
        seq = fusion.build_joint_sequence(text, obj, ocr, dec_in, cfg)
        visible = fusion.build_mask(batch.valid_lengths(), cfg, t_len)
        out = fusion.forward(seq, visible, self.params, cfg, training, rng)
        off = fusion.segment_offsets(cfg)
        dec_out = out[:, off["decode"] : off["decode"] + t_len]
        ocr_out = out[:, off["ocr"] : off["ocr"] + cfg.n_cap]
        return dec.output_scores(dec_out, ocr_out, self.params)

    def loss(self, batch: Batch, targets_words, training: bool = False, rng=None):
        cfg = self.cfg
        plans = [
            dec.teacher_plan(w, self.vocab, texts, int(n), cfg.t_cap)
            for w, texts, n in zip(targets_words, batch.ocr_texts, batch.n_used)
        ]
        prev_vocab, prev_ocr, targets, supervised = dec.stack_plans(plans, len(self.vocab), cfg.n_cap)
        scores = self.scores(batch, prev_vocab, prev_ocr, training, rng)
        return dec.bce_loss(scores, targets, self.class_valid(batch), supervised)

    # -- inference -------------------------------------------------------
    def decode_greedy(self, batch: Batch, max_steps: int | None = None) -> list[DecodeResult]:
        """Argmax decoding, one full forward per step; stops at <end> or T."""
        cfg = self.cfg
        t_max = min(cfg.t_cap, max_steps or cfg.t_cap)
        b = len(batch)
        v = len(self.vocab)
        prev_vocab = np.full((b, t_max), self.vocab.pad_id, dtype=np.int64)
        prev_ocr = np.full((b, t_max), -1, dtype=np.int64)
        prev_vocab[:, 0] = self.vocab.begin_id
        valid = self.class_valid(batch)
        states = [dec.DecodeState() for _ in range(b)]
        with no_grad():
            for t in range(t_max):
                s = self.scores(batch, prev_vocab[:, : t + 1], prev_ocr[:, : t + 1]).data[:, t]
                s = np.where(valid, s, -np.inf)
                choice = np.argmax(s, axis=1)
                for i, c in enumerate(choice):
                    st = states[i]
                    if st.finished:
                        continue
                    tok = ("vocab", int(c)) if c < v else ("ocr", int(c - v))
                    st.step = t + 1
                    if tok == ("vocab", self.vocab.end_id):
                        st.finished = True
                        continue
                    st.emitted.append(tok)
                    if t + 1 < t_max:
                        if tok[0] == "vocab":
                            prev_vocab[i, t + 1] = tok[1]
                        else:
                            prev_vocab[i, t + 1] = 0
                            prev_ocr[i, t + 1] = tok[1]
                    if st.step >= t_max:
                        st.finished = True
                if all(st.finished for st in states):
                    break
        results = []
        for i, st in enumerate(states):
            words, sources = [], []
            for kind, idx in st.emitted:
                if kind == "vocab":
                    words.append(self.vocab.itos[idx])
                    sources.append("vocab")
                else:
                    words.append(batch.ocr_texts[i][idx])
                    sources.append(f"ocr:{idx}")
            results.append(DecodeResult(words, sources, list(st.emitted)))
        return results

    # -- training --------------------------------------------------------
    def fit_pairs(self, scenes, primary, targets, max_iters: int, decay_steps=None,
                  log_every: int = 50, callback=None) -> list[tuple[int, float, float]]:
        """Adam training on (scene, primary words, target words) triples.

        Returns the loss curve as (iteration, loss, lr) rows.
        """
        cfg = self.cfg
        n = len(scenes)
        if n == 0:
            raise ValueError("no training examples")
        for p in self.params.values():
            p.requires_grad = True
        schedule = LrSchedule(cfg.lr, cfg.lr_decay_factor,
                              cfg.lr_decay_steps if decay_steps is None else decay_steps)
        opt = Adam(self.params, schedule)
        rng = np.random.default_rng(cfg.seed + 1)
        bs = min(cfg.batch_size, n)
        order = rng.permutation(n)
        pos = 0
        curve = []
        for it in range(max_iters):
            if pos + bs > n:
                order = rng.permutation(n)
                pos = 0
            idx = order[pos : pos + bs]
            pos += bs
            batch = self.encode([scenes[i] for i in idx], [primary[i] for i in idx])
            opt.zero_grad()
            loss, report = self.loss(batch, [targets[i] for i in idx], training=True, rng=rng)
            if not np.isfinite(report.total):
                raise DivergenceError(f"non-finite loss at iteration {it}")
            loss.backward()
            try:
                lr = opt.step(it)
            except DivergenceError as exc:
                raise DivergenceError(f"iteration {it}: {exc}") from exc
            if it % log_every == 0 or it == max_iters - 1:
                curve.append((it, report.total, lr))
                log.debug("iter %d loss %.5f lr %.2e", it, report.total, lr)
            if callback is not None:
                callback(it, report)
        return curve

    def mean_loss(self, scenes, primary, targets, batch_size: int = 64) -> float:
        """Dropout-free loss averaged over supervised steps of all examples."""
        total, steps = 0.0, 0
        with no_grad():
            for lo in range(0, len(scenes), batch_size):
                sl = slice(lo, lo + batch_size)
                batch = self.encode(scenes[sl], primary[sl])
                _, rep = self.loss(batch, targets[sl])
                total += rep.total * rep.supervised_steps
                steps += rep.supervised_steps
        return total / max(steps, 1)

    # -- persistence -----------------------------------------------------
    def to_bytes(self, extra_meta: dict | None = None) -> bytes:
        meta = {
            "config": self.cfg.to_dict(),
            "vocab": self.vocab.itos,
            "bigrams": list(self.vocab.bigrams),
            "modalities": list(self.modalities),
        }
        meta.update(extra_meta or {})
        return dumps_checkpoint({k: p.data for k, p in self.params.items()}, meta)

    @classmethod
    def from_bytes(cls, raw: bytes) -> tuple[PointerQAModel, dict]:
        params, meta = loads_checkpoint(raw)
        cfg = ModelConfig.from_dict(meta["config"])
        vocab = Vocabulary(meta["vocab"][len(SPECIALS):], meta["bigrams"])
        model = cls(cfg, vocab, meta["modalities"], init=False)
        model.params = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
        return model, meta
