"""Downstream question-answering model and its evaluation report."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ._base import PointerEstimator, check_scenes, check_training_split
from .config import ModelConfig
from .embeddings import Vocabulary
from .metrics import anls_score, vqa_accuracy
from .model import PointerQAModel
from .scene import ORIGINAL

N_REFERENCES = 10


def scaled_schedule(max_iters: int, decay_steps, n_pairs: int, n_original: int):
    """Iterations and decay steps stretched by the pair-count ratio."""
    if n_original <= 0:
        raise ValueError("corpus has no original pairs")
    ratio = n_pairs / n_original
    return int(round(max_iters * ratio)), tuple(int(round(s * ratio)) for s in decay_steps)


class TextVqaModel(PointerEstimator):
    """Question -> answer pointer model over the same fusion and decoding stack.

    The text input is the question extended with object labels and OCR words.
    ``scale_iters`` stretches the schedule in proportion to the pair count
    relative to the original annotations.
    """

    def __init__(self, d=64, layers=2, heads=4, k_cap=40, m_cap=8, n_cap=12, t_cap=12,
                 dropout=0.1, lr=1e-3, batch_size=32, max_iters=2000,
                 lr_decay_steps=(1200, 1600), lr_decay_factor=0.1, seed=0,
                 scale_iters=True, log_every=50):
        self.d = d
        self.layers = layers
        self.heads = heads
        self.k_cap = k_cap
        self.m_cap = m_cap
        self.n_cap = n_cap
        self.t_cap = t_cap
        self.dropout = dropout
        self.lr = lr
        self.batch_size = batch_size
        self.max_iters = max_iters
        self.lr_decay_steps = lr_decay_steps
        self.lr_decay_factor = lr_decay_factor
        self.seed = seed
        self.scale_iters = scale_iters
        self.log_every = log_every

    @staticmethod
    def _examples(scenes, originals_only=False):
        rows = [(s, qa) for s in scenes for qa in s.qa_pairs
                if not originals_only or qa.provenance == ORIGINAL]
        return [s for s, _ in rows], [qa.question_words for _, qa in rows], [qa.answer_words for _, qa in rows]

    def fit(self, scenes, y=None, split: str = "train"):
        check_training_split(split)
        cfg = self._config()
        scenes = check_scenes(scenes, cfg)
        sc, questions, answers = self._examples(scenes)
        n_orig = sum(len(s.original_pairs()) for s in scenes)
        iters, decay = cfg.max_iters, cfg.lr_decay_steps
        if self.scale_iters:
            iters, decay = scaled_schedule(iters, decay, len(sc), n_orig)
        self.n_iters_ = iters
        self.decay_steps_ = decay
        self.vocab_ = Vocabulary.build(scenes)
        self.model_ = PointerQAModel(cfg, self.vocab_)
        self.loss_curve_ = self.model_.fit_pairs(sc, questions, answers, iters, decay,
                                                 log_every=self.log_every)
        return self

    def predict(self, scenes, batch_size: int = 128) -> list[str]:
        """One predicted answer per original QA pair, in corpus order."""
        model = self._check_fitted()
        sc, questions, _ = self._examples(scenes, originals_only=True)
        out = []
        for lo in range(0, len(sc), batch_size):
            batch = model.encode(sc[lo : lo + batch_size], questions[lo : lo + batch_size])
            out.extend(" ".join(r.words) for r in model.decode_greedy(batch))
        return out

    def score(self, scenes, y=None) -> float:
        return evaluate(self, scenes).accuracy


def train_vqa(corpus, config: ModelConfig, seed: int | None = None, **kwargs) -> TextVqaModel:
    if seed is not None:
        config = config.with_(seed=seed)
    return TextVqaModel.from_config(config, **kwargs).fit(corpus)


@dataclass
class EvalRecord:
    image_id: str
    question: str
    prediction: str
    references: list[str]
    accuracy: float
    anls: float


@dataclass
class EvalReport:
    accuracy: float
    anls: float
    n_examples: int
    records: list[EvalRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image_id", "question", "prediction", "accuracy", "anls"])
            for r in self.records:
                w.writerow([r.image_id, r.question, r.prediction, repr(r.accuracy), repr(r.anls)])


def report_from_predictions(scenes, predictions) -> EvalReport:
    """Score predictions against each original pair's answer replicated 10 times."""
    rows = [(s, qa) for s in scenes for qa in s.original_pairs()]
    if len(rows) != len(predictions):
        raise ValueError(f"{len(predictions)} predictions for {len(rows)} questions")
    records = []
    for (scene, qa), pred in zip(rows, predictions):
        refs = [qa.answer] * N_REFERENCES
        records.append(EvalRecord(scene.image_id, qa.question, pred, refs,
                                  vqa_accuracy(pred, refs), anls_score(pred, refs)))
    acc = float(np.mean([r.accuracy for r in records])) if records else 0.0
    anls = float(np.mean([r.anls for r in records])) if records else 0.0
    return EvalReport(acc, anls, len(records), records)


def evaluate(model: TextVqaModel, scenes) -> EvalReport:
    scenes = check_scenes(scenes)
    return report_from_predictions(scenes, model.predict(scenes))
