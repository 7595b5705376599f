"""Text-aware question generation and training-set augmentation.

``TagGenerator.fit`` learns answer -> question on the annotated pairs;
``transform`` picks answer candidates from each scene's OCR tokens,
generates a question for each and appends the accepted pairs.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from ._base import PointerEstimator, check_scenes, check_training_split
from .embeddings import Vocabulary
from .model import MODALITIES, PointerQAModel
from .scene import GENERATED, QAPair, Scene, ranked_ocr_tokens


# -- answer selection ----------------------------------------------------------
@dataclass(frozen=True)
class AnswerSelectionStrategy:
    variant: str = "largest"  # largest | random | top_k
    seed: int = 0
    k: int = 1

    def __post_init__(self):
        if self.variant not in ("largest", "random", "top_k"):
            raise ValueError(f"unknown answer selection strategy {self.variant!r}")
        if self.k < 1:
            raise ValueError("top_k needs k >= 1")

    @classmethod
    def parse(cls, spec, seed: int = 0) -> AnswerSelectionStrategy:
        """Accepts ``largest``, ``random``, ``random:<seed>``, ``top3``, ``top_k:<k>``."""
        if isinstance(spec, cls):
            return spec
        spec = str(spec).strip().lower()
        if spec == "largest":
            return cls("largest", seed)
        if spec.startswith("random"):
            _, _, s = spec.partition(":")
            return cls("random", int(s) if s else seed)
        if spec.startswith("top_k:") or spec.startswith("top-"):
            return cls("top_k", seed, int(spec.split(":" if ":" in spec else "-")[1]))
        if spec.startswith("top") and spec[3:].isdigit():
            return cls("top_k", seed, int(spec[3:]))
        raise ValueError(f"unknown answer selection strategy {spec!r}")

    def __str__(self) -> str:
        if self.variant == "top_k":
            return f"top{self.k}"
        if self.variant == "random":
            return f"random:{self.seed}"
        return "largest"


def _scene_rng(seed: int, image_id: str) -> np.random.Generator:
    h = int.from_bytes(hashlib.sha256(image_id.encode()).digest()[:8], "little")
    return np.random.default_rng([seed, h])


def select_answers(scene: Scene, strategy) -> list[int]:
    """OCR token indices to use as answer candidates (empty without scene text)."""
    strategy = AnswerSelectionStrategy.parse(strategy)
    if not scene.ocr_tokens:
        return []
    ranked = ranked_ocr_tokens(scene)
    if strategy.variant == "largest":
        return ranked[:1]
    if strategy.variant == "top_k":
        return ranked[: strategy.k]
    return [int(_scene_rng(strategy.seed, scene.image_id).integers(len(scene.ocr_tokens)))]


# -- generation ------------------------------------------------------------------
@dataclass
class Generation:
    image_id: str
    ocr_index: int
    answer: str
    pair: QAPair | None
    rejected: str | None  # "empty" | "duplicate" | None
    question_words: list[str] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)

    def dump_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "answer": self.answer,
            "generated_question": " ".join(self.question_words),
            "per_step_source": list(self.sources),
            "rejected": self.rejected,
        }


@dataclass
class AugmentedDataset:
    scenes: list[Scene]
    manifest: dict
    generations: list[Generation]

    @property
    def n_pairs(self) -> int:
        return sum(len(s.qa_pairs) for s in self.scenes)


class TagGenerator(PointerEstimator):
    """Answer-conditioned question generator over scene text, objects and OCR.

    ``modalities`` selects which of the object / OCR blocks feed the fusion
    transformer; the extended answer text is always present.
    """

    def __init__(self, d=64, layers=2, heads=4, k_cap=40, m_cap=8, n_cap=12, t_cap=12,
                 dropout=0.1, lr=1e-3, batch_size=32, max_iters=2000,
                 lr_decay_steps=(1200, 1600), lr_decay_factor=0.1, seed=0,
                 modalities=MODALITIES, strategy="largest", log_every=50):
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
        self.modalities = modalities
        self.strategy = strategy
        self.log_every = log_every

    @staticmethod
    def _examples(scenes):
        triples = [(s, qa.answer_words, qa.question_words) for s in scenes for qa in s.original_pairs()]
        return [t[0] for t in triples], [t[1] for t in triples], [t[2] for t in triples]

    def fit(self, scenes, y=None, split: str = "train"):
        """Train on the original QA pairs of a training split."""
        check_training_split(split)
        cfg = self._config()
        scenes = check_scenes(scenes, cfg)
        # output words come from questions; answer words are reached by pointing
        self.vocab_ = Vocabulary.build(scenes, sides=("question",))
        self.model_ = PointerQAModel(cfg, self.vocab_, self.modalities)
        sc, answers, questions = self._examples(scenes)
        self.loss_curve_ = self.model_.fit_pairs(sc, answers, questions, cfg.max_iters,
                                                 log_every=self.log_every)
        self.n_train_pairs_ = len(sc)
        return self

    def training_loss(self, scenes) -> float:
        sc, answers, questions = self._examples(scenes)
        return self._check_fitted().mean_loss(sc, answers, questions)

    def generate_questions(self, scenes, primary_words, batch_size: int = 64):
        """Greedy-decode one question per (scene, answer words) item."""
        model = self._check_fitted()
        out = []
        for lo in range(0, len(scenes), batch_size):
            batch = model.encode(scenes[lo : lo + batch_size], primary_words[lo : lo + batch_size])
            out.extend(model.decode_greedy(batch))
        return out

    def generate_pair(self, scene: Scene, ocr_index: int) -> Generation:
        return self._generate([(scene, ocr_index)])[0]

    def _generate(self, candidates) -> list[Generation]:
        scenes = [s for s, _ in candidates]
        answers = [(s.ocr_tokens[j].text,) for s, j in candidates]
        decoded = self.generate_questions(scenes, answers)
        gens = []
        for (scene, j), ans, res in zip(candidates, answers, decoded):
            originals = {qa.question for qa in scene.original_pairs()}
            question = " ".join(res.words)
            if not res.words:
                reason = "empty"
            elif question in originals:
                reason = "duplicate"
            else:
                reason = None
            pair = None
            if reason is None:
                pair = QAPair(tuple(res.words), ans, GENERATED, (j,))
            gens.append(Generation(scene.image_id, j, ans[0], pair, reason, list(res.words), list(res.sources)))
        return gens

    def augment(self, scenes, strategy=None, split: str = "train") -> AugmentedDataset:
        """Append generated pairs for the selected answers of every scene."""
        check_training_split(split)
        self._check_fitted()
        strategy = AnswerSelectionStrategy.parse(self.strategy if strategy is None else strategy, self.seed)
        scenes = check_scenes(scenes)
        candidates = [(s, j) for s in scenes for j in select_answers(s, strategy)]
        gens = self._generate(candidates)
        by_scene: dict[str, list[QAPair]] = {}
        for g in gens:
            if g.pair is not None:
                by_scene.setdefault(g.image_id, []).append(g.pair)
        out = [replace(s, qa_pairs=s.qa_pairs + tuple(by_scene.get(s.image_id, ()))) for s in scenes]

        original_answers = {qa.answer for s in scenes for qa in s.original_pairs()}
        accepted = [g for g in gens if g.pair is not None]
        copied = sum(g.answer in g.question_words for g in accepted)
        manifest = {
            "strategy": str(strategy),
            "seed": strategy.seed,
            "scenes": len(scenes),
            "candidates": len(gens),
            "generated": len(accepted),
            "rejected_empty": sum(g.rejected == "empty" for g in gens),
            "rejected_duplicate": sum(g.rejected == "duplicate" for g in gens),
            "original_pairs": sum(len(s.qa_pairs) for s in scenes),
            "augmented_pairs": sum(len(s.qa_pairs) for s in out),
            "novel_answer_texts": len({g.answer for g in accepted} - original_answers),
            "answer_copy_rate": copied / len(accepted) if accepted else 0.0,
            "checkpoint_id": self.checkpoint_id(),
        }
        return AugmentedDataset(out, manifest, gens)

    def transform(self, scenes):
        return self.augment(scenes).scenes

    def _restore(self, model, meta):
        super()._restore(model, meta)
        self.modalities = tuple(model.modalities)
