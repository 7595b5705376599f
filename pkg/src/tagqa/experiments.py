"""End-to-end augmentation experiments at desk scale.

One run per seed: synthesize a corpus, train the generator on the original
pairs, augment the training split, train the answering model on original
and augmented corpora and evaluate both on the validation split.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ModelConfig
from .synth import synth_generate
from .tag import TagGenerator
from .vqa import TextVqaModel, evaluate

log = logging.getLogger(__name__)

# Table rows of the modality ablation: answer words are always present.
MODALITY_ROWS = (
    ("answer",),
    ("answer", "obj"),
    ("answer", "ocr"),
    ("answer", "obj", "ocr"),
)
SELECTION_ROWS = ("random", "largest", "top3", "top5")


@dataclass(frozen=True)
class ExperimentSettings:
    """Corpus size and schedules; caps sized to the synthetic scenes."""

    n_scenes: int = 1000
    sparsity: float = 0.4
    base: ModelConfig = field(default_factory=lambda: ModelConfig(k_cap=24, m_cap=4, n_cap=10))
    tag_t_cap: int = 8
    tag_iters: int = 1000
    vqa_t_cap: int = 3
    vqa_iters: int = 600

    def tag_config(self, seed: int) -> ModelConfig:
        return self.base.with_(t_cap=self.tag_t_cap, max_iters=self.tag_iters, seed=seed,
                               lr_decay_steps=_decay(self.tag_iters))

    def vqa_config(self, seed: int) -> ModelConfig:
        return self.base.with_(t_cap=self.vqa_t_cap, max_iters=self.vqa_iters, seed=seed,
                               lr_decay_steps=_decay(self.vqa_iters))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base"] = self.base.to_dict()
        return d


def _decay(iters: int) -> tuple[int, int]:
    # same 60% / 80% shape as the 2K default schedule
    return (iters * 3 // 5, iters * 4 // 5)


@dataclass
class RunResult:
    seed: int
    corpus: str  # "original" or "<strategy>/<modalities>"
    accuracy: float
    anls: float
    n_pairs: int
    vqa_iters: int
    manifest: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"seed": self.seed, "corpus": self.corpus, "accuracy": self.accuracy,
                "anls": self.anls, "n_pairs": self.n_pairs, "vqa_iters": self.vqa_iters}


class Experiment:
    """Caches corpora, generators and baseline scores per seed."""

    def __init__(self, settings: ExperimentSettings | None = None):
        self.settings = settings or ExperimentSettings()
        self._corpora = {}
        self._tags = {}
        self._baseline = {}
        self._augmented = {}

    def corpus(self, seed: int):
        if seed not in self._corpora:
            s = self.settings
            self._corpora[seed] = synth_generate(seed, s.n_scenes, annotation_sparsity=s.sparsity)
        return self._corpora[seed]

    def generator(self, seed: int, modalities=("obj", "ocr")) -> TagGenerator:
        key = (seed, tuple(sorted(modalities)))
        if key not in self._tags:
            t0 = time.perf_counter()
            cfg = self.settings.tag_config(seed)
            self._tags[key] = TagGenerator.from_config(cfg, modalities=modalities).fit(self.corpus(seed).train)
            log.info("seed %d: generator %s trained in %.1fs", seed, key[1], time.perf_counter() - t0)
        return self._tags[key]

    def _train_eval(self, seed: int, scenes, name: str, manifest=None) -> RunResult:
        t0 = time.perf_counter()
        model = TextVqaModel.from_config(self.settings.vqa_config(seed)).fit(scenes)
        report = evaluate(model, self.corpus(seed).val)
        log.info("seed %d: %s acc %.4f anls %.4f (%.1fs)", seed, name, report.accuracy,
                 report.anls, time.perf_counter() - t0)
        n_pairs = sum(len(s.qa_pairs) for s in scenes)
        return RunResult(seed, name, report.accuracy, report.anls, n_pairs, model.n_iters_, manifest or {})

    def original(self, seed: int) -> RunResult:
        if seed not in self._baseline:
            self._baseline[seed] = self._train_eval(seed, self.corpus(seed).train, "original")
        return self._baseline[seed]

    def augmented(self, seed: int, strategy: str = "largest", modalities=("obj", "ocr")) -> RunResult:
        key = (seed, strategy, tuple(sorted(modalities)))
        if key not in self._augmented:
            tag = self.generator(seed, modalities)
            aug = tag.augment(self.corpus(seed).train, strategy)
            name = f"{strategy}/{'+'.join(('answer',) + tuple(modalities))}"
            self._augmented[key] = self._train_eval(seed, aug.scenes, name, aug.manifest)
        return self._augmented[key]


def central_claim(seeds=(0, 1, 2), settings=None, experiment=None) -> list[RunResult]:
    """Original-only against largest-strategy augmentation, per seed."""
    exp = experiment or Experiment(settings)
    out = []
    for seed in seeds:
        out.append(exp.original(seed))
        out.append(exp.augmented(seed, "largest"))
    return out


def selection_ablation(seeds=(0, 1, 2), strategies=SELECTION_ROWS, settings=None, experiment=None):
    exp = experiment or Experiment(settings)
    return [exp.augmented(seed, strat) for strat in strategies for seed in seeds]


def modality_ablation(seeds=(0, 1, 2), rows=MODALITY_ROWS, settings=None, experiment=None):
    exp = experiment or Experiment(settings)
    return [exp.augmented(seed, "largest", tuple(m for m in row if m != "answer"))
            for row in rows for seed in seeds]


def mean_by_corpus(results) -> dict[str, float]:
    groups: dict[str, list[float]] = {}
    for r in results:
        groups.setdefault(r.corpus, []).append(r.accuracy)
    return {k: float(np.mean(v)) for k, v in groups.items()}
