"""Estimator plumbing shared by the generator and the answering model."""
from __future__ import annotations

import hashlib

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import ModelConfig
from .model import PointerQAModel
from .scene import Scene, validate_scene


class LeakageError(RuntimeError):
    """A held-out split was passed where only training data is allowed."""


def check_scenes(scenes, cfg: ModelConfig | None = None) -> list[Scene]:
    """Validate a scene collection, raising on the first invalid scene."""
    scenes = list(scenes)
    seen = set()
    for s in scenes:
        if not isinstance(s, Scene):
            raise TypeError(f"expected Scene, got {type(s).__name__}")
        res = validate_scene(s, appearance_dim=cfg.appearance_dim if cfg else None)
        if not res.ok:
            raise ValueError(f"scene {s.image_id!r}: " + "; ".join(res.errors))
        if s.image_id in seen:
            raise ValueError(f"duplicate image_id {s.image_id!r}")
        seen.add(s.image_id)
    return scenes


def check_training_split(split: str) -> None:
    if split != "train":
        raise LeakageError(f"refusing to train or augment on the {split!r} split")


class PointerEstimator(BaseEstimator):
    """Hyper-parameters common to both estimators; subclasses add their own."""

    def _config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d, layers=self.layers, heads=self.heads,
            k_cap=self.k_cap, m_cap=self.m_cap, n_cap=self.n_cap, t_cap=self.t_cap,
            dropout=self.dropout, lr=self.lr, batch_size=self.batch_size,
            max_iters=self.max_iters, lr_decay_steps=tuple(self.lr_decay_steps),
            lr_decay_factor=self.lr_decay_factor, seed=self.seed,
        )

    @classmethod
    def from_config(cls, cfg: ModelConfig, **kwargs):
        keys = ("d", "layers", "heads", "k_cap", "m_cap", "n_cap", "t_cap", "dropout", "lr",
                "batch_size", "max_iters", "lr_decay_steps", "lr_decay_factor", "seed")
        params = {k: getattr(cfg, k) for k in keys}
        params.update(kwargs)
        return cls(**params)

    def _check_fitted(self) -> PointerQAModel:
        check_is_fitted(self, "model_")
        return self.model_

    def checkpoint_bytes(self) -> bytes:
        return self._check_fitted().to_bytes({"estimator": type(self).__name__})

    def checkpoint_id(self) -> str:
        return hashlib.sha256(self.checkpoint_bytes()).hexdigest()[:16]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.checkpoint_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            model, meta = PointerQAModel.from_bytes(fh.read())
        est = cls.from_config(model.cfg)
        est._restore(model, meta)
        return est

    def _restore(self, model: PointerQAModel, meta: dict) -> None:
        self.model_ = model
        self.vocab_ = model.vocab
