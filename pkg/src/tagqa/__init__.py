"""Text-aware question-answer generation for scene-text VQA, at desk scale."""

__version__ = "0.1.0"

from .config import ModelConfig, load_config, parse_config
from .metrics import anls_score, levenshtein, vqa_accuracy
from .scene import BBox, ObjectRegion, OcrToken, QAPair, Scene, load_corpus, save_corpus
from .synth import synth_generate
from .tag import AnswerSelectionStrategy, AugmentedDataset, TagGenerator, select_answers
from .vqa import EvalReport, TextVqaModel, evaluate, train_vqa

__all__ = [
    "AnswerSelectionStrategy", "AugmentedDataset", "BBox", "EvalReport", "ModelConfig",
    "ObjectRegion", "OcrToken", "QAPair", "Scene", "TagGenerator", "TextVqaModel",
    "anls_score", "evaluate", "levenshtein", "load_config", "load_corpus", "parse_config",
    "save_corpus", "select_answers", "synth_generate", "train_vqa", "vqa_accuracy",
]
