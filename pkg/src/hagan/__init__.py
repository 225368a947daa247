"""Hierarchical-attention GAN for cross-domain sentiment classification, built on a small numpy autodiff engine."""

from .corpus import Corpus, Document, SynthConfig, generate_synthetic, load_corpus
from .trainer import Model, TrainConfig, build_model, evaluate, train

__all__ = ["Corpus", "Document", "SynthConfig", "generate_synthetic", "load_corpus",
           "Model", "TrainConfig", "build_model", "evaluate", "train"]
__version__ = "0.1.0"
