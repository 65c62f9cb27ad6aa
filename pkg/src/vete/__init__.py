"""Visually enhanced text embeddings: sentence encoders trained to correlate
text/image cosine similarities with match labels."""

from .contrastive import LossSpec, PairBatch, make_contrastive_batch
from .corpus import CaptionRecord, FeatureTable, SplitSpec, Vocabulary, tokenize
from .encoders import EncoderSpec
from .optim import HyperParams, TrainingSet, VeteModel, train, train_word_level

__version__ = "0.1.0"

__all__ = [
    "CaptionRecord",
    "EncoderSpec",
    "FeatureTable",
    "HyperParams",
    "LossSpec",
    "PairBatch",
    "SplitSpec",
    "TrainingSet",
    "VeteModel",
    "Vocabulary",
    "make_contrastive_batch",
    "tokenize",
    "train",
    "train_word_level",
]
