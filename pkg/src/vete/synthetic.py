"""Synthetic caption/feature corpora with known ground truth.

Every word owns a ground-truth concept vector (a salience-scaled direction
near one of ``concepts`` axes). A caption draws its words from a small set of
concepts; its image feature is a fixed random linear map of the mean concept
vector of its words plus Gaussian noise. STS gold scores are cosines between
ground-truth caption vectors, so evaluation never depends on a trained model.
Salience varies across words by more than an order of magnitude: recovering
it requires learning how words combine, not only where each word points.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CaptionRecord, FeatureTable, write_captions, write_image_features
from .errors import ConfigError
from .evaluation import BinaryPairSet, StsDataset, write_binary_pairs, write_sts

CAPTIONS_FILE = "captions.tsv"
FEATURES_FILE = "features.vetf"
STS_FILE = "sts.tsv"
BINARY_FILE = "binary.tsv"


@dataclass(frozen=True)
class SyntheticSpec:
    vocab_size: int = 50
    concepts: int = 8
    caption_length: tuple[int, int] = (4, 8)
    n_examples: int = 2000
    feature_dim: int = 16
    noise_sigma: float = 0.05
    seed: int = 0
    concepts_per_caption: int = 2
    salience_range: tuple[float, float] = (0.2, 3.0)
    n_sts: int = 500
    n_binary: int = 500  # per class

    def __post_init__(self):
        if not self.vocab_size >= self.concepts >= 1:
            raise ConfigError("need vocab_size >= concepts >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.feature_dim < self.concepts:
            raise ConfigError("feature_dim must be >= concepts")
        lo, hi = self.caption_length
        if not 1 <= lo <= hi:
            raise ConfigError("caption_length must satisfy 1 <= min <= max")
        if not 1 <= self.concepts_per_caption <= self.concepts:
            raise ConfigError("concepts_per_caption must lie in [1, concepts]")
        if 2 * self.concepts_per_caption > self.concepts and self.n_binary > 0:
            raise ConfigError("unrelated binary pairs need two disjoint concept sets")
        if self.n_examples < 1:
            raise ConfigError("n_examples must be >= 1")
        s_lo, s_hi = self.salience_range
        if not 0 < s_lo <= s_hi:
            raise ConfigError("salience_range must satisfy 0 < lo <= hi")


def word_token(w):
    return f"w{w:03d}"


class SyntheticWorld:
    """Ground truth shared by all generated files for one seed."""

    def __init__(self, spec):
        self.spec = spec
        self.rng = rng = np.random.default_rng(spec.seed)
        k = spec.concepts
        self.word_concept = np.arange(spec.vocab_size) % k
        directions = np.eye(k)[self.word_concept] + 0.3 * rng.normal(size=(spec.vocab_size, k))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        lo, hi = spec.salience_range
        self.salience = np.exp(rng.uniform(np.log(lo), np.log(hi), size=spec.vocab_size))
        self.word_vectors = directions * self.salience[:, None]
        self.image_map = rng.normal(size=(spec.feature_dim, k)) / np.sqrt(k)
        self.words_by_concept = [np.flatnonzero(self.word_concept == c) for c in range(k)]

    def concept_set(self):
        return tuple(sorted(self.rng.choice(self.spec.concepts,
                                            size=self.spec.concepts_per_caption,
                                            replace=False).tolist()))

    def caption(self, concept_set):
        lo, hi = self.spec.caption_length
        length = int(self.rng.integers(lo, hi + 1))
        pool = np.concatenate([self.words_by_concept[c] for c in concept_set])
        return self.rng.choice(pool, size=length).tolist()

    def caption_vector(self, words):
        return self.word_vectors[words].mean(axis=0)

    def feature(self, words):
        clean = self.image_map @ self.caption_vector(words)
        return clean + self.spec.noise_sigma * self.rng.normal(size=self.spec.feature_dim)

    @staticmethod
    def text(words):
        return " ".join(word_token(w) for w in words)

    def other_set(self, concept_set, disjoint=False):
        while True:
            other = self.concept_set()
            if disjoint and set(other) & set(concept_set):
                continue
            if other != concept_set:
                return other

    def sts_pair_sets(self, base):
        mode = int(self.rng.integers(3))
        if mode == 0:
            return base
        if mode == 1 and len(base) > 1:
            keep = base[int(self.rng.integers(len(base)))]
            rest = [c for c in range(self.spec.concepts) if c not in base]
            if rest:
                swapped = [c for c in base if c != keep]
                swapped[0] = rest[int(self.rng.integers(len(rest)))]
                return tuple(sorted([keep] + swapped))
        return self.other_set(base)


def generate(spec):
    """Returns (records, feature_table, sts_dataset, binary_pair_set)."""
    world = SyntheticWorld(spec)
    records, ids, feats = [], [], []
    for n in range(spec.n_examples):
        words = world.caption(world.concept_set())
        image_id = f"img{n:06d}"
        records.append(CaptionRecord(image_id, world.text(words)))
        ids.append(image_id)
        feats.append(world.feature(words))
    table = FeatureTable(spec.feature_dim, ids, np.array(feats))

    sts_items = []
    for _ in range(spec.n_sts):
        base = world.concept_set()
        a = world.caption(base)
        b = world.caption(world.sts_pair_sets(base))
        va, vb = world.caption_vector(a), world.caption_vector(b)
        gold = float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))
        sts_items.append((world.text(a), world.text(b), round(gold, 6)))
    sts = StsDataset(sts_items, score_range=(-1.0, 1.0), name="synthetic-sts")

    binary_items = []
    for _ in range(spec.n_binary):
        base = world.concept_set()
        binary_items.append((world.text(world.caption(base)), world.text(world.caption(base)), 1))
    for _ in range(spec.n_binary):
        base = world.concept_set()
        other = world.other_set(base, disjoint=True)
        binary_items.append((world.text(world.caption(base)), world.text(world.caption(other)), 0))
    binary = BinaryPairSet(binary_items, name="synthetic-binary") if spec.n_binary else None
    return records, table, sts, binary


def generate_synthetic_dataset(spec, out_dir):
    """Write captions, features, STS and binary-pair files into ``out_dir``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, table, sts, binary = generate(spec)
    paths = {name: out / name for name in (CAPTIONS_FILE, FEATURES_FILE, STS_FILE, BINARY_FILE)}
    write_captions(records, paths[CAPTIONS_FILE])
    write_image_features(table, paths[FEATURES_FILE])
    write_sts(sts, paths[STS_FILE])
    if binary is not None:
        write_binary_pairs(binary, paths[BINARY_FILE])
    return paths
