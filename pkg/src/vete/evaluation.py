"""STS-style and binary caption-pair evaluation of sentence embeddings."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DataError,
    DegenerateInput,
    EmptyReport,
    EvaluationImpossible,
    FormatError,
    TooFewPairs,
    VeteError,
)
from .encoders import cosine_similarity


@dataclass
class StsDataset:
    items: list  # (sentence_a, sentence_b, gold)
    score_range: tuple | None = None
    name: str = "sts"

    def __post_init__(self):
        if not self.items:
            raise DataError(f"{self.name}: STS dataset is empty")
        golds = [g for _, _, g in self.items]
        if self.score_range is None:
            self.score_range = (min(golds), max(golds))
        lo, hi = self.score_range
        if any(not lo <= g <= hi for g in golds):
            raise DataError(f"{self.name}: gold score outside {self.score_range}")


@dataclass
class BinaryPairSet:
    items: list  # (sentence_a, sentence_b, label in {0, 1})
    name: str = "binary"

    def __post_init__(self):
        labels = {lab for _, _, lab in self.items}
        if not labels <= {0, 1}:
            raise DataError(f"{self.name}: labels must be 0 or 1")
        if labels != {0, 1}:
            raise DataError(f"{self.name}: both classes must be present")


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # (dataset, metric, value)

    def add(self, dataset, metric, value):
        self.rows.append((dataset, metric, float(value)))

    def value(self, dataset, metric):
        for d, m, v in self.rows:
            if d == dataset and m == metric:
                return v
        raise KeyError((dataset, metric))

    def to_tsv(self):
        lines = ["dataset\tmetric\tvalue"]
        lines += [f"{d}\t{m}\t{v!r}" for d, m, v in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_tsv(), encoding="utf-8")


# --- file formats --------------------------------------------------------------

def _read_triples(path, parse_first):
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                first = parse_first(parts[0])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad score {parts[0]!r}") from None
            items.append((parts[1], parts[2], first))
    return items


def read_sts(path, score_range=None):
    """``gold<TAB>sentence_a<TAB>sentence_b`` per line."""
    return StsDataset(_read_triples(path, float), score_range, name=Path(path).stem)


def read_binary_pairs(path):
    """``label<TAB>sentence_a<TAB>sentence_b`` per line, label 0 or 1."""
    return BinaryPairSet(_read_triples(path, int), name=Path(path).stem)


def read_eval_dataset(path):
    """Binary if every score is 0/1 integer-formatted, STS otherwise."""
    items = _read_triples(path, str)
    if items and all(s in ("0", "1") for _, _, s in items):
        return read_binary_pairs(path)
    return read_sts(path)


def write_sts(ds, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b, gold in ds.items:
            fh.write(f"{gold!r}\t{a}\t{b}\n")


def write_binary_pairs(ds, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b, label in ds.items:
            fh.write(f"{label}\t{a}\t{b}\n")


# --- metrics -------------------------------------------------------------------

def pearson(x, y):
    """Population-moment Pearson correlation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise DegenerateInput("pearson correlation of a constant vector")
    return float(np.clip(xc @ yc / (sx * sy), -1.0, 1.0))


def auc(scores, labels):
    """ROC AUC as the Mann-Whitney rank statistic; ties count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInput("AUC needs both classes")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def average_scores(scores):
    scores = list(scores)
    if not scores:
        raise EmptyReport("no scores to average")
    return float(np.mean(scores))


# --- model-based scoring ----------------------------------------------------

def sentence_similarity(model, a, b):
    return cosine_similarity(model.encode_text(a), model.encode_text(b))


def score_pairs(model, pairs):
    """Similarity per (a, b) pair; pairs that fail to encode score 0. Returns (sims, n_failed)."""
    cache = {}

    def embed(text):
        if text not in cache:
            try:
                cache[text] = model.encode_text(text)
            except VeteError:
                cache[text] = None
        return cache[text]

    sims = np.zeros(len(pairs))
    failed = 0
    for k, (a, b) in enumerate(pairs):
        va, vb = embed(a), embed(b)
        try:
            if va is None or vb is None:
                raise DegenerateInput("unencodable sentence")
            sims[k] = cosine_similarity(va, vb)
        except VeteError:
            failed += 1
    return sims, failed


def sts_scores(model, ds):
    sims, failed = score_pairs(model, [(a, b) for a, b, _ in ds.items])
    if failed == len(ds.items):
        raise EvaluationImpossible(f"{ds.name}: no item could be encoded")
    return sims, failed


def eval_sts(model, ds):
    sims, _ = sts_scores(model, ds)
    return pearson(sims, [g for _, _, g in ds.items])


def eval_binary_pairs(model, ds):
    """(Pearson against labels mapped to -1/+1, AUC)."""
    sims, failed = score_pairs(model, [(a, b) for a, b, _ in ds.items])
    if failed == len(ds.items):
        raise EvaluationImpossible(f"{ds.name}: no item could be encoded")
    labels = np.array([lab for _, _, lab in ds.items])
    return pearson(sims, 2.0 * labels - 1.0), auc(sims, labels)


def evaluate(model, datasets):
    """Score every dataset; returns an EvalReport with pearson (and auc, failed) rows."""
    report = EvalReport()
    for ds in datasets:
        if isinstance(ds, BinaryPairSet):
            sims, failed = score_pairs(model, [(a, b) for a, b, _ in ds.items])
            if failed == len(ds.items):
                raise EvaluationImpossible(f"{ds.name}: no item could be encoded")
            labels = np.array([lab for _, _, lab in ds.items])
            report.add(ds.name, "pearson", pearson(sims, 2.0 * labels - 1.0))
            report.add(ds.name, "auc", auc(sims, labels))
        else:
            sims, failed = sts_scores(model, ds)
            report.add(ds.name, "pearson", pearson(sims, [g for _, _, g in ds.items]))
        report.add(ds.name, "failed", failed)
    pearsons = [v for _, m, v in report.rows if m == "pearson"]
    if pearsons:
        report.add("average", "pearson", average_scores(pearsons))
    return report


def validation_score(model, datasets):
    """Mean Pearson over the validation datasets (the model-selection metric)."""
    scores = []
    for ds in datasets:
        if isinstance(ds, BinaryPairSet):
            scores.append(eval_binary_pairs(model, ds)[0])
        else:
            scores.append(eval_sts(model, ds))
    return average_scores(scores)


# --- binary pair construction ------------------------------------------------

def build_binary_pair_set(records, n_pos, n_neg, seed, name="binary"):
    """Sample caption pairs from a multi-caption split.

    Positives share an image, negatives do not; pairs are unordered and unique.
    """
    rng = np.random.default_rng(seed)
    by_image = {}
    for k, rec in enumerate(records):
        by_image.setdefault(rec.image_id, []).append(k)
    related = [pair for idxs in by_image.values()
               for pair in itertools.combinations(idxs, 2)]
    if n_pos > len(related):
        raise TooFewPairs(f"requested {n_pos} related pairs, only {len(related)} exist")
    n = len(records)
    n_unrelated = n * (n - 1) // 2 - len(related)
    if n_neg > n_unrelated:
        raise TooFewPairs(f"requested {n_neg} unrelated pairs, only {n_unrelated} exist")
    pos = [related[k] for k in sorted(rng.choice(len(related), size=n_pos, replace=False))]
    neg, seen = [], set()
    if n_neg > n_unrelated // 2:
        # dense regime: enumerate and sample without replacement
        pool = [(i, j) for i, j in itertools.combinations(range(n), 2)
                if records[i].image_id != records[j].image_id]
        neg = [pool[k] for k in sorted(rng.choice(len(pool), size=n_neg, replace=False))]
    else:
        while len(neg) < n_neg:
            i, j = sorted(rng.choice(n, size=2, replace=False).tolist())
            if records[i].image_id == records[j].image_id or (i, j) in seen:
                continue
            seen.add((i, j))
            neg.append((i, j))
    items = [(records[i].caption, records[j].caption, 1) for i, j in pos]
    items += [(records[i].caption, records[j].caption, 0) for i, j in neg]
    return BinaryPairSet(items, name=name)
