"""Contrastive batches (correct pairs + deranged pairs) and correlation-style objectives.

Objectives return the quantity being *maximized* (rho, Cov, SKT) or, for the
rank loss, the hinge value being minimized. ``loss_and_grad`` turns any of
them into a minimization loss with its gradient w.r.t. the similarities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmall, ConfigError, DegenerateSimilarities

PEARSON = "PEARSON"
COVARIANCE = "COVARIANCE"
SKT = "SKT"
RANK = "RANK"
LOSS_KINDS = (PEARSON, COVARIANCE, SKT, RANK)


@dataclass(frozen=True)
class LossSpec:
    kind: str = PEARSON
    alpha: float | None = None
    gamma: float | None = None
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.kind == SKT:
            if self.alpha is None or self.alpha <= 0:
                raise ConfigError("SKT loss needs alpha > 0")
        elif self.alpha is not None:
            raise ConfigError(f"alpha is not applicable to {self.kind}")
        if self.kind == RANK:
            if self.gamma is None or self.gamma <= 0:
                raise ConfigError("rank loss needs margin gamma > 0")
        elif self.gamma is not None:
            raise ConfigError(f"gamma is not applicable to {self.kind}")
        if not 0 < self.epsilon <= 1e-3:
            raise ConfigError("epsilon must lie in (0, 1e-3]")

    @classmethod
    def create(cls, kind, alpha=1.0, gamma=0.2, epsilon=1e-8):
        kind = kind.upper()
        return cls(kind,
                   alpha=alpha if kind == SKT else None,
                   gamma=gamma if kind == RANK else None,
                   epsilon=epsilon)


@dataclass
class PairBatch:
    image_features: np.ndarray  # B x D
    sentence_ids: list          # B token-id sequences
    sigma: np.ndarray           # derangement of range(B)

    def __post_init__(self):
        B = len(self.sentence_ids)
        if B < 2:
            raise BatchTooSmall(f"batch size {B} < 2")
        if len(self.image_features) != B or len(self.sigma) != B:
            raise ValueError("images, sentences and sigma must have equal length")
        if np.any(self.sigma == np.arange(B)):
            raise ValueError("sigma has a fixed point")

    @property
    def size(self):
        return len(self.sentence_ids)

    @property
    def labels(self):
        B = self.size
        return np.concatenate([np.ones(B), -np.ones(B)])

    def pairs(self):
        """(image index, sentence index) for all 2B pairs, correct ones first."""
        B = self.size
        return [(i, i) for i in range(B)] + [(i, int(self.sigma[i])) for i in range(B)]


def random_derangement(n, rng):
    if n < 2:
        raise BatchTooSmall(f"no derangement of size {n}")
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


def make_contrastive_batch(images, sentences, rng):
    if len(sentences) < 2:
        raise BatchTooSmall(f"batch size {len(sentences)} < 2")
    return PairBatch(np.asarray(images, dtype=float), list(sentences),
                     random_derangement(len(sentences), rng))


def _centered(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length vectors of length >= 2")
    return x - x.mean(), y - y.mean()


def covariance_objective(sims, labels):
    xc, yc = _centered(sims, labels)
    return float(xc @ yc / len(xc))


def pearson_objective(sims, labels, epsilon=1e-8):
    xc, yc = _centered(sims, labels)
    n = len(xc)
    sx = np.sqrt(xc @ xc / n)
    sy = np.sqrt(yc @ yc / n)
    if sx < epsilon:
        raise DegenerateSimilarities(f"Std of similarities {sx:.3g} below {epsilon:g}")
    if sy < epsilon:
        raise DegenerateSimilarities("labels are constant")
    return float((xc @ yc / n) / (sx * sy))


def skt_objective(sims, labels, alpha):
    """tanh-smoothed Kendall tau averaged over unordered pairs i < j."""
    x = np.asarray(sims, dtype=float)
    y = np.asarray(labels, dtype=float)
    n = len(x)
    if n < 2 or y.shape != x.shape:
        raise ValueError("need two equal-length vectors of length >= 2")
    iu = np.triu_indices(n, k=1)
    dx = (x[:, None] - x[None, :])[iu]
    dy = (y[:, None] - y[None, :])[iu]
    return float(np.tanh(alpha * dx * dy).sum() / (n * (n - 1) / 2))


def rank_objective(sim_pos, sim_neg, gamma):
    pos = np.asarray(sim_pos, dtype=float)
    neg = np.asarray(sim_neg, dtype=float)
    if pos.shape != neg.shape or pos.size < 1:
        raise ValueError("sim_pos and sim_neg must be equal-length and non-empty")
    return float(np.maximum(0.0, gamma - pos + neg).mean())


def _pearson_grad(x, y, epsilon):
    xc, yc = _centered(x, y)
    n = len(xc)
    sx = np.sqrt(xc @ xc / n)
    sy = np.sqrt(yc @ yc / n)
    if sx < epsilon:
        raise DegenerateSimilarities(f"Std of similarities {sx:.3g} below {epsilon:g}")
    if sy < epsilon:
        raise DegenerateSimilarities("labels are constant")
    cov = xc @ yc / n
    rho = cov / (sx * sy)
    # mean-centering terms vanish because xc and yc sum to zero
    drho = yc / (n * sx * sy) - cov * xc / (n * sx ** 3 * sy)
    return rho, drho


def _skt_grad(x, y, alpha):
    n = len(x)
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    t = np.tanh(alpha * dx * dy)
    pairs = n * (n - 1) / 2
    value = np.triu(t, k=1).sum() / pairs
    # each unordered pair contributes to both endpoints; the full matrix covers both orders
    grad = (alpha * (1.0 - t * t) * dy).sum(axis=1) / pairs
    return value, grad


def split_pos_neg(sims, labels):
    sims = np.asarray(sims, dtype=float)
    labels = np.asarray(labels)
    pos, neg = np.flatnonzero(labels > 0), np.flatnonzero(labels < 0)
    if len(pos) != len(neg):
        raise ValueError("rank loss needs as many positives as negatives")
    return pos, neg


def loss_and_grad(spec, sims, labels):
    """Minimization loss and its gradient w.r.t. ``sims``.

    Correlation objectives are negated; the rank hinge pairs the k-th positive
    with the k-th negative (in a PairBatch that is image i with S_i vs S_sigma(i)).
    """
    x = np.asarray(sims, dtype=float)
    y = np.asarray(labels, dtype=float)
    if spec.kind == PEARSON:
        rho, g = _pearson_grad(x, y, spec.epsilon)
        return -rho, -g
    if spec.kind == COVARIANCE:
        xc, yc = _centered(x, y)
        return -float(xc @ yc / len(x)), -yc / len(x)
    if spec.kind == SKT:
        value, g = _skt_grad(x, y, spec.alpha)
        return -float(value), -g
    pos, neg = split_pos_neg(x, y)
    hinge = spec.gamma - x[pos] + x[neg]
    active = (hinge > 0).astype(float) / len(pos)
    grad = np.zeros_like(x)
    grad[pos] = -active
    grad[neg] = active
    return float(np.maximum(0.0, hinge).mean()), grad


def loss_gradient(spec, sims, labels):
    return loss_and_grad(spec, sims, labels)[1]


def objective_value(spec, sims, labels):
    """The reported objective: rho / Cov / SKT (higher is better) or rank hinge (lower is better)."""
    if spec.kind == PEARSON:
        return pearson_objective(sims, labels, spec.epsilon)
    if spec.kind == COVARIANCE:
        return covariance_objective(sims, labels)
    if spec.kind == SKT:
        return skt_objective(sims, labels, spec.alpha)
    pos, neg = split_pos_neg(sims, labels)
    x = np.asarray(sims, dtype=float)
    return rank_objective(x[pos], x[neg], spec.gamma)
