"""Training objectives for the relevance scorer, with analytic gradients.

All losses are pure functions of a :class:`LossBatch`. The components:

* ``l1`` — softmax loss over the relevant tables plus the boundary token,
  pushing relevant logits above the boundary logit.
* ``l2`` — softmax loss treating the boundary token as the correct class
  among the irrelevant tables, pushing their logits below it.
* ``at`` — ``alpha * l1 + beta * l2``.
* ``rc`` — mean binary cross-entropy of per-table logits against relevance
  labels (absolute calibration; not shift-invariant).
* ``sg`` — contrastive embedding loss over all unordered table pairs:
  squared distance for same-group pairs, squared hinge ``max(0, m - d)^2``
  for different-group pairs.
* ``atr`` — ``at + lambda_rc * rc + gamma_sg * sg``.

Everything is computed in numerically stable form (max-subtracted
log-sum-exp, softplus-based cross-entropy): no NaN/Inf for logits within
[-100, 100]. Gradients are derived by hand — they exist to certify the
formulas against central finite differences, so reusing autodiff would make
the check circular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InputError

COMPONENTS = ("l1", "l2", "at", "rc", "sg", "atr")


@dataclass(frozen=True)
class LossWeights:
    """Component weights; defaults follow the engine configuration."""

    alpha: float = 0.8
    beta: float = 0.03
    lambda_rc: float = 0.13
    gamma_sg: float = 0.04
    margin: float = 1.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "lambda_rc", "gamma_sg"):
            if getattr(self, name) < 0:
                raise InputError(f"loss weight {name} must be non-negative")
        if self.margin <= 0:
            raise InputError("margin must be positive")


@dataclass(frozen=True)
class LossBatch:
    """Logits, labels, and optional embeddings for one training instance."""

    table_logits: tuple[float, ...]
    threshold_logit: float
    relevance: tuple[bool, ...]
    embeddings: tuple[tuple[float, ...], ...] | None = None
    group_labels: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not self.table_logits:
            raise InputError("loss batch needs at least one table")
        if len(self.relevance) != len(self.table_logits):
            raise InputError("relevance labels not parallel to table logits")
        if not all(math.isfinite(v) for v in self.table_logits) or not math.isfinite(self.threshold_logit):
            raise InputError("loss batch contains a non-finite logit")
        if self.embeddings is not None:
            if len(self.embeddings) != len(self.table_logits):
                raise InputError("embeddings not parallel to table logits")
            dims = {len(e) for e in self.embeddings}
            if len(dims) > 1:
                raise InputError("embeddings have mismatched dimensions")
        if self.group_labels is not None and len(self.group_labels) != len(self.table_logits):
            raise InputError("group labels not parallel to table logits")

    @classmethod
    def create(
        cls,
        table_logits: Sequence[float],
        threshold_logit: float,
        relevance: Sequence[bool],
        embeddings: Sequence[Sequence[float]] | None = None,
        group_labels: Sequence[int] | None = None,
    ) -> "LossBatch":
        return cls(
            table_logits=tuple(float(v) for v in table_logits),
            threshold_logit=float(threshold_logit),
            relevance=tuple(bool(b) for b in relevance),
            embeddings=None if embeddings is None else tuple(tuple(float(x) for x in e) for e in embeddings),
            group_labels=None if group_labels is None else tuple(int(g) for g in group_labels),
        )


@dataclass
class LossGradient:
    """Partial derivatives w.r.t. table logits, boundary logit, embeddings."""

    table_logits: list[float]
    threshold_logit: float
    embeddings: list[np.ndarray] | None = None


def _logsumexp(values: Sequence[float]) -> float:
    m = max(values)
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def _softplus(x: float) -> float:
    # log(1 + e^x) without overflow
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _positives(batch: LossBatch) -> list[int]:
    return [i for i, rel in enumerate(batch.relevance) if rel]


def _negatives(batch: LossBatch) -> list[int]:
    return [i for i, rel in enumerate(batch.relevance) if not rel]


def loss_l1(batch: LossBatch) -> float:
    """Softmax loss over relevant tables and the boundary token (>= 0)."""
    pos = _positives(batch)
    if not pos:
        raise InputError("l1 undefined: batch has no relevant table")
    pool = [batch.table_logits[i] for i in pos] + [batch.threshold_logit]
    z = _logsumexp(pool)
    return math.fsum(z - batch.table_logits[i] for i in pos)


def loss_l2(batch: LossBatch) -> float:
    """Boundary-as-correct-class softmax loss over irrelevant tables (>= 0)."""
    neg = _negatives(batch)
    if not neg:
        return 0.0
    pool = [batch.table_logits[i] for i in neg] + [batch.threshold_logit]
    return _logsumexp(pool) - batch.threshold_logit


def _l1_applicable(batch: LossBatch) -> bool:
    return any(batch.relevance)


def _sg_applicable(batch: LossBatch) -> bool:
    return (
        batch.embeddings is not None
        and batch.group_labels is not None
        and len(batch.embeddings) >= 2
    )


def loss_at(batch: LossBatch, weights: LossWeights) -> float:
    """Weighted sum ``alpha * l1 + beta * l2``.

    In composites, a component whose precondition the batch does not meet
    contributes 0 instead of erroring (a batch without relevant tables still
    trains on ``l2``); standalone component calls keep their domain errors.
    """
    total = 0.0
    if weights.alpha != 0.0 and _l1_applicable(batch):
        total += weights.alpha * loss_l1(batch)
    if weights.beta != 0.0:
        total += weights.beta * loss_l2(batch)
    return total


def loss_rc(batch: LossBatch) -> float:
    """Mean stable binary cross-entropy of table logits vs relevance bits."""
    n = len(batch.table_logits)
    total = math.fsum(
        _softplus(-l) if rel else _softplus(l)
        for l, rel in zip(batch.table_logits, batch.relevance)
    )
    return total / n


def loss_sg(batch: LossBatch, weights: LossWeights) -> float:
    """Contrastive pairwise embedding loss (mean over unordered pairs)."""
    if batch.embeddings is None or batch.group_labels is None or len(batch.embeddings) < 2:
        raise InputError("sg needs at least 2 tables with embeddings and group labels")
    vecs = [np.asarray(e, dtype=np.float64) for e in batch.embeddings]
    m = weights.margin
    terms = []
    n = len(vecs)
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(vecs[i] - vecs[j]))
            if batch.group_labels[i] == batch.group_labels[j]:
                terms.append(d * d)
            else:
                gap = max(0.0, m - d)
                terms.append(gap * gap)
    return math.fsum(terms) / len(terms)


def loss_atr(batch: LossBatch, weights: LossWeights) -> float:
    """Composite objective ``at + lambda_rc * rc + gamma_sg * sg``.

    Zero-weight components are skipped; a nonzero-weight component whose
    precondition the batch does not meet (no relevant tables for ``l1``,
    fewer than two embedded tables for ``sg``) contributes 0.
    """
    total = loss_at(batch, weights)
    if weights.lambda_rc != 0.0:
        total += weights.lambda_rc * loss_rc(batch)
    if weights.gamma_sg != 0.0 and _sg_applicable(batch):
        total += weights.gamma_sg * loss_sg(batch, weights)
    return total


def _zero_gradient(batch: LossBatch) -> LossGradient:
    emb = None
    if batch.embeddings is not None:
        emb = [np.zeros(len(e), dtype=np.float64) for e in batch.embeddings]
    return LossGradient(
        table_logits=[0.0] * len(batch.table_logits), threshold_logit=0.0, embeddings=emb
    )


def _grad_l1(batch: LossBatch) -> LossGradient:
    pos = _positives(batch)
    if not pos:
        raise InputError("l1 undefined: batch has no relevant table")
    grad = _zero_gradient(batch)
    pool = [batch.table_logits[i] for i in pos] + [batch.threshold_logit]
    z = _logsumexp(pool)
    k = len(pos)
    for i in pos:
        grad.table_logits[i] = k * math.exp(batch.table_logits[i] - z) - 1.0
    grad.threshold_logit = k * math.exp(batch.threshold_logit - z)
    return grad


def _grad_l2(batch: LossBatch) -> LossGradient:
    grad = _zero_gradient(batch)
    neg = _negatives(batch)
    if not neg:
        return grad
    pool = [batch.table_logits[i] for i in neg] + [batch.threshold_logit]
    z = _logsumexp(pool)
    for i in neg:
        grad.table_logits[i] = math.exp(batch.table_logits[i] - z)
    grad.threshold_logit = math.exp(batch.threshold_logit - z) - 1.0
    return grad


def _grad_rc(batch: LossBatch) -> LossGradient:
    grad = _zero_gradient(batch)
    n = len(batch.table_logits)
    for i, (l, rel) in enumerate(zip(batch.table_logits, batch.relevance)):
        grad.table_logits[i] = (_sigmoid(l) - (1.0 if rel else 0.0)) / n
    return grad


def _grad_sg(batch: LossBatch, weights: LossWeights) -> LossGradient:
    if batch.embeddings is None or batch.group_labels is None or len(batch.embeddings) < 2:
        raise InputError("sg needs at least 2 tables with embeddings and group labels")
    grad = _zero_gradient(batch)
    assert grad.embeddings is not None
    vecs = [np.asarray(e, dtype=np.float64) for e in batch.embeddings]
    n = len(vecs)
    n_pairs = n * (n - 1) // 2
    m = weights.margin
    for i in range(n):
        for j in range(i + 1, n):
            diff = vecs[i] - vecs[j]
            d = float(np.linalg.norm(diff))
            if batch.group_labels[i] == batch.group_labels[j]:
                g = 2.0 * diff / n_pairs
            elif 0.0 < d < m:
                g = (-2.0 * (m - d) / d) * diff / n_pairs
            else:
                # hinge inactive (d >= m), or coincident vectors (d == 0,
                # subgradient 0)
                continue
            grad.embeddings[i] += g
            grad.embeddings[j] -= g
    return grad


def _combine(batch: LossBatch, parts: list[tuple[float, LossGradient]]) -> LossGradient:
    out = _zero_gradient(batch)
    for weight, g in parts:
        for i, v in enumerate(g.table_logits):
            out.table_logits[i] += weight * v
        out.threshold_logit += weight * g.threshold_logit
        if g.embeddings is not None and out.embeddings is not None:
            for i, e in enumerate(g.embeddings):
                out.embeddings[i] += weight * e
    return out


def grad_loss(batch: LossBatch, weights: LossWeights, which: str) -> LossGradient:
    """Analytic gradient of the selected component w.r.t. all parameters."""
    if which == "l1":
        return _grad_l1(batch)
    if which == "l2":
        return _grad_l2(batch)
    if which == "rc":
        return _grad_rc(batch)
    if which == "sg":
        return _grad_sg(batch, weights)
    if which == "at":
        parts = []
        if weights.alpha != 0.0 and _l1_applicable(batch):
            parts.append((weights.alpha, _grad_l1(batch)))
        if weights.beta != 0.0:
            parts.append((weights.beta, _grad_l2(batch)))
        return _combine(batch, parts)
    if which == "atr":
        parts = []
        if weights.alpha != 0.0 and _l1_applicable(batch):
            parts.append((weights.alpha, _grad_l1(batch)))
        if weights.beta != 0.0:
            parts.append((weights.beta, _grad_l2(batch)))
        if weights.lambda_rc != 0.0:
            parts.append((weights.lambda_rc, _grad_rc(batch)))
        if weights.gamma_sg != 0.0 and _sg_applicable(batch):
            parts.append((weights.gamma_sg, _grad_sg(batch, weights)))
        return _combine(batch, parts)
    raise InputError(f"unknown loss component '{which}' (expected one of {COMPONENTS})")


def component_loss(batch: LossBatch, weights: LossWeights, which: str) -> float:
    """Value of the selected component."""
    if which == "l1":
        return loss_l1(batch)
    if which == "l2":
        return loss_l2(batch)
    if which == "rc":
        return loss_rc(batch)
    if which == "sg":
        return loss_sg(batch, weights)
    if which == "at":
        return loss_at(batch, weights)
    if which == "atr":
        return loss_atr(batch, weights)
    raise InputError(f"unknown loss component '{which}' (expected one of {COMPONENTS})")


def _perturbed(batch: LossBatch, kind: str, index: int, coord: int, delta: float) -> LossBatch:
    if kind == "logit":
        logits = list(batch.table_logits)
        logits[index] += delta
        return replace(batch, table_logits=tuple(logits))
    if kind == "threshold":
        return replace(batch, threshold_logit=batch.threshold_logit + delta)
    emb = [list(e) for e in batch.embeddings or ()]
    emb[index][coord] += delta
    return replace(batch, embeddings=tuple(tuple(e) for e in emb))


def finite_difference_check(
    batch: LossBatch,
    weights: LossWeights,
    h: float = 1e-5,
    which: str = "atr",
) -> float:
    """Worst disagreement between analytic and central-difference gradients.

    Every scalar parameter (each table logit, the boundary logit, each
    embedding coordinate) is perturbed by ``+-h``. The per-parameter error is
    relative with a unit floor: ``|a - n| / max(|a|, |n|, 1)``, so it reduces
    to absolute error at zero-gradient points.
    """
    if h <= 0:
        raise InputError("finite-difference step h must be positive")
    analytic = grad_loss(batch, weights, which)

    def central(kind: str, index: int = 0, coord: int = 0) -> float:
        plus = component_loss(_perturbed(batch, kind, index, coord, h), weights, which)
        minus = component_loss(_perturbed(batch, kind, index, coord, -h), weights, which)
        return (plus - minus) / (2.0 * h)

    def err(a: float, n: float) -> float:
        return abs(a - n) / max(abs(a), abs(n), 1.0)

    worst = 0.0
    for i in range(len(batch.table_logits)):
        worst = max(worst, err(analytic.table_logits[i], central("logit", i)))
    worst = max(worst, err(analytic.threshold_logit, central("threshold")))
    if batch.embeddings is not None and analytic.embeddings is not None:
        for i, e in enumerate(batch.embeddings):
            for c in range(len(e)):
                worst = max(worst, err(float(analytic.embeddings[i][c]), central("embedding", i, c)))
    return worst
