"""Loss heads with analytic gradients: SoftMax (plain and stable), center loss,
and the normalized facial-landmark distance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import TensorError

__all__ = [
    "softmax_loss",
    "softmax_stable",
    "center_loss",
    "center_update",
    "fp68_loss",
    "LossHead",
    "SoftMaxHead",
    "CenterLossHead",
    "Fp68Head",
    "make_loss_head",
]


def softmax_loss(scores, target: int):
    """Plain SoftMax loss: -ln p[target]; gradient p - q.

    Deliberately unguarded: very large scores overflow, which is what the
    stable variant exists to avoid.
    """
    y = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] < 2:
        raise TensorError("softmax needs a score vector of length >= 2")
    if not 0 <= target < y.shape[0]:
        raise TensorError(f"target {target} outside [0, {y.shape[0]})")
    z = np.exp(y)
    p = z / z.sum()
    with np.errstate(divide="ignore"):
        loss = -np.log(p[target])
    grad = p.copy()
    grad[target] -= 1.0
    return float(loss), grad


def softmax_stable(scores, target: int):
    """Stable SoftMax: scores conditioned by subtracting their maximum.

    Same loss value; the gradient is p - q with the argmax coordinate set to
    zero (ties broken at the lowest index).
    """
    y = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] < 2:
        raise TensorError("softmax needs a score vector of length >= 2")
    if not 0 <= target < y.shape[0]:
        raise TensorError(f"target {target} outside [0, {y.shape[0]})")
    am = int(np.argmax(y))
    ys = y - y[am]
    z = np.exp(ys)
    total = z.sum()
    loss = -(ys[target] - np.log(total))
    grad = z / total
    grad[target] -= 1.0
    grad[am] = 0.0
    return float(loss), grad


def center_loss(features, scores, targets, centers, lam: float,
                reduction: str = "sum"):
    """SoftMax loss plus lam * squared distance of features to class centers.

    Batched: features [B, F], scores [B, K], targets [B].  Returns
    (loss, grad wrt scores, grad wrt features).
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    c = np.asarray(centers, dtype=np.float64)
    if np.any(t < 0) or np.any(t >= c.shape[0]):
        raise TensorError(f"class index outside centers table of {c.shape[0]} rows")
    loss = 0.0
    g_scores = np.zeros_like(y)
    g_feat = np.zeros_like(x)
    for b in range(y.shape[0]):
        l_b, g_b = softmax_loss(y[b], int(t[b]))
        diff = x[b] - c[t[b]]
        loss += l_b + lam * float(diff @ diff)
        g_scores[b] = g_b
        g_feat[b] = 2.0 * lam * diff
    if reduction == "mean":
        n = y.shape[0]
        loss, g_scores, g_feat = loss / n, g_scores / n, g_feat / n
    return loss, g_scores, g_feat


def center_update(centers, features, targets, weight: float = 0.3):
    """Exponential moving average of class centers, one example at a time:
    C[t] <- (1 - weight) * C[t] + weight * x."""
    c = np.asarray(centers, dtype=np.float64).copy()
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    for b in range(x.shape[0]):
        c[t[b]] = (1.0 - weight) * c[t[b]] + weight * x[b]
    return c


def fp68_loss(predicted, ground_truth, left: int = 52, right: int = 20):
    """Mean landmark distance normalized by the interocular distance.

    predicted/ground_truth are [68, 2]; returns (loss, grad wrt predicted).
    Coincident points contribute a zero (sub)gradient.
    """
    mp = np.asarray(predicted, dtype=np.float64).reshape(68, 2)
    mg = np.asarray(ground_truth, dtype=np.float64).reshape(68, 2)
    inter = float(np.linalg.norm(mg[right] - mg[left]))
    if inter <= 0.0:
        raise TensorError("coincident ground-truth eye points")
    diff = mp - mg
    dist = np.linalg.norm(diff, axis=1)
    loss = float(dist.sum() / (68.0 * inter))
    grad = np.zeros_like(mp)
    nz = dist > 0
    grad[nz] = diff[nz] / dist[nz, None] / (68.0 * inter)
    return loss, grad


# -- graph-facing heads -------------------------------------------------------

class LossHead:
    """Maps labeled network outputs plus targets to (loss, gradient seeds)."""

    consumes: tuple[str, ...] = ()

    def __call__(self, outputs: dict[str, np.ndarray], targets) -> tuple[float, dict]:
        raise NotImplementedError


@dataclass
class SoftMaxHead(LossHead):
    label: str = "score"
    stable: bool = False
    reduction: str = "sum"

    def __post_init__(self):
        self.consumes = (self.label,)

    def __call__(self, outputs, targets):
        scores = np.atleast_2d(outputs[self.label])
        t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
        fn = softmax_stable if self.stable else softmax_loss
        total, grads = 0.0, np.zeros_like(scores)
        for b in range(scores.shape[0]):
            l_b, g_b = fn(scores[b], int(t[b]))
            total += l_b
            grads[b] = g_b
        if self.reduction == "mean":
            total, grads = total / scores.shape[0], grads / scores.shape[0]
        return total, {self.label: grads}


@dataclass
class CenterLossHead(LossHead):
    classes: int
    lam: float = 0.005
    ema_weight: float = 0.3
    score_label: str = "score"
    feature_label: str = "norm"
    reduction: str = "sum"
    centers: np.ndarray | None = None

    def __post_init__(self):
        self.consumes = (self.score_label, self.feature_label)

    def _ensure_centers(self, n_features: int):
        if self.centers is None:
            self.centers = np.zeros((self.classes, n_features))

    def __call__(self, outputs, targets):
        scores = np.atleast_2d(outputs[self.score_label])
        feats = np.atleast_2d(outputs[self.feature_label])
        self._ensure_centers(feats.shape[1])
        loss, g_scores, g_feats = center_loss(
            feats, scores, targets, self.centers, self.lam, self.reduction)
        return loss, {self.score_label: g_scores, self.feature_label: g_feats}

    def update_centers(self, outputs, targets):
        feats = np.atleast_2d(outputs[self.feature_label])
        self._ensure_centers(feats.shape[1])
        self.centers = center_update(self.centers, feats, targets, self.ema_weight)


@dataclass
class Fp68Head(LossHead):
    label: str = "landmarks"
    reduction: str = "sum"

    def __post_init__(self):
        self.consumes = (self.label,)

    def __call__(self, outputs, targets):
        pred = np.atleast_2d(outputs[self.label])
        gt = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        total, grads = 0.0, np.zeros_like(pred)
        for b in range(pred.shape[0]):
            l_b, g_b = fp68_loss(pred[b], gt[b])
            total += l_b
            grads[b] = g_b.reshape(-1)
        if self.reduction == "mean":
            total, grads = total / pred.shape[0], grads / pred.shape[0]
        return total, {self.label: grads}


def make_loss_head(reference: str, output_label: str, classes: int | None = None) -> LossHead:
    """Loss head from the free-text reference of a net's optima triple."""
    text = reference.lower()
    if "stable" in text:
        return SoftMaxHead(label=output_label, stable=True)
    if "kn-loss" in text or "center" in text:
        if classes is None:
            raise TensorError("center loss needs the class count (score length)")
        return CenterLossHead(classes=classes)
    if "fp68" in text:
        return Fp68Head(label=output_label)
    if "softmax" in text or "soft-max" in text:
        return SoftMaxHead(label=output_label)
    raise TensorError(f"no runnable loss for reference {reference!r}")
