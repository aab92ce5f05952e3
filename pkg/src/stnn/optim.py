"""Stochastic optimizers (Momentum, Nesterov, AdaM) and a regret diagnostic.

Optimizers mutate their per-parameter state; one instance per parameter set,
steps serialized.  Nesterov is a two-phase contract: ask for the lookahead
point, evaluate the gradient there yourself, then step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import TensorError

__all__ = ["Momentum", "Adam", "RegretTracker", "make_optimizer",
           "OPTIMIZER_ACRONYMS"]


class _PerParam:
    """Lazily allocated per-parameter accumulators keyed by parameter name."""

    def __init__(self):
        self.slots: dict[str, np.ndarray] = {}

    def get(self, name: str, like: np.ndarray) -> np.ndarray:
        arr = self.slots.get(name)
        if arr is None or arr.shape != like.shape:
            arr = np.zeros_like(like)
            self.slots[name] = arr
        return arr


@dataclass
class Momentum:
    """m <- beta*m + alpha*g; theta <- theta - m.  beta = 0 is plain SGD."""

    alpha: float = 0.01
    beta: float = 0.9
    nesterov: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise TensorError("momentum coefficient must be in [0, 1)")
        self._m = _PerParam()
        self.t = 0

    def lookahead(self, name: str, theta: np.ndarray) -> np.ndarray:
        """Point where Nesterov evaluates the gradient: theta - beta*m."""
        theta = np.asarray(theta, dtype=np.float64)
        return theta - self.beta * self._m.get(name, theta)

    def step_param(self, name: str, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if theta.shape != grad.shape:
            raise TensorError(f"gradient shape {grad.shape} != parameter {theta.shape}")
        m = self._m.get(name, theta)
        m *= self.beta
        m += self.alpha * grad
        return theta - m

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, theta in params.items():
            params[name] = self.step_param(name, theta, grads[name])


@dataclass
class Adam:
    """Adaptive moments with either the bias-corrected or the alpha_t form.

    The two variants are algebraically identical; the "eps_hat" form folds the
    bias corrections into alpha_t = alpha*sqrt(1-b2^t)/(1-b1^t) and
    eps_hat_t = eps*sqrt(1-b2^t).
    """

    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    variant: str = "bias_correct"     # "bias_correct" | "eps_hat"

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise TensorError("decay rates must be in [0, 1)")
        if self.variant not in ("bias_correct", "eps_hat"):
            raise TensorError(f"unknown AdaM variant {self.variant!r}")
        self._m = _PerParam()
        self._v = _PerParam()
        self.t = 0

    def step_param(self, name: str, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if theta.shape != grad.shape:
            raise TensorError(f"gradient shape {grad.shape} != parameter {theta.shape}")
        if self.t < 1:
            raise TensorError("step_param called before advancing time; use step()")
        m = self._m.get(name, theta)
        v = self._v.get(name, theta)
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad ** 2
        t = self.t
        if self.variant == "bias_correct":
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            return theta - self.alpha * m_hat / (np.sqrt(v_hat) + self.eps)
        alpha_t = self.alpha * math.sqrt(1.0 - self.beta2 ** t) / (1.0 - self.beta1 ** t)
        eps_hat = self.eps * math.sqrt(1.0 - self.beta2 ** t)
        return theta - alpha_t * m / (np.sqrt(v) + eps_hat)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, theta in params.items():
            params[name] = self.step_param(name, theta, grads[name])

    def step_one(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Single-tensor convenience: advances time and steps one parameter."""
        self.t += 1
        return self.step_param("_", theta, grad)


@dataclass
class RegretTracker:
    """Running expected inaccuracy R_t = ((t-1)R_{t-1} + f_t(th_t) - f_t(th*_t))/t."""

    value: float = 0.0
    t: int = 0

    def update(self, f_at_theta: float, f_at_best: float) -> float:
        self.t += 1
        self.value = ((self.t - 1) * self.value + f_at_theta - f_at_best) / self.t
        return self.value


OPTIMIZER_ACRONYMS = {
    "MomentumSGD": lambda **kw: Momentum(**kw),
    "NesterovSGD": lambda **kw: Momentum(nesterov=True, **kw),
    "AdamSGD": lambda **kw: Adam(**kw),
}

# Named in the grammar but never specified; bounds naming them parse but
# cannot execute.
UNIMPLEMENTED_ACRONYMS = (
    "AdagradSGD", "AdadeltaSGD", "RMSpropSGD", "AdamaxSGD", "NadamSGD",
    "MomentumSGA", "AdamSGA",
)


def make_optimizer(acronym: str, **overrides):
    if acronym in OPTIMIZER_ACRONYMS:
        return OPTIMIZER_ACRONYMS[acronym](**overrides)
    if acronym in UNIMPLEMENTED_ACRONYMS:
        raise TensorError(f"unimplemented optimizer {acronym!r}")
    raise TensorError(f"unknown optimizer acronym {acronym!r}")
