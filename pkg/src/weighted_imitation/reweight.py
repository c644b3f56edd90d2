"""Softmax-parameterized importance weights over aggregated training samples.

The weight distribution is updated by gradient descent on the squared L2
distance between the weighted training gradient and a target (test-batch)
gradient. All gradients here are exact derivatives of that cost; in
particular the weight-space gradient carries the factor 2 from
differentiating the square.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import reduce_rows


@dataclass
class WeightState:
    """Logits over N samples and their softmax image (the importance weights)."""

    logits: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "WeightState":
        logits = np.asarray(logits, dtype=np.float64)
        return cls(logits=logits, weights=softmax_weights(logits))

    @classmethod
    def uniform(cls, n: int) -> "WeightState":
        return cls.from_logits(np.zeros(n))

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    def copy(self) -> "WeightState":
        return WeightState(self.logits.copy(), self.weights.copy())


def softmax_weights(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax; strictly positive, sums to 1."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ValueError(f"logits must be a nonempty vector, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise ValueError("logits must be finite")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def softmax_jacobian(weights: np.ndarray) -> np.ndarray:
    """Jacobian of softmax at the point with these output weights.

    Entry (i, j) is w_i (delta_ij - w_j): diag(w) - w w^T. Symmetric, rows sum
    to zero. Materializes an N x N matrix; update steps use the O(N)
    product form in grad_wrt_logits instead.
    """
    w = np.asarray(weights, dtype=np.float64)
    return np.diag(w) - np.outer(w, w)


def weighted_grad(weights: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Convex combination sum_n weights[n] * grads[n] of gradient rows."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.ndim != 2:
        raise ValueError(f"gradient matrix must be 2-D, got shape {grads.shape}")
    return reduce_rows(weights, grads)


def alignment_cost(weights: np.ndarray, grads: np.ndarray,
                   target: np.ndarray) -> float:
    """Squared L2 distance between the weighted gradient and the target."""
    target = np.asarray(target, dtype=np.float64)
    resid = weighted_grad(weights, grads) - target
    return float(resid @ resid)


def grad_wrt_weights(weights: np.ndarray, grads: np.ndarray,
                     target: np.ndarray) -> np.ndarray:
    """Exact gradient of alignment_cost in the weights: 2 * grads @ residual."""
    grads = np.asarray(grads, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (grads.shape[1],):
        raise ValueError(
            f"target length {target.shape} does not match gradient width {grads.shape[1]}"
        )
    resid = weighted_grad(weights, grads) - target
    return 2.0 * (grads @ resid)


def grad_wrt_logits(state: WeightState, grads: np.ndarray,
                    target: np.ndarray) -> np.ndarray:
    """Chain rule through the softmax: Jacobian^T applied to grad_wrt_weights.

    Uses the product form w * (v - w.v) rather than materializing the
    Jacobian. Entries sum to zero (the cost is invariant to uniform logit
    shifts).
    """
    w = state.weights
    v = grad_wrt_weights(w, grads, target)
    return w * (v - float(w @ v))


def update_logits(state: WeightState, grads: np.ndarray, target: np.ndarray,
                  gamma: float, n_steps: int) -> WeightState:
    """n_steps of gradient descent on the logits, refreshing weights each step."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if state.n != np.asarray(grads).shape[0]:
        raise ValueError(
            f"weight state has {state.n} entries but gradient matrix has "
            f"{np.asarray(grads).shape[0]} rows"
        )
    current = state
    for _ in range(n_steps):
        g = grad_wrt_logits(current, grads, target)
        current = WeightState.from_logits(current.logits - gamma * g)
    return current
