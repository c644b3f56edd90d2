"""Single-layer softmax policy over discrete actions.

Parameters are a weight matrix plus bias; gradients of the per-sample
negative log-likelihood have a closed form and are exposed both per sample
and as fixed-order batch reductions so that training runs are bit-for-bit
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PolicyParams:
    """Weights (A x d) and bias (length A) of the softmax policy.

    The flattened layout used everywhere (gradients, serialization) is the
    weight rows in row-major order followed by the bias.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias length {self.bias.shape} does not match "
                f"{self.weights.shape[0]} actions"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("policy parameters must be finite")

    @property
    def n_actions(self) -> int:
        return self.weights.shape[0]

    @property
    def state_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weights.reshape(-1), self.bias])

    @classmethod
    def unflatten(cls, flat: np.ndarray, n_actions: int, state_dim: int) -> "PolicyParams":
        flat = np.asarray(flat, dtype=np.float64)
        expected = n_actions * state_dim + n_actions
        if flat.shape != (expected,):
            raise ValueError(f"expected flat length {expected}, got {flat.shape}")
        w = flat[: n_actions * state_dim].reshape(n_actions, state_dim)
        return cls(weights=w.copy(), bias=flat[n_actions * state_dim :].copy())

    @classmethod
    def zeros(cls, n_actions: int, state_dim: int) -> "PolicyParams":
        return cls(np.zeros((n_actions, state_dim)), np.zeros(n_actions))

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.weights.copy(), self.bias.copy())


@dataclass
class Sample:
    """One (state, expert action) record with provenance.

    ``corrupted`` marks labels flipped by the corruption study; it is
    bookkeeping only and never read by the learner.
    """

    state: np.ndarray
    action: int
    task_id: int = 0
    corrupted: bool = False

    def __post_init__(self) -> None:
        self.state = np.asarray(self.state, dtype=np.float64)
        if self.state.ndim != 1:
            raise ValueError(f"state must be 1-D, got shape {self.state.shape}")
        self.action = int(self.action)
        if self.action < 0:
            raise ValueError(f"action index must be nonnegative, got {self.action}")


def init_params(n_actions: int, state_dim: int, rng: np.random.Generator,
                scale: float = 0.1) -> PolicyParams:
    """Random initialization, uniform in [-scale, scale]."""
    flat = rng.uniform(-scale, scale, size=n_actions * state_dim + n_actions)
    return PolicyParams.unflatten(flat, n_actions, state_dim)


def _check_state(params: PolicyParams, state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (params.state_dim,):
        raise ValueError(
            f"state length mismatch: expected {params.state_dim}, got {state.shape[0] if state.ndim == 1 else state.shape}"
        )
    return state

def _check_action(params: PolicyParams, action: int) -> int:
    if not 0 <= action < params.n_actions:
        raise ValueError(f"action {action} out of range [0, {params.n_actions})")
    return action


# The single-sample and batched paths below intentionally share the same
# multiply-then-reduce arithmetic (no BLAS dot products), so a row of the
# batched result is bitwise identical to the single-sample computation.

def _logits(params: PolicyParams, state: np.ndarray) -> np.ndarray:
    return (params.weights * state).sum(axis=1) + params.bias


def _logits_batch(params: PolicyParams, states: np.ndarray) -> np.ndarray:
    return (states[:, None, :] * params.weights[None, :, :]).sum(axis=2) + params.bias


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: PolicyParams, state: np.ndarray) -> np.ndarray:
    """Action probabilities softmax(W s + b), max-shifted for stability."""
    return _softmax(_logits(params, _check_state(params, state)))


def forward_batch(params: PolicyParams, states: np.ndarray) -> np.ndarray:
    """Row-wise forward() for an (N, d) state matrix."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != params.state_dim:
        raise ValueError(
            f"states must have shape (N, {params.state_dim}), got {states.shape}"
        )
    return _softmax_rows(_logits_batch(params, states))


def nll_loss(params: PolicyParams, sample: Sample) -> float:
    """Negative log-likelihood of the sample's action under the policy."""
    state = _check_state(params, sample.state)
    action = _check_action(params, sample.action)
    z = _logits(params, state)
    shifted = z - z.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[action])


def per_sample_grad(params: PolicyParams, sample: Sample) -> np.ndarray:
    """Gradient of nll_loss in the flattened parameter layout.

    Closed form: with p = forward(state) and e the one-hot action,
    the weight block row a is (p_a - e_a) * state and the bias block is p - e.
    """
    state = _check_state(params, sample.state)
    action = _check_action(params, sample.action)
    p = _softmax(_logits(params, state))
    r = p.copy()
    r[action] -= 1.0
    return np.concatenate([(r[:, None] * state[None, :]).reshape(-1), r])


def states_actions(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a sample list into (N, d) states and (N,) actions arrays."""
    if not samples:
        raise ValueError("samples must be nonempty")
    states = np.stack([s.state for s in samples]).astype(np.float64, copy=False)
    actions = np.array([s.action for s in samples], dtype=np.int64)
    return states, actions


def grad_matrix_arrays(params: PolicyParams, states: np.ndarray,
                       actions: np.ndarray) -> np.ndarray:
    """grad_matrix on prestacked arrays; avoids restacking in training loops."""
    if states.ndim != 2 or states.shape[1] != params.state_dim:
        raise ValueError(
            f"states must have shape (N, {params.state_dim}), got {states.shape}"
        )
    if actions.min() < 0 or actions.max() >= params.n_actions:
        raise ValueError(f"actions out of range [0, {params.n_actions})")
    n = states.shape[0]
    probs = _softmax_rows(_logits_batch(params, states))
    resid = probs.copy()
    resid[np.arange(n), actions] -= 1.0
    weight_block = (resid[:, :, None] * states[:, None, :]).reshape(n, -1)
    return np.concatenate([weight_block, resid], axis=1)


def grad_matrix(params: PolicyParams, samples: list[Sample]) -> np.ndarray:
    """Stack of per-sample gradients, one row per sample (N x (A*d + A)).

    Rows are bitwise identical to per_sample_grad on the same sample.
    """
    states, actions = states_actions(samples)
    return grad_matrix_arrays(params, states, actions)


def reduce_rows(coeffs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Canonical fixed-order reduction sum_n coeffs[n] * rows[n].

    Every weighted or averaged gradient in this package funnels through this
    one routine so that equal coefficient vectors give bitwise equal results.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (rows.shape[0],):
        raise ValueError(
            f"coefficient length {coeffs.shape} does not match {rows.shape[0]} rows"
        )
    return coeffs @ rows


def batch_grad_arrays(params: PolicyParams, states: np.ndarray,
                      actions: np.ndarray) -> np.ndarray:
    """batch_grad on prestacked arrays."""
    rows = grad_matrix_arrays(params, states, actions)
    scale = np.full(rows.shape[0], 1.0 / rows.shape[0])
    return reduce_rows(scale, rows)


def batch_grad(params: PolicyParams, samples: list[Sample]) -> np.ndarray:
    """Mean per-sample gradient over a nonempty batch, fixed reduction order."""
    if not samples:
        raise ValueError("batch_grad requires a nonempty sample list")
    states, actions = states_actions(samples)
    return batch_grad_arrays(params, states, actions)


def sgd_step(params: PolicyParams, grad: np.ndarray, step: float) -> PolicyParams:
    """One descent step: params - step * grad, unflattened."""
    if step <= 0:
        raise ValueError(f"step size must be positive, got {step}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (params.n_params,):
        raise ValueError(f"gradient length {grad.shape} != {params.n_params}")
    return PolicyParams.unflatten(params.flatten() - step * grad,
                                  params.n_actions, params.state_dim)


def predict(params: PolicyParams, state: np.ndarray) -> int:
    """Most likely action; ties resolve to the lowest index."""
    return int(np.argmax(forward(params, state)))


def predict_batch(params: PolicyParams, states: np.ndarray) -> np.ndarray:
    return np.argmax(forward_batch(params, states), axis=1)
