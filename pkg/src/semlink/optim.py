"""Adaptive-moment optimizer and the finite-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractViolationError, NumericalError


@dataclass
class OptimizerState:
    """State of the adaptive-moment (Adam) update."""

    step_count: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(dim: int, learning_rate: float = 0.01, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> OptimizerState:
    return OptimizerState(
        step_count=0,
        first_moment=np.zeros(dim),
        second_moment=np.zeros(dim),
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(state: OptimizerState, variable: np.ndarray,
              gradient: np.ndarray) -> tuple[OptimizerState, np.ndarray]:
    """One bias-corrected adaptive-moment update; returns new state and variable."""
    variable = np.asarray(variable, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    if variable.shape != gradient.shape or variable.shape != state.first_moment.shape:
        raise ContractViolationError(
            f"length mismatch: variable {variable.shape}, gradient {gradient.shape}, "
            f"moments {state.first_moment.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * gradient * gradient
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_variable = variable - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = OptimizerState(t, m, v, state.learning_rate, state.beta1,
                               state.beta2, state.epsilon)
    return new_state, new_variable


@dataclass(frozen=True)
class DifferentiableObjective:
    """A scalar objective with an analytic gradient over a flat real vector."""

    value_fn: Callable[[np.ndarray], float]
    gradient_fn: Callable[[np.ndarray], np.ndarray]


def finite_diff_grad(objective: DifferentiableObjective, point: np.ndarray,
                     step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate.

    Uses a per-coordinate relative step ``step * max(1, |x_i|)`` to balance
    truncation against cancellation at double precision. This is the
    acceptance oracle for every analytic gradient in the package, so it never
    shares code with the reverse-mode tape.
    """
    if step <= 0:
        raise ContractViolationError("finite-difference step must be positive")
    point = np.asarray(point, dtype=float)
    grad = np.empty_like(point)
    for i in range(point.size):
        h = step * max(1.0, abs(point[i]))
        xp = point.copy()
        xm = point.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(objective.value_fn(xp))
        fm = float(objective.value_fn(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError("non-finite objective value in finite differences", i)
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def gradient_max_rel_error(objective: DifferentiableObjective, point: np.ndarray,
                           step: float = 1e-5, clamp: float = 1e-8) -> float:
    """Max over coordinates of |analytic - central difference| / max(|fd|, clamp)."""
    analytic = np.asarray(objective.gradient_fn(np.asarray(point, dtype=float)))
    numeric = finite_diff_grad(objective, point, step)
    denom = np.maximum(np.abs(numeric), clamp)
    return float(np.max(np.abs(analytic - numeric) / denom))
