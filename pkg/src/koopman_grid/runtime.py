"""Forward simulation of identified bilinear models.

Steppers advance the lifted state one sample at a time in either the
explicit or the implicit discrete form; the original state is recovered
linearly whenever needed. Models are immutable, so concurrent rollouts of
a shared model are safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ImplicitSolveError
from .identification import EXPLICIT, IMPLICIT, KbfModel

#: lifted-state norms beyond this abort a rollout as divergent
DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class LiftedState:
    """Lifted coordinates of one subsystem tied to its model."""

    z: np.ndarray
    model: KbfModel

    def __post_init__(self):
        if self.z.shape != (self.model.state_dim,):
            raise ValueError(
                f"lifted state has length {self.z.shape}, model expects "
                f"({self.model.state_dim},)")


def initial_lift(model: KbfModel, x0) -> LiftedState:
    """Lift an initial state vector into the model's coordinates."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.n_states,):
        raise ValueError(f"x0 must have length {model.n_states}")
    z = model.P_pinv @ model.dictionary.lift(x0)
    return LiftedState(z=z, model=model)


def _check_finite(z: np.ndarray, step: int | None, node=None) -> np.ndarray:
    if not np.all(np.isfinite(z)) or np.linalg.norm(z) > DIVERGENCE_NORM:
        raise DivergenceError("lifted state diverged", step=step, node=node)
    return z


def step_explicit_raw(model: KbfModel, z: np.ndarray, u_next,
                      step: int | None = None, node=None) -> np.ndarray:
    """Explicit update on a bare array: z' = A z + sum_i u_i B_i z."""
    u_next = np.asarray(u_next, dtype=float)
    z_new = model.A @ z
    for ui, b in zip(u_next, model.B):
        z_new += ui * (b @ z)
    return _check_finite(z_new, step, node)


def step_implicit_raw(model: KbfModel, z: np.ndarray, u_next,
                      step: int | None = None, node=None) -> np.ndarray:
    """Implicit update: solve (I - sum_i u_i B_i) z' = A z."""
    u_next = np.asarray(u_next, dtype=float)
    lhs = np.eye(model.state_dim)
    for ui, b in zip(u_next, model.B):
        lhs -= ui * b
    try:
        z_new = np.linalg.solve(lhs, model.A @ z)
    except np.linalg.LinAlgError:
        cond = float(np.linalg.cond(lhs))
        raise ImplicitSolveError(
            "implicit step matrix is singular to working precision",
            condition=cond, step=step, node=node) from None
    return _check_finite(z_new, step, node)


def step_explicit(model: KbfModel, state: LiftedState, u_next,
                  step: int | None = None) -> LiftedState:
    """One explicit step of an explicit-form model."""
    if model.form != EXPLICIT:
        raise ValueError(f"model form is '{model.form}', expected explicit")
    return LiftedState(step_explicit_raw(model, state.z, u_next, step), model)


def step_implicit(model: KbfModel, state: LiftedState, u_next,
                  step: int | None = None) -> LiftedState:
    """One implicit step of an implicit-form model."""
    if model.form != IMPLICIT:
        raise ValueError(f"model form is '{model.form}', expected implicit")
    return LiftedState(step_implicit_raw(model, state.z, u_next, step), model)


def reconstruct_state(model: KbfModel, state: LiftedState | np.ndarray) -> np.ndarray:
    """Recover the original state vector: x = Cx P z."""
    z = state.z if isinstance(state, LiftedState) else np.asarray(state)
    return model.state_map @ z


@dataclass(frozen=True)
class RolloutResult:
    """Open-loop prediction of a single subsystem.

    ``states`` is ``(n_states, N)`` including the initial sample;
    ``diverged_at`` is the step index where the rollout stopped early, or
    None when it completed.
    """

    states: np.ndarray
    lifted: np.ndarray
    diverged_at: int | None = None

    @property
    def completed(self) -> bool:
        return self.diverged_at is None


def rollout(model: KbfModel, x0, inputs: np.ndarray,
            raise_on_divergence: bool = True) -> RolloutResult:
    """Predict a trajectory from an initial state and an input schedule.

    ``inputs`` is ``(m, N)``; column ``k`` acts over the step landing on
    sample ``k``, matching the training-data convention, so column 0 is
    unused. On divergence the result is truncated (or raised, per
    ``raise_on_divergence``).
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    n_steps = inputs.shape[1]
    stepper = step_explicit_raw if model.form == EXPLICIT else step_implicit_raw

    z = initial_lift(model, x0).z
    lifted = np.empty((model.state_dim, n_steps))
    lifted[:, 0] = z
    diverged_at = None
    for k in range(1, n_steps):
        try:
            z = stepper(model, z, inputs[:, k], step=k)
        except (DivergenceError, ImplicitSolveError):
            if raise_on_divergence:
                raise
            diverged_at = k
            lifted = lifted[:, :k]
            break
        lifted[:, k] = z
    states = model.state_map @ lifted
    return RolloutResult(states=states, lifted=lifted, diverged_at=diverged_at)


__all__ = [
    "LiftedState", "initial_lift", "step_explicit", "step_implicit",
    "step_explicit_raw", "step_implicit_raw", "reconstruct_state",
    "rollout", "RolloutResult", "DIVERGENCE_NORM",
]
