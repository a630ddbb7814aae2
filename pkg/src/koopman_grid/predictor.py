"""Connected prediction of the whole microgrid from per-device surrogates.

Each identified model advances its subsystem in a local reference frame
anchored at the device's initial PLL angle; the network constraint matrix
couples the devices, and constant-power loads are refreshed within every
step (adjust with the previous voltage, re-solve, redo). Grid-following
devices step in the explicit form before the grid-forming device closes
the step in the implicit form.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .der import rotate_complex, shift_der_state
from .errors import DivergenceError, ImplicitSolveError
from .identification import EXPLICIT, IMPLICIT, KbfModel
from .network import HybridNetwork, P1, P2A, P2B, P2C
from .runtime import DIVERGENCE_NORM


@dataclass(frozen=True)
class PredictionPlan:
    """Everything the connected prediction loop consumes.

    ``models`` maps node -> identified model: implicit form on P1 nodes,
    explicit on P2a/P2b. ``u0`` is the initial mixed port vector in the
    hybrid ordering (from the ground-truth power flow). ``load_schedule``
    holds injected complex powers per P2b/P2c node and ``ref_schedule``
    the ``(2, K+1)`` reference schedule per grid-following node; both must
    cover ``pred_length + 1`` samples. Initial PLL angles default to the
    angle entry of each initial state.
    """

    hybrid: HybridNetwork
    models: dict[int, KbfModel]
    x0: dict[int, np.ndarray]
    u0: np.ndarray
    pred_length: int
    dt: float
    load_schedule: dict[int, np.ndarray] = field(default_factory=dict)
    ref_schedule: dict[int, np.ndarray] = field(default_factory=dict)
    initial_pll_angles: dict[int, float] | None = None

    def __post_init__(self):
        hybrid = self.hybrid
        want = self.pred_length + 1
        for node in hybrid.nodes_with_tag(P1):
            model = self.models.get(node)
            if model is None or model.form != IMPLICIT:
                raise ValueError(f"P1 node {node} needs an implicit model")
        for tag in (P2A, P2B):
            for node in hybrid.nodes_with_tag(tag):
                model = self.models.get(node)
                if model is None or model.form != EXPLICIT:
                    raise ValueError(f"{tag} node {node} needs an explicit model")
                sched = self.ref_schedule.get(node)
                if sched is None or np.asarray(sched).shape[1] < want:
                    raise ValueError(
                        f"reference schedule for node {node} must cover "
                        f"{want} samples")
        for tag in (P2B, P2C):
            for node in hybrid.nodes_with_tag(tag):
                sched = self.load_schedule.get(node)
                if sched is None or np.asarray(sched).size < want:
                    raise ValueError(
                        f"load schedule for node {node} must cover {want} "
                        "samples")
        if np.asarray(self.u0).shape != (hybrid.n_ports,):
            raise ValueError("u0 must match the port count")
        if self.initial_pll_angles is None:
            angles = {node: float(x[1]) for node, x in self.x0.items()}
            object.__setattr__(self, "initial_pll_angles", angles)


@dataclass(frozen=True)
class PredictionResult:
    """Connected prediction trajectories (hybrid port ordering)."""

    times: np.ndarray
    port_u: np.ndarray
    port_y: np.ndarray
    der_states: dict[int, np.ndarray]
    wall_time_s: float
    dt: float

    @property
    def n_samples(self) -> int:
        return self.times.size


def port_voltages(hybrid: HybridNetwork, port_u: np.ndarray,
                  port_y: np.ndarray) -> np.ndarray:
    """Node voltage history per port row (P1 voltages live in u)."""
    n1 = len(hybrid.partition_p1)
    out = np.empty_like(port_y)
    out[:n1] = port_u[:n1]
    out[n1:] = port_y[n1:]
    return out


def port_currents(hybrid: HybridNetwork, port_u: np.ndarray,
                  port_y: np.ndarray) -> np.ndarray:
    """Node injection history per port row (P1 currents live in y)."""
    n1 = len(hybrid.partition_p1)
    out = np.empty_like(port_u)
    out[:n1] = port_y[:n1]
    out[n1:] = port_u[n1:]
    return out


def predict(plan: PredictionPlan) -> PredictionResult:
    """Run the connected prediction loop.

    Per step: solve the ports, adjust load currents for the scheduled power
    change, re-solve and redo the load currents, advance every
    grid-following model on the fresh node voltage (plus its references),
    re-solve, then advance the grid-forming model on its node current and
    emit its voltage. Port pairs recorded at each step satisfy
    ``y = H u`` exactly.
    """
    hybrid = plan.hybrid
    h = hybrid.H
    k_steps = plan.pred_length
    nodes = hybrid.nodes
    index = {node: i for i, node in enumerate(nodes)}

    p1_nodes = hybrid.nodes_with_tag(P1)
    pq_nodes = hybrid.nodes_with_tag(P2A) + hybrid.nodes_with_tag(P2B)
    p2b = set(hybrid.nodes_with_tag(P2B))
    load_nodes = hybrid.nodes_with_tag(P2B) + hybrid.nodes_with_tag(P2C)

    theta = plan.initial_pll_angles
    loads = {n: np.asarray(plan.load_schedule[n], dtype=complex)
             for n in load_nodes}
    refs = {n: np.asarray(plan.ref_schedule[n], dtype=float)
            for n in pq_nodes}

    # local-frame lifted initial states
    z: dict[int, np.ndarray] = {}
    state_maps: dict[int, np.ndarray] = {}
    for node in p1_nodes + pq_nodes:
        model = plan.models[node]
        kind = "vf" if node in p1_nodes else "pq"
        x_local = shift_der_state(np.asarray(plan.x0[node], dtype=float),
                                  -theta[node], kind)
        z[node] = model.P_pinv @ model.dictionary.lift(x_local)
        state_maps[node] = model.state_map

    n_ports = hybrid.n_ports
    port_u = np.empty((n_ports, k_steps + 1), dtype=complex)
    port_y = np.empty((n_ports, k_steps + 1), dtype=complex)
    der_states = {node: np.empty((10, k_steps + 1))
                  for node in p1_nodes + pq_nodes}
    for node in p1_nodes + pq_nodes:
        der_states[node][:, 0] = plan.x0[node]

    u = np.asarray(plan.u0, dtype=complex).copy()
    eye_cache = {id(m): np.eye(m.state_dim) for m in plan.models.values()}

    t_start = _time.perf_counter()
    for k in range(k_steps):
        y = h @ u
        port_u[:, k] = u
        port_y[:, k] = y

        u_next = u.copy()
        for node in load_nodes:
            i = index[node]
            u_next[i] += np.conj((loads[node][k + 1] - loads[node][k]) / y[i])
        y_next = h @ u_next
        for node in load_nodes:
            i = index[node]
            u_next[i] = np.conj(loads[node][k + 1] / y_next[i])

        for node in pq_nodes:
            i = index[node]
            model = plan.models[node]
            v_loc = rotate_complex(y_next[i], -theta[node])
            u_in = (v_loc.real, v_loc.imag,
                    refs[node][0, k + 1], refs[node][1, k + 1])
            zk = z[node]
            z_new = model.A @ zk
            for ui, b in zip(u_in, model.B):
                z_new += ui * (b @ zk)
            if not np.all(np.isfinite(z_new)) or \
                    np.linalg.norm(z_new) > DIVERGENCE_NORM:
                raise DivergenceError("grid-following surrogate diverged",
                                      step=k + 1, node=node)
            z[node] = z_new
            x_loc = state_maps[node] @ z_new
            der_states[node][:, k + 1] = shift_der_state(x_loc, theta[node],
                                                         "pq")
            i_out = rotate_complex(complex(x_loc[8], x_loc[9]), theta[node])
            if node in p2b:
                u_next[i] += i_out
            else:
                u_next[i] = i_out

        y_next = h @ u_next
        for node in p1_nodes:
            i = index[node]
            model = plan.models[node]
            i_loc = rotate_complex(y_next[i], -theta[node])
            u_in = (-i_loc.real, -i_loc.imag)
            lhs = eye_cache[id(model)].copy()
            for ui, b in zip(u_in, model.B):
                lhs -= ui * b
            try:
                z_new = np.linalg.solve(lhs, model.A @ z[node])
            except np.linalg.LinAlgError:
                raise ImplicitSolveError(
                    "grid-forming implicit step is singular",
                    condition=float(np.linalg.cond(lhs)),
                    step=k + 1, node=node) from None
            if not np.all(np.isfinite(z_new)) or \
                    np.linalg.norm(z_new) > DIVERGENCE_NORM:
                raise DivergenceError("grid-forming surrogate diverged",
                                      step=k + 1, node=node)
            z[node] = z_new
            x_loc = state_maps[node] @ z_new
            der_states[node][:, k + 1] = shift_der_state(x_loc, theta[node],
                                                         "vf")
            u_next[i] = rotate_complex(complex(x_loc[6], x_loc[7]),
                                       theta[node])
        u = u_next

    port_u[:, k_steps] = u
    port_y[:, k_steps] = h @ u
    wall = _time.perf_counter() - t_start

    times = np.arange(k_steps + 1) * plan.dt
    return PredictionResult(times=times, port_u=port_u, port_y=port_y,
                            der_states=der_states, wall_time_s=wall,
                            dt=plan.dt)


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvaluationReport:
    """Voltage prediction errors per node and in aggregate.

    RMS errors are over time of the complex-voltage deviation magnitude.
    ``wall_time_ratio`` is predict time over simulate time when both are
    known.
    """

    per_node_rms: dict[int, float]
    per_node_max: dict[int, float]
    mean_rms: float
    wall_time_ratio: float | None
    horizon_s: float

    def to_dict(self) -> dict:
        return {
            "per_node": {str(n): {"rms": self.per_node_rms[n],
                                  "max": self.per_node_max[n]}
                         for n in self.per_node_rms},
            "mean_rms": self.mean_rms,
            "wall_time_ratio": self.wall_time_ratio,
            "horizon_s": self.horizon_s,
        }


def evaluate(hybrid: HybridNetwork, predicted: PredictionResult,
             truth, predict_seconds: float | None = None,
             simulate_seconds: float | None = None) -> EvaluationReport:
    """Compare a connected prediction against ground truth.

    ``truth`` is a simulation result carrying ``times``, ``port_u`` and
    ``port_y`` on the same grid and port ordering.
    """
    if predicted.times.size != truth.times.size or \
            not np.allclose(predicted.times, truth.times, atol=1e-12):
        raise ValueError("prediction and ground truth grids do not match")

    v_pred = port_voltages(hybrid, predicted.port_u, predicted.port_y)
    v_true = port_voltages(hybrid, truth.port_u, truth.port_y)
    dev = np.abs(v_pred - v_true)

    per_rms = {}
    per_max = {}
    for i, node in enumerate(hybrid.nodes):
        per_rms[node] = float(np.sqrt(np.mean(dev[i] ** 2)))
        per_max[node] = float(np.max(dev[i]))

    if predict_seconds is None:
        predict_seconds = predicted.wall_time_s
    if simulate_seconds is None:
        simulate_seconds = getattr(truth, "runtime_s", None)
    ratio = (predict_seconds / simulate_seconds
             if predict_seconds is not None and simulate_seconds else None)

    return EvaluationReport(
        per_node_rms=per_rms, per_node_max=per_max,
        mean_rms=float(np.mean(list(per_rms.values()))),
        wall_time_ratio=ratio,
        horizon_s=float(predicted.times[-1] - predicted.times[0]))


__all__ = [
    "PredictionPlan", "PredictionResult", "predict", "evaluate",
    "EvaluationReport", "port_voltages", "port_currents",
]
