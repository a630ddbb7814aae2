"""Coupled microgrid simulation and training-data generation.

The ground-truth system couples the inverter ODEs to the network's
algebraic port constraint and to constant-power load relations. Time
stepping is backward Euler with a chord Newton solve of the joint
(differential + algebraic) residual at every step; the algebraic unknowns
are the voltages of nodes carrying constant-power loads.

Conventions: port currents are injections into the network; load powers
are stored as injected complex power (negative real part for consumption);
the grid-forming device input is the current in device orientation (the
negated injection at its node).
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .der import (
    N_DER_STATES, PqDerParams, VfDerParams, pq_derivative, pq_equilibrium,
    shift_phase, vf_derivative, vf_equilibrium, PQ_DQ_PAIRS, VF_DQ_PAIRS,
    PLL_ANGLE_INDEX,
)
from .errors import InitializationError, SimulationError
from .identification import TrajectoryDataset, TrajectorySegment
from .network import (
    HybridNetwork, NetworkModel, P2B, P2C, hybrid_from_admittance,
    kron_reduce,
)

VF_INPUT_DIM = 2     # node current, device orientation
PQ_INPUT_DIM = 4     # node voltage DQ plus the two power references


@dataclass(frozen=True)
class ScenarioEvent:
    """Stepwise change applied from ``time`` onward.

    ``kind`` is "load" (``value``: new injected complex power) or "pq_ref"
    (``value``: new ``(p_ref, q_ref)`` pair) at node ``node``.
    """

    time: float
    kind: str
    node: int
    value: object

    def __post_init__(self):
        if self.kind not in ("load", "pq_ref"):
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    """Time horizon, step size and the disturbance schedule."""

    duration: float
    dt: float
    events: tuple[ScenarioEvent, ...] = ()
    label: str = ""

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "events",
                           tuple(sorted(self.events, key=lambda e: e.time)))
        for ev in self.events:
            if not 0.0 <= ev.time <= self.duration:
                raise ValueError("event time outside scenario duration")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class MicrogridSystem:
    """Network plus device bindings for the ground-truth simulator.

    Exactly one grid-forming node is supported (it provides the slack for
    the power flow); grid-following devices and constant-power loads may
    appear at any P2 node.
    """

    net: NetworkModel
    hybrid: HybridNetwork
    vf_node: int
    vf_params: VfDerParams
    pq_params: dict[int, PqDerParams]
    load_s: dict[int, complex]        # injected power, negative = consumption

    def __post_init__(self):
        object.__setattr__(self, "pq_params", dict(self.pq_params))
        object.__setattr__(self, "load_s",
                           {int(k): complex(v) for k, v in self.load_s.items()})
        if (self.vf_node,) != self.hybrid.partition_p1:
            raise ValueError("the grid-forming node must be the single P1 port")
        for node in self.pq_params:
            if node not in self.hybrid.partition_p2:
                raise ValueError(f"PQ device node {node} is not a P2 port")
        for node in self.load_s:
            if node not in self.hybrid.partition_p2:
                raise ValueError(f"load node {node} is not a P2 port")
        tags = dict(zip(self.hybrid.partition_p2, self.hybrid.p2_tags))
        for node, tag in tags.items():
            has_pq = node in self.pq_params
            has_load = node in self.load_s
            expect = {(True, False): "P2a", (True, True): "P2b",
                      (False, True): "P2c"}.get((has_pq, has_load))
            if expect is None or tag != expect:
                raise ValueError(
                    f"node {node} tag {tag} does not match devices "
                    f"(pq={has_pq}, load={has_load})")

    @property
    def pq_nodes(self) -> tuple[int, ...]:
        return tuple(sorted(self.pq_params))

    @property
    def load_nodes(self) -> tuple[int, ...]:
        return tuple(sorted(self.load_s))

    @property
    def dq_frequency(self) -> float:
        return self.vf_params.omega


def build_system(net: NetworkModel, partitions: dict,
                 vf_params: VfDerParams, pq_params: dict[int, PqDerParams],
                 load_s: dict[int, complex]) -> MicrogridSystem:
    """Assemble a system; partition tags follow the device placement."""
    p1 = list(partitions["P1"])
    p2 = list(partitions.get("P2a", [])) + list(partitions.get("P2b", [])) \
        + list(partitions.get("P2c", []))
    tags = ["P2a"] * len(partitions.get("P2a", [])) \
        + ["P2b"] * len(partitions.get("P2b", [])) \
        + ["P2c"] * len(partitions.get("P2c", []))
    hybrid = hybrid_from_admittance(net, p1, p2, tags)
    return MicrogridSystem(net=net, hybrid=hybrid, vf_node=p1[0],
                           vf_params=vf_params, pq_params=pq_params,
                           load_s=load_s)


# ---------------------------------------------------------------------------
# power flow and equilibrium
# ---------------------------------------------------------------------------

def solve_power_flow(system: MicrogridSystem,
                     load_s: dict[int, complex] | None = None,
                     refs: dict[int, tuple[float, float]] | None = None,
                     tol: float = 1e-12, max_iter: int = 60) -> dict[int, complex]:
    """Newton power flow on the reduced network.

    The grid-forming node is the slack at ``v_ref`` per-unit and zero
    angle; every other retained node balances its constant-power injection
    (grid-following reference plus local load) against the network.
    Returns node -> complex voltage for all retained nodes.
    """
    load_s = dict(system.load_s if load_s is None else load_s)
    refs = refs or {}
    nodes = list(system.hybrid.nodes)
    slack = system.vf_node
    others = [n for n in nodes if n != slack]

    y_red = kron_reduce(system.net.admittance_matrix(), nodes,
                        sorted(system.net.zero_injection_nodes))
    idx = {n: i for i, n in enumerate(nodes)}

    s_inj = np.zeros(len(nodes), dtype=complex)
    for node, params in system.pq_params.items():
        pr, qr = refs.get(node, (params.p_ref, params.q_ref))
        s_inj[idx[node]] += complex(pr, qr)
    for node, s in load_s.items():
        s_inj[idx[node]] += s

    v = np.ones(len(nodes), dtype=complex)
    v[idx[slack]] = system.vf_params.v_ref

    free = [idx[n] for n in others]

    def residual(v_free):
        vv = v.copy()
        vv[free] = v_free[:len(free)] + 1j * v_free[len(free):]
        i_net = y_red @ vv
        mism = i_net[free] - np.conj(s_inj[free] / vv[free])
        return np.concatenate([mism.real, mism.imag]), vv

    x = np.concatenate([v[free].real, v[free].imag])
    for _ in range(max_iter):
        res, vv = residual(x)
        if np.max(np.abs(res)) < tol:
            return {n: vv[idx[n]] for n in nodes}
        jac = np.empty((x.size, x.size))
        h = 1e-7
        for j in range(x.size):
            xp = x.copy()
            xp[j] += h
            jac[:, j] = (residual(xp)[0] - res) / h
        try:
            x = x - np.linalg.solve(jac, res)
        except np.linalg.LinAlgError:
            raise InitializationError("power flow Jacobian is singular") from None
    raise InitializationError("power flow did not converge")


def equilibrium_states(system: MicrogridSystem,
                       load_s: dict[int, complex] | None = None,
                       refs: dict[int, tuple[float, float]] | None = None
                       ) -> tuple[dict[int, np.ndarray], np.ndarray]:
    """Closed-form device equilibria on top of a solved power flow.

    Returns (states keyed by node, port vector u0). The Vf device input is
    the negated injection at its node; each PQ device carries exactly its
    reference power.
    """
    load_s = dict(system.load_s if load_s is None else load_s)
    refs = refs or {}
    volts = solve_power_flow(system, load_s=load_s, refs=refs)
    nodes = list(system.hybrid.nodes)
    y_red = kron_reduce(system.net.admittance_matrix(), nodes,
                        sorted(system.net.zero_injection_nodes))
    v_vec = np.array([volts[n] for n in nodes])
    i_inj = y_red @ v_vec
    idx = {n: i for i, n in enumerate(nodes)}

    states: dict[int, np.ndarray] = {}
    states[system.vf_node] = vf_equilibrium(
        volts[system.vf_node], -i_inj[idx[system.vf_node]], system.vf_params)
    for node, params in system.pq_params.items():
        pr, qr = refs.get(node, (params.p_ref, params.q_ref))
        states[node] = pq_equilibrium(volts[node], params, pr, qr)

    u0 = np.empty(len(nodes), dtype=complex)
    for k, node in enumerate(nodes):
        if node == system.vf_node:
            u0[k] = volts[node]
        else:
            inj = 0j
            if node in system.pq_params:
                pr, qr = refs.get(node, (system.pq_params[node].p_ref,
                                         system.pq_params[node].q_ref))
                inj += np.conj(complex(pr, qr) / volts[node])
            if node in load_s:
                inj += np.conj(load_s[node] / volts[node])
            u0[k] = inj
    return states, u0


# ---------------------------------------------------------------------------
# simulation result
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationResult:
    """Trajectories of one scenario simulation.

    ``der_states[node]`` is ``(10, N)``; ``der_inputs[node]`` is the model
    input history (2 rows for the grid-forming node, 4 for grid-following
    ones, references included). ``port_u``/``port_y`` are complex
    ``(n_ports, N)`` in the hybrid ordering; ``load_power``/``ref_history``
    record the applied schedules.
    """

    times: np.ndarray
    der_states: dict[int, np.ndarray]
    der_inputs: dict[int, np.ndarray]
    port_u: np.ndarray
    port_y: np.ndarray
    load_power: dict[int, np.ndarray]
    ref_history: dict[int, np.ndarray]
    dt: float
    newton_iterations: int = 0
    runtime_s: float = 0.0
    label: str = ""

    @property
    def n_samples(self) -> int:
        return self.times.size


# ---------------------------------------------------------------------------
# the DAE integrator
# ---------------------------------------------------------------------------

class _Stepper:
    """Backward-Euler residual/Newton machinery bound to one system."""

    def __init__(self, system: MicrogridSystem, dt: float):
        self.system = system
        self.dt = dt
        hybrid = system.hybrid
        self.h = hybrid.H
        self.nodes = list(hybrid.nodes)
        self.idx = {n: i for i, n in enumerate(self.nodes)}
        self.vf_row = self.idx[system.vf_node]
        self.pq_nodes = list(system.pq_nodes)
        self.pq_rows = [self.idx[n] for n in self.pq_nodes]
        self.load_nodes = list(system.load_nodes)
        self.load_rows = [self.idx[n] for n in self.load_nodes]
        self.n_der = 1 + len(self.pq_nodes)
        self.n_alg = 2 * len(self.load_nodes)
        self.dim = N_DER_STATES * self.n_der + self.n_alg
        self.order = [system.vf_node] + self.pq_nodes

    def slices(self, xi):
        states = {}
        for k, node in enumerate(self.order):
            states[node] = xi[k * N_DER_STATES:(k + 1) * N_DER_STATES]
        w = xi[N_DER_STATES * self.n_der:]
        return states, w

    def pack(self, states: dict[int, np.ndarray], w: np.ndarray) -> np.ndarray:
        parts = [states[node] for node in self.order]
        parts.append(w)
        return np.concatenate(parts)

    def ports(self, states, w, loads):
        """Port input vector u = [V_P1; I_P2] from states and load voltages."""
        u = np.zeros(len(self.nodes), dtype=complex)
        xvf = states[self.system.vf_node]
        u[self.vf_row] = complex(xvf[6], xvf[7])
        for node, row in zip(self.pq_nodes, self.pq_rows):
            xpq = states[node]
            u[row] += complex(xpq[8], xpq[9])
        for j, (node, row) in enumerate(zip(self.load_nodes, self.load_rows)):
            v_node = complex(w[2 * j], w[2 * j + 1])
            u[row] += np.conj(loads[node] / v_node)
        return u

    def residual(self, xi, xi_prev, loads, refs):
        states, w = self.slices(xi)
        states_prev, _ = self.slices(xi_prev)
        u = self.ports(states, w, loads)
        y = self.h @ u

        res = np.empty(self.dim)
        xvf = states[self.system.vf_node]
        inj = y[self.vf_row]
        f = vf_derivative(xvf, (-inj.real, -inj.imag), self.system.vf_params)
        res[:N_DER_STATES] = (xvf - states_prev[self.system.vf_node]
                              - self.dt * f)
        for k, (node, row) in enumerate(zip(self.pq_nodes, self.pq_rows), 1):
            xpq = states[node]
            v_node = y[row]
            pr, qr = refs[node]
            f = pq_derivative(xpq, (v_node.real, v_node.imag),
                              self.system.pq_params[node], pr, qr)
            res[k * N_DER_STATES:(k + 1) * N_DER_STATES] = \
                (xpq - states_prev[node] - self.dt * f)
        base = N_DER_STATES * self.n_der
        for j, row in enumerate(self.load_rows):
            res[base + 2 * j] = y[row].real - w[2 * j]
            res[base + 2 * j + 1] = y[row].imag - w[2 * j + 1]
        return res, u, y

    def numerical_jacobian(self, xi, xi_prev, loads, refs, res0):
        jac = np.empty((self.dim, self.dim))
        h = 1e-7
        for j in range(self.dim):
            pert = xi.copy()
            pert[j] += h
            jac[:, j] = (self.residual(pert, xi_prev, loads, refs)[0] - res0) / h
        return jac


def simulate_microgrid(system: MicrogridSystem, scenario: Scenario,
                       initial_states: dict[int, np.ndarray] | None = None,
                       initial_ports: np.ndarray | None = None,
                       newton_tol: float = 1e-11,
                       max_newton: int = 50,
                       jacobian_refresh: int = 200) -> SimulationResult:
    """Fixed-step implicit simulation of the coupled microgrid DAE.

    Starts from the solved equilibrium unless explicit initial conditions
    are supplied. Raises :class:`SimulationError` with the failing time
    when a step's Newton iteration does not converge, and
    :class:`InitializationError` when the initial condition is
    inconsistent with the network.
    """
    t_begin = _time.perf_counter()
    dt = scenario.dt
    stepper = _Stepper(system, dt)
    n_steps = scenario.n_steps
    times = np.arange(n_steps + 1) * dt

    loads0 = dict(system.load_s)
    refs0 = {n: (p.p_ref, p.q_ref) for n, p in system.pq_params.items()}

    if initial_states is None:
        states0, u0 = equilibrium_states(system)
    else:
        states0 = {n: np.asarray(v, dtype=float) for n, v in initial_states.items()}
        u0 = initial_ports
        if u0 is None:
            raise InitializationError(
                "explicit initial states require the matching port vector")
    y0 = stepper.h @ u0
    w0 = np.empty(stepper.n_alg)
    for j, row in enumerate(stepper.load_rows):
        w0[2 * j] = y0[row].real
        w0[2 * j + 1] = y0[row].imag
    xi = stepper.pack(states0, w0)

    res0, _, _ = stepper.residual(xi, xi, loads0, refs0)
    alg = res0[N_DER_STATES * stepper.n_der:]
    if alg.size and np.max(np.abs(alg)) > 1e-8:
        raise InitializationError(
            f"initial network residual {np.max(np.abs(alg)):.2e} exceeds 1e-8")

    # schedules: value active at sample k
    loads_t = {n: np.full(n_steps + 1, loads0[n], dtype=complex)
               for n in system.load_nodes}
    refs_t = {n: np.tile(np.asarray(refs0[n], dtype=float)[:, None],
                         (1, n_steps + 1))
              for n in system.pq_nodes}
    for ev in scenario.events:
        k0 = int(math.ceil(ev.time / dt - 1e-9))
        if ev.kind == "load":
            if ev.node not in loads_t:
                raise ValueError(f"event targets unknown load node {ev.node}")
            loads_t[ev.node][k0:] = complex(ev.value)
        else:
            if ev.node not in refs_t:
                raise ValueError(f"event targets unknown PQ node {ev.node}")
            pr, qr = ev.value
            refs_t[ev.node][0, k0:] = pr
            refs_t[ev.node][1, k0:] = qr

    # storage
    n_nodes = len(stepper.nodes)
    port_u = np.empty((n_nodes, n_steps + 1), dtype=complex)
    port_y = np.empty((n_nodes, n_steps + 1), dtype=complex)
    der_states = {n: np.empty((N_DER_STATES, n_steps + 1))
                  for n in stepper.order}
    vf_inputs = np.empty((VF_INPUT_DIM, n_steps + 1))
    pq_inputs = {n: np.empty((PQ_INPUT_DIM, n_steps + 1))
                 for n in system.pq_nodes}

    def record(k, xi_k, loads_k, refs_k):
        states, w = stepper.slices(xi_k)
        u = stepper.ports(states, w, loads_k)
        y = stepper.h @ u
        port_u[:, k] = u
        port_y[:, k] = y
        for node in stepper.order:
            der_states[node][:, k] = states[node]
        inj = y[stepper.vf_row]
        vf_inputs[:, k] = (-inj.real, -inj.imag)
        for node, row in zip(stepper.pq_nodes, stepper.pq_rows):
            pr, qr = refs_k[node]
            pq_inputs[node][:, k] = (y[row].real, y[row].imag, pr, qr)

    loads_k = {n: loads_t[n][0] for n in system.load_nodes}
    refs_k = {n: (refs_t[n][0, 0], refs_t[n][1, 0]) for n in system.pq_nodes}
    record(0, xi, loads_k, refs_k)

    lu = None
    total_newton = 0
    steps_since_refresh = jacobian_refresh
    prev_key = (tuple(loads_k.items()), tuple(refs_k.items()))
    for k in range(1, n_steps + 1):
        loads_k = {n: loads_t[n][k] for n in system.load_nodes}
        refs_k = {n: (refs_t[n][0, k], refs_t[n][1, k])
                  for n in system.pq_nodes}
        key = (tuple(loads_k.items()), tuple(refs_k.items()))
        event_step = key != prev_key
        prev_key = key
        xi_prev = xi
        xi = xi.copy()
        converged = False
        res, _, _ = stepper.residual(xi, xi_prev, loads_k, refs_k)
        res_norm = np.max(np.abs(res))
        for it in range(max_newton):
            total_newton += 1
            if res_norm < newton_tol:
                converged = True
                break
            stale = steps_since_refresh >= jacobian_refresh
            if lu is None or (it == 0 and (stale or event_step)) \
                    or (it > 0 and it % 6 == 0):
                jac = stepper.numerical_jacobian(xi, xi_prev, loads_k,
                                                 refs_k, res)
                lu = scipy.linalg.lu_factor(jac)
                steps_since_refresh = 0
            dx = scipy.linalg.lu_solve(lu, res)
            # backtrack while the step makes things worse (constant-power
            # load currents are singular near zero voltage)
            alpha = 1.0
            for _ in range(8):
                cand = xi - alpha * dx
                with np.errstate(all="ignore"):
                    res_c, _, _ = stepper.residual(cand, xi_prev, loads_k,
                                                   refs_k)
                norm_c = np.max(np.abs(res_c)) if np.all(np.isfinite(res_c)) \
                    else np.inf
                if norm_c < res_norm or alpha < 1.0 / 128:
                    break
                alpha *= 0.5
            xi, res, res_norm = cand, res_c, norm_c
        if not converged:
            raise SimulationError(
                f"Newton failed to converge within {max_newton} iterations",
                time=float(times[k]))
        steps_since_refresh += 1
        record(k, xi, loads_k, refs_k)

    der_inputs = {system.vf_node: vf_inputs}
    der_inputs.update(pq_inputs)
    return SimulationResult(
        times=times, der_states=der_states, der_inputs=der_inputs,
        port_u=port_u, port_y=port_y,
        load_power={n: loads_t[n] for n in system.load_nodes},
        ref_history={n: refs_t[n] for n in system.pq_nodes},
        dt=dt, newton_iterations=total_newton,
        runtime_s=_time.perf_counter() - t_begin, label=scenario.label)


# ---------------------------------------------------------------------------
# scenario generation and training data
# ---------------------------------------------------------------------------

def random_scenario(system: MicrogridSystem, rng: np.random.Generator,
                    disturbance_range: float, duration: float, dt: float,
                    targets: str = "all", event_time: float = 0.05,
                    event_spacing: float = 0.25,
                    label: str = "") -> Scenario:
    """One random scenario with a train of step disturbances.

    Events fire every ``event_spacing`` seconds starting at ``event_time``
    so each segment carries several transient responses. ``targets`` picks
    the candidate set: "all" disturbs loads and grid-following references,
    "pq_refs" only the references. Each selected target's nominal value is
    scaled component-wise by ``1 + U(-range, range)``; at least one target
    fires per event.
    """
    if not 0.0 < disturbance_range <= 1.0:
        raise ValueError("disturbance_range must lie in (0, 1]")
    candidates: list[tuple[str, int]] = []
    if targets in ("all", "loads"):
        candidates += [("load", n) for n in system.load_nodes]
    if targets in ("all", "pq_refs"):
        candidates += [("pq_ref", n) for n in system.pq_nodes]
    if not candidates:
        raise ValueError("no disturbance targets available")

    events = []
    t_ev = event_time
    while t_ev < duration:
        picks = rng.random(len(candidates)) < 0.6
        if not np.any(picks):
            picks[rng.integers(len(candidates))] = True
        for (kind, node), selected in zip(candidates, picks):
            if not selected:
                continue
            scale_p = 1.0 + rng.uniform(-disturbance_range, disturbance_range)
            scale_q = 1.0 + rng.uniform(-disturbance_range, disturbance_range)
            if kind == "load":
                s = system.load_s[node]
                value = complex(s.real * scale_p, s.imag * scale_q)
            else:
                params = system.pq_params[node]
                value = (params.p_ref * scale_p, params.q_ref * scale_q)
            events.append(ScenarioEvent(time=t_ev, kind=kind, node=node,
                                        value=value))
        t_ev += event_spacing
    return Scenario(duration=duration, dt=dt, events=tuple(events),
                    label=label)


def result_to_segments(result: SimulationResult, der_type: str,
                       system: MicrogridSystem,
                       frame_shift: dict[int, float] | None = None
                       ) -> list[TrajectorySegment]:
    """Per-device trajectory segments of one simulation.

    ``frame_shift[node]`` is an extra rotation added on top of zeroing the
    initial PLL angle; the recorded ``frame_angle`` is the total rotation
    applied to the raw data.
    """
    frame_shift = frame_shift or {}
    pairs = VF_DQ_PAIRS if der_type == "vf" else PQ_DQ_PAIRS
    nodes = [system.vf_node] if der_type == "vf" else list(system.pq_nodes)
    segments = []
    for node in nodes:
        states = result.der_states[node]
        inputs = result.der_inputs[node]
        theta = -states[PLL_ANGLE_INDEX, 0] + frame_shift.get(node, 0.0)
        states = shift_phase(states, theta, dq_pairs=pairs,
                             angle_indices=(PLL_ANGLE_INDEX,))
        inputs = shift_phase(inputs, theta, dq_pairs=((0, 1),))
        segments.append(TrajectorySegment(
            times=result.times, states=states, inputs=inputs,
            frame_angle=float(theta)))
    return segments


def generate_training_data(system: MicrogridSystem, der_type: str,
                           n_scenarios: int, disturbance_range: float,
                           frame_augmentation: float = 0.0,
                           duration: float = 1.2, dt: float = 1e-3,
                           seed: int = 0, event_time: float = 0.05,
                           event_spacing: float = 0.25,
                           max_workers: int = 1
                           ) -> tuple[TrajectoryDataset, list[Scenario]]:
    """Simulate random scenarios and preprocess per-device segments.

    Grid-forming training disturbs loads and other devices' references;
    grid-following training disturbs only the references. Every segment is
    rotated so the initial PLL angle is zero, then (grid-forming only) by
    an extra uniform angle within ``+-frame_augmentation`` radians.
    """
    if der_type not in ("vf", "pq"):
        raise ValueError("der_type must be 'vf' or 'pq'")
    if frame_augmentation < 0:
        raise ValueError("frame_augmentation must be >= 0")
    targets = "all" if der_type == "vf" else "pq_refs"

    seeds = np.random.SeedSequence(seed).spawn(n_scenarios)

    def run(i: int) -> tuple[list[TrajectorySegment], Scenario]:
        rng = np.random.default_rng(seeds[i])
        scenario = random_scenario(system, rng, disturbance_range, duration,
                                   dt, targets=targets,
                                   event_time=event_time,
                                   event_spacing=event_spacing,
                                   label=f"{der_type}-{i:03d}")
        result = simulate_microgrid(system, scenario)
        shifts = {}
        if der_type == "vf" and frame_augmentation > 0:
            shifts[system.vf_node] = float(
                rng.uniform(-frame_augmentation, frame_augmentation))
        return result_to_segments(result, der_type, system, shifts), scenario

    outputs: list = [None] * n_scenarios
    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for i, out in enumerate(pool.map(run, range(n_scenarios))):
                outputs[i] = out
    else:
        for i in range(n_scenarios):
            outputs[i] = run(i)

    segments: list[TrajectorySegment] = []
    scenarios: list[Scenario] = []
    for segs, sc in outputs:
        segments.extend(segs)
        scenarios.append(sc)
    return TrajectoryDataset(segments=tuple(segments), dt=dt), scenarios


def steady_state_power_check(system: MicrogridSystem,
                             result: SimulationResult) -> float:
    """Mismatch between injected power and line losses at the final sample.

    Recovers interior node voltages, computes per-line losses from the full
    network and compares against the total port injection. Returns the
    absolute mismatch in per-unit power.
    """
    nodes = list(system.hybrid.nodes)
    interior = sorted(system.net.zero_injection_nodes)
    y = system.net.admittance_matrix()
    v_ports = np.array([result.port_u[i, -1] if n == system.vf_node
                        else result.port_y[i, -1]
                        for i, n in enumerate(nodes)])
    v_full = np.zeros(system.net.n_nodes, dtype=complex)
    v_full[nodes] = v_ports
    if interior:
        y_bb = y[np.ix_(interior, interior)]
        y_ba = y[np.ix_(interior, nodes)]
        v_full[interior] = np.linalg.solve(y_bb, -y_ba @ v_ports)

    s_loss = 0j
    for a, b, adm in system.net.lines:
        i_line = (v_full[a] - v_full[b]) * adm
        s_loss += abs(i_line) ** 2 / adm
    for n, adm in system.net.shunts:
        s_loss += abs(v_full[n]) ** 2 * np.conj(adm)

    i_inj = np.array([result.port_y[i, -1] if n == system.vf_node
                      else result.port_u[i, -1]
                      for i, n in enumerate(nodes)])
    s_inj = np.sum(v_ports * np.conj(i_inj))
    return float(abs(s_inj - s_loss))


__all__ = [
    "ScenarioEvent", "Scenario", "MicrogridSystem", "build_system",
    "solve_power_flow", "equilibrium_states", "SimulationResult",
    "simulate_microgrid", "random_scenario", "result_to_segments",
    "generate_training_data", "steady_state_power_check",
    "VF_INPUT_DIM", "PQ_INPUT_DIM",
]
