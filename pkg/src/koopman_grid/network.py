"""Hybrid port representation of the coupling network.

The network is a passive admittance graph in complex phasor per-unit
quantities. Grid-forming ports exchange (voltage in, current out) with the
network while grid-following and load ports exchange (current in, voltage
out), so after eliminating interior zero-injection nodes the constraint is
a single square complex matrix acting on the mixed port vector:

    [I_P1; V_P2] = H [V_P1; I_P2]

Currents are injections into the network throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import HybridMatrixError, InsufficientExcitationError

P1 = "P1"      # grid-forming ports: voltage -> network -> current
P2A = "P2a"    # grid-following ports without local load
P2B = "P2b"    # grid-following ports with local load
P2C = "P2c"    # load-only ports


@dataclass(frozen=True)
class NetworkModel:
    """Admittance description of the microgrid backbone.

    ``lines`` are (from, to, admittance) tuples in per-unit siemens;
    ``shunts`` map node -> shunt admittance (constant-impedance elements
    folded into the diagonal). Node ids are 0-based integers.
    """

    n_nodes: int
    lines: tuple[tuple[int, int, complex], ...]
    shunts: tuple[tuple[int, complex], ...] = ()
    zero_injection_nodes: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "lines",
                           tuple((int(a), int(b), complex(y))
                                 for a, b, y in self.lines))
        object.__setattr__(self, "shunts",
                           tuple((int(n), complex(y)) for n, y in self.shunts))
        object.__setattr__(self, "zero_injection_nodes",
                           frozenset(int(n) for n in self.zero_injection_nodes))
        for a, b, y in self.lines:
            if not (0 <= a < self.n_nodes and 0 <= b < self.n_nodes):
                raise ValueError(f"line ({a},{b}) references unknown node")
            if a == b:
                raise ValueError("self-loop lines are not allowed")
            if y == 0:
                raise ValueError("line admittance must be nonzero")
        if not self.is_connected():
            raise ValueError("network graph is not connected")

    def admittance_matrix(self) -> np.ndarray:
        """Bus admittance matrix including shunt elements."""
        y = np.zeros((self.n_nodes, self.n_nodes), dtype=complex)
        for a, b, adm in self.lines:
            y[a, a] += adm
            y[b, b] += adm
            y[a, b] -= adm
            y[b, a] -= adm
        for n, adm in self.shunts:
            y[n, n] += adm
        return y

    def is_connected(self) -> bool:
        if self.n_nodes <= 1:
            return True
        seen = {0}
        frontier = [0]
        adj: dict[int, list[int]] = {i: [] for i in range(self.n_nodes)}
        for a, b, _ in self.lines:
            adj[a].append(b)
            adj[b].append(a)
        while frontier:
            node = frontier.pop()
            for nxt in adj[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return len(seen) == self.n_nodes


@dataclass(frozen=True)
class HybridNetwork:
    """Mixed-port constraint matrix with its node bookkeeping.

    The port vector order is ``[P1 nodes..., P2 nodes...]`` where ``P2``
    concatenates the P2a, P2b and P2c groups in the order given at
    construction. ``apply`` maps ``u = [V_P1; I_P2]`` to
    ``y = [I_P1; V_P2]``.
    """

    H: np.ndarray
    partition_p1: tuple[int, ...]
    partition_p2: tuple[int, ...]
    p2_tags: tuple[str, ...]
    residual: float = 0.0

    def __post_init__(self):
        n = len(self.partition_p1) + len(self.partition_p2)
        if self.H.shape != (n, n):
            raise ValueError("H must be square over all ports")
        if len(self.p2_tags) != len(self.partition_p2):
            raise ValueError("every P2 node needs a tag")
        for tag in self.p2_tags:
            if tag not in (P2A, P2B, P2C):
                raise ValueError(f"unknown partition tag {tag!r}")

    @property
    def nodes(self) -> tuple[int, ...]:
        return self.partition_p1 + self.partition_p2

    @property
    def n_ports(self) -> int:
        return self.H.shape[0]

    def port_index(self, node: int) -> int:
        return self.nodes.index(node)

    def nodes_with_tag(self, tag: str) -> tuple[int, ...]:
        if tag == P1:
            return self.partition_p1
        return tuple(n for n, t in zip(self.partition_p2, self.p2_tags)
                     if t == tag)

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.H @ u

    def to_dict(self) -> dict:
        return {
            "H": [[[v.real, v.imag] for v in row] for row in self.H],
            "partition_p1": list(self.partition_p1),
            "partition_p2": list(self.partition_p2),
            "p2_tags": list(self.p2_tags),
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HybridNetwork":
        h = np.asarray(data["H"], dtype=float)
        return cls(
            H=h[..., 0] + 1j * h[..., 1],
            partition_p1=tuple(data["partition_p1"]),
            partition_p2=tuple(data["partition_p2"]),
            p2_tags=tuple(data["p2_tags"]),
            residual=data.get("residual", 0.0),
        )


def kron_reduce(y: np.ndarray, keep: list[int], remove: list[int]) -> np.ndarray:
    """Eliminate zero-injection nodes by the Schur complement.

    Returns the reduced admittance over ``keep`` (in that order).
    """
    y = np.asarray(y, dtype=complex)
    keep = list(keep)
    remove = list(remove)
    if not remove:
        return y[np.ix_(keep, keep)]
    y_aa = y[np.ix_(keep, keep)]
    y_ab = y[np.ix_(keep, remove)]
    y_ba = y[np.ix_(remove, keep)]
    y_bb = y[np.ix_(remove, remove)]
    try:
        fill = np.linalg.solve(y_bb, y_ba)
    except np.linalg.LinAlgError:
        raise HybridMatrixError(
            "interior (zero-injection) block is singular; the reduced "
            "network does not exist for this partition") from None
    return y_aa - y_ab @ fill


def existence_check(net: NetworkModel) -> tuple[bool, str]:
    """Sufficient condition for the hybrid matrix to exist.

    Guaranteed when every line is dissipative (strictly positive
    conductance), or when the connected network carries no shunt elements
    at all. Outside these cases existence is not ruled out, only not
    guaranteed.
    """
    if not net.is_connected():
        return False, "network graph is not connected"
    if all(y.real > 0 for _, _, y in net.lines):
        return True, "all lines are dissipative (positive conductance)"
    if not net.shunts:
        return True, "connected network without shunt elements"
    lossless = [f"{a}-{b}" for a, b, y in net.lines if y.real <= 0]
    return False, ("existence not guaranteed: shunt elements present and "
                   f"line(s) {', '.join(lossless)} have no positive "
                   "conductance")


def hybrid_from_admittance(net: NetworkModel,
                           p1: list[int],
                           p2: list[int],
                           p2_tags: list[str] | None = None) -> HybridNetwork:
    """Build the hybrid matrix analytically from the admittance matrix.

    Zero-injection nodes are Kron-reduced first; the P2 block is then
    switched from admittance form to the mixed form. With reduced blocks
    ``[[Y11, Y12], [Y21, Y22]]`` partitioned by (P1, P2),

        H = [[Y11 - Y12 Y22^-1 Y21,  Y12 Y22^-1],
             [       -Y22^-1 Y21,       Y22^-1]].
    """
    p1 = [int(n) for n in p1]
    p2 = [int(n) for n in p2]
    ports = p1 + p2
    interior = sorted(net.zero_injection_nodes)
    if set(ports) & set(interior):
        raise ValueError("port nodes cannot be zero-injection nodes")
    if len(set(ports)) != len(ports):
        raise ValueError("duplicate port nodes")
    if p2_tags is None:
        p2_tags = [P2A] * len(p2)

    y_full = net.admittance_matrix()
    y_red = kron_reduce(y_full, ports, interior)

    n1 = len(p1)
    y11 = y_red[:n1, :n1]
    y12 = y_red[:n1, n1:]
    y21 = y_red[n1:, :n1]
    y22 = y_red[n1:, n1:]

    if len(p2) == 0:
        h = y_red
    else:
        try:
            y22_inv = np.linalg.inv(y22)
        except np.linalg.LinAlgError:
            raise HybridMatrixError(
                "P2 admittance block is singular; the hybrid matrix does "
                "not exist for this partition (a dissipative-line or "
                "no-shunt network avoids this)") from None
        h = np.block([
            [y11 - y12 @ y22_inv @ y21, y12 @ y22_inv],
            [-y22_inv @ y21, y22_inv],
        ])

    return HybridNetwork(H=h, partition_p1=tuple(p1), partition_p2=tuple(p2),
                         p2_tags=tuple(p2_tags))


def hybrid_from_measurements(samples: list[tuple[np.ndarray, np.ndarray]],
                             partition_p1: tuple[int, ...],
                             partition_p2: tuple[int, ...],
                             p2_tags: tuple[str, ...] | None = None,
                             rcond: float = 1e-10) -> HybridNetwork:
    """Fit H from measured (u, y) port-vector pairs by least squares.

    ``samples`` holds complex port vectors with the same ordering as
    :class:`HybridNetwork`. The sample matrix must have full row rank;
    otherwise the excitation does not determine H.
    """
    if not samples:
        raise InsufficientExcitationError("no samples given")
    u_mat = np.column_stack([np.asarray(u, dtype=complex) for u, _ in samples])
    y_mat = np.column_stack([np.asarray(y, dtype=complex) for _, y in samples])
    n = u_mat.shape[0]
    if u_mat.shape[1] < n:
        raise InsufficientExcitationError(
            f"need at least {n} samples to determine a {n}x{n} map, "
            f"got {u_mat.shape[1]}")
    rank = np.linalg.matrix_rank(u_mat, tol=rcond * np.linalg.norm(u_mat, 2))
    if rank < n:
        raise InsufficientExcitationError(
            f"sample matrix rank {rank} < {n}; excitation is insufficient")
    h, *_ = np.linalg.lstsq(u_mat.conj().T, y_mat.conj().T, rcond=None)
    h = h.conj().T
    residual = float(np.linalg.norm(y_mat - h @ u_mat))
    if p2_tags is None:
        p2_tags = tuple(P2A for _ in partition_p2)
    return HybridNetwork(H=h, partition_p1=tuple(partition_p1),
                         partition_p2=tuple(partition_p2),
                         p2_tags=tuple(p2_tags), residual=residual)


def solve_mixed_ports(net: NetworkModel, p1: list[int], p2: list[int],
                      v_p1: np.ndarray, i_p2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the full network for mixed boundary conditions.

    Voltages are prescribed at P1 nodes and injections at P2 nodes; every
    other node has zero injection. Returns ``(I_P1, V_P2)`` computed from
    the complete admittance system, independent of the hybrid matrix path.
    """
    y = net.admittance_matrix()
    n = net.n_nodes
    others = [k for k in range(n) if k not in p1]
    i_vec = np.zeros(n, dtype=complex)
    for node, inj in zip(p2, i_p2):
        i_vec[node] = inj
    # partition I = Y V with V known on p1
    y_oo = y[np.ix_(others, others)]
    y_op = y[np.ix_(others, p1)]
    v = np.zeros(n, dtype=complex)
    v[p1] = v_p1
    v[others] = np.linalg.solve(y_oo, i_vec[others] - y_op @ v_p1)
    i_full = y @ v
    return i_full[p1], v[p2]


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def network_from_dict(data: dict) -> tuple[NetworkModel, dict]:
    """Parse the JSON network description.

    Expected keys: ``nodes`` (list of names or count), ``lines`` with
    ``{from, to, r, x}`` in per-unit impedance, optional ``shunts`` with
    ``{node, g, b}``, ``partitions`` mapping tag -> node list, and optional
    ``bases``. Returns the network plus the partition mapping.
    """
    nodes = data["nodes"]
    n_nodes = len(nodes) if isinstance(nodes, list) else int(nodes)
    name_to_idx = ({str(name): i for i, name in enumerate(nodes)}
                   if isinstance(nodes, list) else {})

    def node_id(v) -> int:
        if isinstance(v, str):
            return name_to_idx[v]
        return int(v)

    lines = []
    for ln in data["lines"]:
        z = complex(float(ln["r"]), float(ln["x"]))
        if z == 0:
            raise ValueError("line impedance must be nonzero")
        lines.append((node_id(ln["from"]), node_id(ln["to"]), 1.0 / z))
    shunts = [(node_id(sh["node"]), complex(float(sh.get("g", 0.0)),
                                            float(sh.get("b", 0.0))))
              for sh in data.get("shunts", [])]

    partitions = {tag: [node_id(v) for v in vals]
                  for tag, vals in data.get("partitions", {}).items()}
    ported = set()
    for vals in partitions.values():
        ported.update(vals)
    zero_inj = data.get("zero_injection_nodes")
    if zero_inj is None:
        zero_inj = [i for i in range(n_nodes) if i not in ported]
    else:
        zero_inj = [node_id(v) for v in zero_inj]

    net = NetworkModel(n_nodes=n_nodes, lines=tuple(lines),
                       shunts=tuple(shunts),
                       zero_injection_nodes=frozenset(zero_inj))
    return net, partitions


def load_network_file(path) -> tuple[NetworkModel, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))


__all__ = [
    "P1", "P2A", "P2B", "P2C", "NetworkModel", "HybridNetwork",
    "kron_reduce", "existence_check", "hybrid_from_admittance",
    "hybrid_from_measurements", "solve_mixed_ports", "network_from_dict",
    "load_network_file",
]
