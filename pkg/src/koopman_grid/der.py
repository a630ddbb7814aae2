"""Ground-truth inverter subsystem models.

Both device types are control-affine ODEs in a global DQ frame spinning at
the nominal frequency, with ten states each:

* grid-forming ("Vf"): regulates voltage magnitude and frequency; input is
  the node current flowing from the network into the device, output is the
  filter-capacitor (node) voltage.
* grid-following ("PQ"): tracks active/reactive power setpoints behind a
  PLL; input is the node voltage, output is the current injected into the
  network (a state of the model).

State layout (index: meaning)::

    0  PLL integrator            1  PLL angle (rad)
    2  outer-loop d integrator   3  outer-loop q integrator
    4  current-loop d integrator 5  current-loop q integrator
    Vf: 6,7 capacitor voltage DQ;   8,9 inductor current DQ
    PQ: 6,7 inductor current DQ;    8,9 injected node current DQ

The cascade is PLL -> outer regulator -> proportional-integral current
regulator with reference feedforward -> RL(C) filter. Grid-forming outer
integrators are gain-premultiplied (they accumulate gain times error) so
every state evolves at the per-unit scale of the quantity it trims;
grid-following outer integrators accumulate the raw power error, whose
input coupling is part of the control-affine structure. Local-frame
quantities are global DQ pairs rotated by minus the PLL angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_DER_STATES = 10
#: nominal angular frequency of the rotating frame, rad/s (60 Hz system)
OMEGA_NOMINAL = 2.0 * math.pi * 60.0


def _check_positive(**vals):
    for name, v in vals.items():
        if not v > 0:
            raise ValueError(f"{name} must be > 0, got {v}")


@dataclass(frozen=True)
class VfDerParams:
    """Grid-forming inverter parameters (per-unit; time constants in s).

    ``filter_l`` and ``filter_c`` are the effective inductance/capacitance
    appearing as 1/L and 1/C in the per-second equations (per-unit
    reactance and susceptance divided by the base angular frequency).
    """

    kp_pll: float
    ki_pll: float
    kp_vreg: float
    ki_vreg: float
    kp_ireg: float
    ki_ireg: float
    filter_l: float
    filter_r: float
    filter_c: float
    v_ref: float = 1.0
    omega: float = OMEGA_NOMINAL

    def __post_init__(self):
        _check_positive(kp_pll=self.kp_pll, ki_pll=self.ki_pll,
                        kp_vreg=self.kp_vreg, ki_vreg=self.ki_vreg,
                        kp_ireg=self.kp_ireg, ki_ireg=self.ki_ireg,
                        filter_l=self.filter_l, filter_c=self.filter_c)
        if self.filter_r < 0:
            raise ValueError("filter_r must be >= 0")


@dataclass(frozen=True)
class PqDerParams:
    """Grid-following inverter parameters (per-unit; see VfDerParams)."""

    kp_pll: float
    ki_pll: float
    kp_pqreg: float
    ki_pqreg: float
    kp_ireg: float
    ki_ireg: float
    filter_l: float
    filter_r: float
    filter_c: float
    p_ref: float = 0.0
    q_ref: float = 0.0
    v_nom: float = 1.0
    omega: float = OMEGA_NOMINAL

    def __post_init__(self):
        _check_positive(kp_pll=self.kp_pll, ki_pll=self.ki_pll,
                        kp_pqreg=self.kp_pqreg, ki_pqreg=self.ki_pqreg,
                        kp_ireg=self.kp_ireg, ki_ireg=self.ki_ireg,
                        filter_l=self.filter_l, filter_c=self.filter_c,
                        v_nom=self.v_nom)
        if self.filter_r < 0:
            raise ValueError("filter_r must be >= 0")


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

def vf_derivative(x: np.ndarray, u, p: VfDerParams) -> np.ndarray:
    """Time derivative of the grid-forming inverter state.

    ``u = (I_D, I_Q)`` is the node current flowing from the network into
    the device. The derivative is affine in ``u`` with the input fields
    given by :func:`vf_input_fields`.
    """
    x = np.asarray(x, dtype=float)
    i_nd, i_nq = float(u[0]), float(u[1])
    x1, x2, x3, x4, x5, x6, vcd, vcq, ild, ilq = x
    sin2, cos2 = math.sin(x2), math.cos(x2)

    pll_err = -vcd * sin2 + vcq * cos2
    freq_dev = p.kp_pll * pll_err + p.ki_pll * x1
    v_err = p.v_ref - math.hypot(vcd, vcq)

    # outer loop: premultiplied integrators x3, x4 hold the current command
    iref_d = p.kp_vreg * v_err + x3
    iref_q = p.kp_vreg * (-freq_dev) + x4

    iloc_d = cos2 * i_nd + sin2 * i_nq
    iloc_q = -sin2 * i_nd + cos2 * i_nq
    dx5 = iref_d - iloc_d
    dx6 = iref_q - iloc_q

    vt_loc_d = p.kp_ireg * dx5 + p.ki_ireg * x5 + p.v_ref
    vt_loc_q = p.kp_ireg * dx6 + p.ki_ireg * x6
    vt_d = cos2 * vt_loc_d - sin2 * vt_loc_q
    vt_q = sin2 * vt_loc_d + cos2 * vt_loc_q

    return np.array([
        pll_err,
        freq_dev,
        p.ki_vreg * v_err,
        p.ki_vreg * (-freq_dev),
        dx5,
        dx6,
        p.omega * vcq + (ild + i_nd) / p.filter_c,
        -p.omega * vcd + (ilq + i_nq) / p.filter_c,
        p.omega * ilq + (vt_d - vcd - p.filter_r * ild) / p.filter_l,
        -p.omega * ild + (vt_q - vcq - p.filter_r * ilq) / p.filter_l,
    ])


def vf_input_fields(x: np.ndarray, p: VfDerParams) -> tuple[np.ndarray, np.ndarray]:
    """Input fields (g1, g2) of the grid-forming model."""
    x2 = float(x[1])
    sin2, cos2 = math.sin(x2), math.cos(x2)
    g1 = np.array([0.0, 0.0, 0.0, 0.0, -cos2, sin2,
                   1.0 / p.filter_c, 0.0, -p.kp_ireg / p.filter_l, 0.0])
    g2 = np.array([0.0, 0.0, 0.0, 0.0, -sin2, -cos2,
                   0.0, 1.0 / p.filter_c, 0.0, -p.kp_ireg / p.filter_l])
    return g1, g2


def pq_derivative(x: np.ndarray, u, p: PqDerParams,
                  p_ref: float | None = None,
                  q_ref: float | None = None) -> np.ndarray:
    """Time derivative of the grid-following inverter state.

    ``u = (V_D, V_Q)`` is the node voltage. Power setpoints default to the
    parameter values; scenario event handling may override them per call.
    The injected node current is part of the state, with the filter
    capacitor eliminated through its quasi-stationary current balance.
    """
    x = np.asarray(x, dtype=float)
    vnd, vnq = float(u[0]), float(u[1])
    pref = p.p_ref if p_ref is None else p_ref
    qref = p.q_ref if q_ref is None else q_ref
    x1, x2, x3, x4, x5, x6, ild, ilq, ind, inq = x
    sin2, cos2 = math.sin(x2), math.cos(x2)

    pll_err = -vnd * sin2 + vnq * cos2
    freq_dev = p.kp_pll * pll_err + p.ki_pll * x1

    p_meas = vnd * ind + vnq * inq
    q_meas = vnq * ind - vnd * inq
    e_p = pref - p_meas
    e_q = q_meas - qref

    # outer loop: integral trim around the reference-current feedforward
    iref_d = p.kp_pqreg * e_p + p.ki_pqreg * x3 + pref / p.v_nom
    iref_q = p.kp_pqreg * e_q + p.ki_pqreg * x4 - qref / p.v_nom

    iloc_d = cos2 * ind + sin2 * inq
    iloc_q = -sin2 * ind + cos2 * inq
    dx5 = iref_d - iloc_d
    dx6 = iref_q - iloc_q

    vt_loc_d = p.kp_ireg * dx5 + p.ki_ireg * x5 + p.v_nom
    vt_loc_q = p.kp_ireg * dx6 + p.ki_ireg * x6
    vt_d = cos2 * vt_loc_d - sin2 * vt_loc_q
    vt_q = sin2 * vt_loc_d + cos2 * vt_loc_q

    dild = p.omega * ilq + (vt_d - vnd - p.filter_r * ild) / p.filter_l
    dilq = -p.omega * ild + (vt_q - vnq - p.filter_r * ilq) / p.filter_l

    return np.array([
        pll_err,
        freq_dev,
        e_p,
        e_q,
        dx5,
        dx6,
        dild,
        dilq,
        dild + p.omega * (ilq - inq) - p.omega ** 2 * p.filter_c * vnd,
        dilq - p.omega * (ild - ind) - p.omega ** 2 * p.filter_c * vnq,
    ])


def pq_input_fields(x: np.ndarray, p: PqDerParams) -> tuple[np.ndarray, np.ndarray]:
    """Input fields (g1, g2) of the grid-following model with respect to
    the node-voltage input."""
    x = np.asarray(x, dtype=float)
    x2 = float(x[1])
    ind, inq = float(x[8]), float(x[9])
    sin2, cos2 = math.sin(x2), math.cos(x2)
    kk = p.kp_ireg * p.kp_pqreg / p.filter_l
    wc2 = p.omega ** 2 * p.filter_c

    dvt_d_dvd = kk * (-ind * cos2 + inq * sin2)
    dvt_q_dvd = kk * (-ind * sin2 - inq * cos2)
    dvt_d_dvq = kk * (-inq * cos2 - ind * sin2)
    dvt_q_dvq = kk * (-inq * sin2 + ind * cos2)

    g1 = np.array([
        -sin2,
        -p.kp_pll * sin2,
        -ind,
        -inq,
        -p.kp_pqreg * ind,
        -p.kp_pqreg * inq,
        dvt_d_dvd - 1.0 / p.filter_l,
        dvt_q_dvd,
        dvt_d_dvd - 1.0 / p.filter_l - wc2,
        dvt_q_dvd,
    ])
    g2 = np.array([
        cos2,
        p.kp_pll * cos2,
        -inq,
        ind,
        -p.kp_pqreg * inq,
        p.kp_pqreg * ind,
        dvt_d_dvq,
        dvt_q_dvq - 1.0 / p.filter_l,
        dvt_d_dvq,
        dvt_q_dvq - 1.0 / p.filter_l - wc2,
    ])
    return g1, g2


VF_OUTPUT_ROWS = (6, 7)   # capacitor (node) voltage
PQ_OUTPUT_ROWS = (8, 9)   # injected node current

VF_DQ_PAIRS = ((6, 7), (8, 9))
PQ_DQ_PAIRS = ((6, 7), (8, 9))
PLL_ANGLE_INDEX = 1


# ---------------------------------------------------------------------------
# reference-frame rotation
# ---------------------------------------------------------------------------

def shift_phase(values: np.ndarray, theta: float,
                dq_pairs=((0, 1),), angle_indices=(),
                wrap: bool = True) -> np.ndarray:
    """Rotate DQ pairs by ``theta`` and shift angle entries additively.

    Each ``(d, q)`` index pair is treated as the complex number
    ``v = values[d] + j values[q]`` and replaced by ``v * exp(j theta)``.
    Works on vectors or on ``(n, N)`` trajectories (rows are components).
    """
    out = np.array(values, dtype=float, copy=True)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    for d, q in dq_pairs:
        vd = out[d].copy() if out.ndim > 1 else float(out[d])
        vq = out[q].copy() if out.ndim > 1 else float(out[q])
        out[d] = vd * cos_t - vq * sin_t
        out[q] = vd * sin_t + vq * cos_t
    for idx in angle_indices:
        shifted = out[idx] + theta
        if wrap:
            if out.ndim > 1:
                out[idx] = np.asarray([wrap_angle(v) for v in shifted])
            else:
                out[idx] = wrap_angle(float(shifted))
        else:
            out[idx] = shifted
    return out


def shift_der_state(x: np.ndarray, theta: float, kind: str) -> np.ndarray:
    """Rotate a DER state (or state trajectory) into a new global frame."""
    pairs = VF_DQ_PAIRS if kind == "vf" else PQ_DQ_PAIRS
    return shift_phase(x, theta, dq_pairs=pairs,
                       angle_indices=(PLL_ANGLE_INDEX,))


def rotate_complex(value: complex, theta: float) -> complex:
    """Rotate a phasor by ``theta`` radians."""
    return value * complex(math.cos(theta), math.sin(theta))


# ---------------------------------------------------------------------------
# per-device equilibria
# ---------------------------------------------------------------------------

def vf_equilibrium(v_node: complex, i_into_device: complex,
                   p: VfDerParams) -> np.ndarray:
    """Closed-form equilibrium of the Vf model at a solved operating point.

    ``v_node`` is the capacitor (node) voltage phasor, ``i_into_device``
    the node current in device orientation. The operating point must have
    ``abs(v_node) == v_ref`` for the voltage integrator to be stationary.
    """
    x2 = math.atan2(v_node.imag, v_node.real)
    u_loc = rotate_complex(i_into_device, -x2)
    i_l = 1j * p.omega * p.filter_c * v_node - i_into_device
    v_t = v_node + (p.filter_r + 1j * p.omega * p.filter_l) * i_l
    vt_loc = rotate_complex(v_t, -x2)
    return np.array([
        0.0,
        wrap_angle(x2),
        u_loc.real,
        u_loc.imag,
        (vt_loc.real - p.v_ref) / p.ki_ireg,
        vt_loc.imag / p.ki_ireg,
        v_node.real, v_node.imag,
        i_l.real, i_l.imag,
    ])


def pq_equilibrium(v_node: complex, p: PqDerParams,
                   p_ref: float | None = None,
                   q_ref: float | None = None) -> np.ndarray:
    """Closed-form equilibrium of the PQ model at a given node voltage."""
    pref = p.p_ref if p_ref is None else p_ref
    qref = p.q_ref if q_ref is None else q_ref
    x2 = math.atan2(v_node.imag, v_node.real)
    i_n = (complex(pref, qref) / v_node).conjugate()
    i_loc = rotate_complex(i_n, -x2)
    i_l = i_n + 1j * p.omega * p.filter_c * v_node
    v_t = v_node + (p.filter_r + 1j * p.omega * p.filter_l) * i_l
    vt_loc = rotate_complex(v_t, -x2)
    return np.array([
        0.0,
        wrap_angle(x2),
        (i_loc.real - pref / p.v_nom) / p.ki_pqreg,
        (i_loc.imag + qref / p.v_nom) / p.ki_pqreg,
        (vt_loc.real - p.v_nom) / p.ki_ireg,
        vt_loc.imag / p.ki_ireg,
        i_l.real, i_l.imag,
        i_n.real, i_n.imag,
    ])


__all__ = [
    "N_DER_STATES", "OMEGA_NOMINAL", "VfDerParams", "PqDerParams",
    "vf_derivative", "vf_input_fields", "pq_derivative", "pq_input_fields",
    "VF_OUTPUT_ROWS", "PQ_OUTPUT_ROWS", "VF_DQ_PAIRS", "PQ_DQ_PAIRS",
    "PLL_ANGLE_INDEX", "wrap_angle", "shift_phase", "shift_der_state",
    "rotate_complex", "vf_equilibrium", "pq_equilibrium",
]
