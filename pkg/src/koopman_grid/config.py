"""System description files.

A system file bundles the network graph, the partition of ports, the
device parameters and the nominal loads. Per-unit line impedances and
filter reactances/susceptances are converted to effective values using the
base frequency; consumed load powers are stored internally as injections
(negated).
"""

from __future__ import annotations

import json
import math
from importlib import resources

from .der import PqDerParams, VfDerParams
from .network import network_from_dict
from .simulation import MicrogridSystem, build_system

CANONICAL_NAME = "canonical7"


def _filter_effective(filt: dict, omega_base: float) -> tuple[float, float, float]:
    return (float(filt["l_pu"]) / omega_base,
            float(filt.get("r_pu", 0.0)),
            float(filt["c_pu"]) / omega_base)


def system_from_dict(data: dict) -> MicrogridSystem:
    net, partitions = network_from_dict(data)
    omega_base = 2.0 * math.pi * float(data["base"]["frequency_hz"])

    nodes = data["nodes"]
    name_to_idx = {str(name): i for i, name in enumerate(nodes)} \
        if isinstance(nodes, list) else {}

    def node_id(v) -> int:
        return name_to_idx[v] if isinstance(v, str) else int(v)

    vf_cfg = data["vf"]
    l_eff, r_eff, c_eff = _filter_effective(vf_cfg["filter"], omega_base)
    vf_params = VfDerParams(
        kp_pll=vf_cfg["kp_pll"], ki_pll=vf_cfg["ki_pll"],
        kp_vreg=vf_cfg["kp_vreg"], ki_vreg=vf_cfg["ki_vreg"],
        kp_ireg=vf_cfg["kp_ireg"], ki_ireg=vf_cfg["ki_ireg"],
        filter_l=l_eff, filter_r=r_eff, filter_c=c_eff,
        v_ref=vf_cfg.get("v_ref", 1.0), omega=omega_base)

    pq_cfg = data["pq_control"]
    l_eff, r_eff, c_eff = _filter_effective(pq_cfg["filter"], omega_base)
    pq_params = {}
    for unit in data["pq_units"]:
        pq_params[node_id(unit["node"])] = PqDerParams(
            kp_pll=pq_cfg["kp_pll"], ki_pll=pq_cfg["ki_pll"],
            kp_pqreg=pq_cfg["kp_pqreg"], ki_pqreg=pq_cfg["ki_pqreg"],
            kp_ireg=pq_cfg["kp_ireg"], ki_ireg=pq_cfg["ki_ireg"],
            filter_l=l_eff, filter_r=r_eff, filter_c=c_eff,
            p_ref=float(unit["p_ref"]), q_ref=float(unit["q_ref"]),
            omega=omega_base)

    # consumed power in the file, injection internally
    load_s = {node_id(ld["node"]): -complex(float(ld["p"]), float(ld["q"]))
              for ld in data.get("loads", [])}

    return build_system(net, partitions, vf_params, pq_params, load_s)


def load_system_file(path) -> tuple[MicrogridSystem, dict]:
    """Load a system description; the raw dict is returned for hashing."""
    if str(path) == CANONICAL_NAME:
        text = resources.files("koopman_grid.data").joinpath(
            "canonical7.json").read_text(encoding="utf-8")
        data = json.loads(text)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    return system_from_dict(data), data


def canonical_system() -> MicrogridSystem:
    """The checked-in desk-scale test system (seven buses, one
    grid-forming and three identical grid-following units, two loads)."""
    return load_system_file(CANONICAL_NAME)[0]


__all__ = ["system_from_dict", "load_system_file", "canonical_system",
           "CANONICAL_NAME"]
