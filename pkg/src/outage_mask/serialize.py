"""JSON round-trips for attack vectors and measurement sets."""

from __future__ import annotations

import json

import numpy as np

from .attack import AttackVector, SolverTrace
from .case import GridCase
from .estimation import MeasurementSet

SCHEMA_VERSION = 1


def attack_to_json(av: AttackVector, case: GridCase) -> str:
    d = {"schema_version": SCHEMA_VERSION, "kind": "attack_vector"}
    d.update(av.to_dict(case))
    return json.dumps(d, indent=2)


def attack_from_json(text: str, case: GridCase) -> AttackVector:
    d = json.loads(text)
    _check_kind(d, "attack_vector")
    k = case.find_line(d["target_line"])
    loads = tuple(int(b) for b in d["delta_d_mw"])
    if loads != case.load_bus_ids:
        raise ValueError("attack vector load buses do not match the case")
    flows = d["delta_f_mw"]
    delta_f = [flows[case.line_name(l)] for l in range(case.n_line)] if isinstance(flows, dict) else flows
    return AttackVector(
        target_line=k, target_name=case.line_name(k), tau=float(d["tau"]), load_buses=loads,
        delta_d=np.array([d["delta_d_mw"][str(b)] for b in loads], dtype=float),
        delta_f=np.array(delta_f, dtype=float),
        achieved_residual=float(np.radians(d["achieved_residual_deg"])),
        residual_before=float(np.radians(d["residual_before_deg"])),
        best_fit_flow=float(d["best_fit_flow_mw"]), dp_prime=float(d["dp_prime_mw"]),
        terminal_net=tuple(d["terminal_net_mw"]), terminal_caps=tuple(d["terminal_caps_mw"]),
        fk0_mode=d["fk0_mode"], trace=SolverTrace(**d["solver"]))


def measurements_to_json(ms: MeasurementSet) -> str:
    d = {
        "schema_version": SCHEMA_VERSION,
        "kind": "measurement_set",
        "z": [float(v) for v in ms.z],
        "weights": None if ms.weights is None else [float(v) for v in ms.weights],
        "threshold": ms.threshold,
    }
    return json.dumps(d, indent=2)


def measurements_from_json(text: str) -> MeasurementSet:
    d = json.loads(text)
    _check_kind(d, "measurement_set")
    w = d.get("weights")
    return MeasurementSet(np.array(d["z"], dtype=float),
                          None if w is None else np.array(w, dtype=float), d.get("threshold"))


def _check_kind(d, kind):
    if d.get("kind") != kind:
        raise ValueError(f"expected a {kind} document, got {d.get('kind')!r}")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {d.get('schema_version')!r}")
