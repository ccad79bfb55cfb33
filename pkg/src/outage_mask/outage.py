"""Single-line outage simulation.

An outage of line k (terminals i, j) on the intact topology is reproduced by
adding a compensating transfer ``dp`` from bus i to bus j::

    P_post = P_pre + e * dp,     dp = -gamma * f_k
    gamma  = x_k / (Xth - x_k),  Xth = Binv[i,i] + Binv[j,j] - 2 Binv[i,j]

so the line then carries exactly the injected transfer and the rest of the
network sees the post-outage flows. ``Xth`` is the Thevenin reactance
between i and j of the intact network; it equals ``x_k`` only for a bridge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case import GridCase, is_connected
from .dc import DcModel, build_dc_model, line_flows, solve_angles
from .errors import DegenerateOutageError, TopologyError

DEGENERACY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class OutageScenario:
    k: int
    gamma: float
    e_vec: np.ndarray
    f_k0_actual: float
    p_pre: np.ndarray


@dataclass(frozen=True)
class TheveninParts:
    x_k: float
    binv_ii: float
    binv_jj: float
    binv_ij: float
    xth: float
    gamma: float


def terminal_vector(model: DcModel, k: int) -> np.ndarray:
    e = np.zeros(model.n_bus)
    e[model.case.line_from[k]] = 1.0
    e[model.case.line_to[k]] = -1.0
    return e


def thevenin(model: DcModel, k) -> TheveninParts:
    case = model.case
    k = case.find_line(k)
    i, j = case.line_from[k], case.line_to[k]
    Bi = model.Binv_ext
    x_k = float(case.reactance[k])
    xth = float(Bi[i, i] + Bi[j, j] - 2.0 * Bi[i, j])
    denom = xth - x_k
    if abs(denom) < DEGENERACY_TOL:
        raise DegenerateOutageError(
            f"line {case.line_name(k)} is islanding: Thevenin reactance equals its reactance")
    return TheveninParts(x_k, float(Bi[i, i]), float(Bi[j, j]), float(Bi[i, j]), xth, x_k / denom)


def gamma(model: DcModel, k) -> float:
    return thevenin(model, k).gamma


def all_gammas(model: DcModel, lines) -> np.ndarray:
    """Vectorized gamma for many lines; NaN where the outage is degenerate."""
    lines = np.asarray(lines, dtype=np.int64)
    i = model.case.line_from[lines]
    j = model.case.line_to[lines]
    Bi = model.Binv_ext
    xth = Bi[i, i] + Bi[j, j] - 2.0 * Bi[i, j]
    x = model.case.reactance[lines]
    denom = xth - x
    out = np.full(len(lines), np.nan)
    ok = np.abs(denom) >= DEGENERACY_TOL
    out[ok] = x[ok] / denom[ok]
    return out


def make_scenario(model: DcModel, k, p_pre=None) -> OutageScenario:
    """Outage scenario for line ``k``; ``p_pre`` defaults to the case injections."""
    case = model.case
    k = case.find_line(k)
    if p_pre is None:
        p_pre = case.injections_pu()
    p_pre = np.asarray(p_pre, dtype=float)
    g = gamma(model, k)
    f0 = float(line_flows(model, solve_angles(model, p_pre))[k])
    return OutageScenario(k, g, terminal_vector(model, k), f0, p_pre)


def equivalent_injection(scenario: OutageScenario, f: float) -> float:
    """Compensating transfer for a pre-outage flow ``f`` (pu)."""
    return -scenario.gamma * f


def post_outage_angles_equiv(model: DcModel, scenario: OutageScenario) -> np.ndarray:
    dp = equivalent_injection(scenario, scenario.f_k0_actual)
    return solve_angles(model, scenario.p_pre + scenario.e_vec * dp)


def post_outage_angles_exact(case: GridCase, k, p_pre) -> np.ndarray:
    """Angles after removing line ``k`` and re-solving the DC network."""
    k = case.find_line(k)
    if not is_connected(case, skip=k):
        raise TopologyError(f"removing line {case.line_name(k)} islands the network")
    x_inv = np.where(case.in_service, 1.0 / case.reactance, 0.0)
    x_inv[k] = 0.0
    try:
        out_model = build_dc_model(case, x_inv=x_inv)
    except TopologyError:
        raise TopologyError(f"removing line {case.line_name(k)} islands the network") from None
    return solve_angles(out_model, p_pre)
