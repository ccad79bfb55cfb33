"""Dense DC power-flow model: susceptance matrix, angles, flows, shift factors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .case import GridCase, build_incidence
from .errors import TopologyError, UnbalancedInjectionError

BALANCE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class DcModel:
    """DC network matrices for one topology.

    ``Binv_ext`` is the inverse of the slack-reduced susceptance matrix
    embedded into N x N with a zero slack row and column.
    """

    case: GridCase
    W: np.ndarray
    X_inv: np.ndarray          # 1/x per line, 0 for out-of-service lines
    B_full: np.ndarray
    B_red_factor: tuple        # scipy cho_factor output for the reduced matrix
    Binv_ext: np.ndarray
    S: np.ndarray              # L x N shift factors, slack column zero
    slack: int
    keep: np.ndarray           # non-slack bus indices

    @property
    def n_bus(self) -> int:
        return self.B_full.shape[0]

    @property
    def n_line(self) -> int:
        return self.W.shape[1]

    def pivots(self) -> np.ndarray:
        """Cholesky pivots of the reduced matrix (squared factor diagonal)."""
        return np.diag(self.B_red_factor[0]) ** 2


@dataclass(frozen=True, eq=False)
class Jacobian:
    """Measurement matrix stacking injections, +flows and -flows."""

    H: np.ndarray
    n_bus: int
    n_line: int
    slack: int


def susceptance(W, x_inv):
    """B = W diag(x_inv) W^T, accumulated entrywise so it is exactly symmetric."""
    N = W.shape[0]
    f = np.argmax(W > 0, axis=0)
    t = np.argmax(W < 0, axis=0)
    B = np.zeros((N, N))
    np.add.at(B, (f, f), x_inv)
    np.add.at(B, (t, t), x_inv)
    np.add.at(B, (f, t), -x_inv)
    np.add.at(B, (t, f), -x_inv)
    return B


def _factor_reduced(B_full, keep):
    B_red = B_full[np.ix_(keep, keep)]
    try:
        factor = linalg.cho_factor(B_red, lower=False, check_finite=True)
    except linalg.LinAlgError:
        raise TopologyError("reduced susceptance matrix is singular: network is disconnected") from None
    # cho_factor accepts some semidefinite matrices with tiny pivots
    piv = np.diag(factor[0]) ** 2
    if piv.min() <= 1e-12 * piv.max():
        raise TopologyError("reduced susceptance matrix is singular: network is disconnected")
    return factor


def build_dc_model(case: GridCase, x_inv: np.ndarray | None = None) -> DcModel:
    """Build the DC model. ``x_inv`` overrides the per-line susceptances
    (used to drop a line for exact outage solves)."""
    inc = build_incidence(case)
    if x_inv is None:
        x_inv = np.where(case.in_service, 1.0 / case.reactance, 0.0)
    B_full = susceptance(inc.W, x_inv)
    slack = case.slack
    keep = np.delete(np.arange(case.n_bus), slack)
    factor = _factor_reduced(B_full, keep)
    Binv_ext = np.zeros_like(B_full)
    Binv_ext[np.ix_(keep, keep)] = linalg.cho_solve(factor, np.eye(len(keep)))
    Binv_ext = 0.5 * (Binv_ext + Binv_ext.T)
    S = (x_inv[:, None] * inc.W.T) @ Binv_ext
    return DcModel(case, inc.W, x_inv, B_full, factor, Binv_ext, S, slack, keep)


def check_balance(p, tol=BALANCE_TOL):
    total = float(np.sum(p))
    if abs(total) > tol:
        raise UnbalancedInjectionError(f"injections sum to {total:.3e} pu (tolerance {tol:g})")


def solve_angles(model: DcModel, p) -> np.ndarray:
    """Bus angles (rad, slack = 0) for a balanced injection vector in pu."""
    p = np.asarray(p, dtype=float)
    check_balance(p)
    theta = np.zeros(model.n_bus)
    theta[model.keep] = linalg.cho_solve(model.B_red_factor, p[model.keep])
    return theta


def line_flows(model: DcModel, theta) -> np.ndarray:
    """Per-unit flows, positive from the from-bus to the to-bus."""
    return model.X_inv * (model.W.T @ np.asarray(theta, dtype=float))


def shift_factors(model: DcModel) -> np.ndarray:
    return model.S


def build_jacobian(model: DcModel) -> Jacobian:
    flow_rows = model.X_inv[:, None] * model.W.T
    H = np.vstack([model.B_full, flow_rows, -flow_rows])
    return Jacobian(H, model.n_bus, model.n_line, model.slack)
