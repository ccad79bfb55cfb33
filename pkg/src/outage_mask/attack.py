"""Load-redistribution attacks that hide a line outage from the PMU detector.

Notation (all per-unit internally, ``x`` = false load data over load buses):

* ``alpha = -R Binv (gamma e S_k V - V)`` maps ``x`` to the extra residual,
* ``beta1`` is the observed PMU angle change, ``beta2 = gamma R Binv e``,
* with the pre-outage flow fitted optimally the target's residual is
  ``||(alpha - G) x + K||`` where ``G`` and ``K`` remove the ``beta2``
  component, i.e. ``r^2 = 0.5 x'Qx + q'x + K'K``.

The attacker maximizes ``0.5 x'Qx + q'x`` over a polytope of budget,
zero-sum and PMU-protection constraints.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .case import GridCase, PmuPlacement, build_incidence
from .dc import DcModel, Jacobian
from .detection import PmuObservation, identify_outage
from .errors import UnobservableTargetError
from .estimation import residual as se_residual
from .outage import gamma as line_gamma, terminal_vector
from .qp import Polytope, maximize_convex_quadratic

log = logging.getLogger(__name__)

UNOBSERVABLE_TOL = 1e-12
TAU_MAX = 4.0
FK0_MODES = ("best-fit", "actual")


@dataclass(frozen=True, eq=False)
class ResidualModel:
    k: int
    gamma: float
    alpha: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    G: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    q: np.ndarray

    def residual(self, x) -> float:
        return float(np.linalg.norm((self.alpha - self.G) @ x + self.K))

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.q @ x)


def build_residual_model(model: DcModel, pmu: PmuPlacement, k, obs: PmuObservation) -> ResidualModel:
    case = model.case
    k = case.find_line(k)
    V = build_incidence(case).V
    g = line_gamma(model, k)
    e = terminal_vector(model, k)
    RB = model.Binv_ext[pmu.indices(case)]
    alpha = -RB @ (g * np.outer(e, model.S[k] @ V) - V)
    beta1 = np.asarray(obs.delta_theta_m, dtype=float).copy()
    beta2 = g * (RB @ e)
    bb = float(beta2 @ beta2)
    if np.sqrt(bb) < UNOBSERVABLE_TOL:
        raise UnobservableTargetError(
            f"PMUs cannot observe an outage of line {case.line_name(k)}; masking is unnecessary")
    G = np.outer(beta2, beta2 @ alpha) / bb
    K = beta1 - (beta2 @ beta1) / bb * beta2
    AG = alpha - G
    return ResidualModel(k, g, alpha, beta1, beta2, G, K, 2.0 * AG.T @ AG, 2.0 * K @ AG)


def optimal_fk0(rm: ResidualModel, x) -> float:
    """Best-fit pre-outage flow (pu) for false load data ``x`` (pu)."""
    bb = float(rm.beta2 @ rm.beta2)
    if np.sqrt(bb) < UNOBSERVABLE_TOL:
        raise UnobservableTargetError("degenerate beta2")
    return float(-(rm.beta2 @ (rm.alpha @ x + rm.beta1)) / bb)


def terminal_net_injections(delta_d_i, delta_d_j, dp_prime):
    """Total false data at the target's terminals, in load sign convention.

    Each terminal carries its false load plus the outage-equivalent transfer:
    ``dP_i = dD_i - dp'`` and ``dP_j = dD_j + dp'``.
    """
    return delta_d_i - dp_prime, delta_d_j + dp_prime


@dataclass(eq=False)
class AttackProblem:
    rm: ResidualModel
    case: GridCase
    tau: float
    fk0_mode: str
    polytope: Polytope
    flow_map: np.ndarray            # L x ND, false flow data per unit false load
    dp_const: float                 # dp'(x) = dp_const + dp_coef . x
    dp_coef: np.ndarray
    terminal_loads: tuple           # load positions of (i, j), or None
    terminal_caps: tuple            # tau * D at (i, j) in pu (0 if protected/no load)
    zero_feasible: bool

    @property
    def n(self) -> int:
        return self.polytope.n


def assemble_problem(rm: ResidualModel, case: GridCase, model: DcModel, pmu: PmuPlacement,
                     tau: float, f_k0_actual: float | None = None,
                     fk0_mode: str = "best-fit") -> AttackProblem:
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if tau > TAU_MAX:
        raise ValueError(f"tau must be at most {TAU_MAX}, got {tau}")
    if tau > 1:
        warnings.warn(f"tau = {tau} exceeds 1: false load may exceed the load itself", stacklevel=2)
    if fk0_mode not in FK0_MODES:
        raise ValueError(f"fk0_mode must be one of {FK0_MODES}")

    k = rm.k
    V = build_incidence(case).V
    nd = case.n_load
    D = np.abs(case.load_mw) / case.base_mva
    g = rm.gamma
    e = terminal_vector(model, k)
    SkV = model.S[k] @ V
    bb = float(rm.beta2 @ rm.beta2)

    # pre-outage flow used in the outage-equivalent transfer
    if fk0_mode == "best-fit":
        f_const = float(-(rm.beta2 @ rm.beta1) / bb)
        f_coef = -(rm.beta2 @ rm.alpha) / bb
    else:
        if f_k0_actual is None:
            raise ValueError("fk0_mode='actual' needs f_k0_actual")
        f_const, f_coef = float(f_k0_actual), np.zeros(nd)
    # dp' = -gamma (f0 + df_k), df_k = -S_k V x
    dp_const = -g * f_const
    dp_coef = -g * (f_coef - SkV)

    protected_bus = {b for b in pmu.protected_injection_buses}
    load_pos = {b: n for n, b in enumerate(case.load_bus_ids)}
    i_bus, j_bus = case.lines[k].from_bus, case.lines[k].to_bus
    term = (load_pos.get(i_bus), load_pos.get(j_bus))

    lb = -tau * D
    ub = tau * D
    box = tau * float(D.sum())
    for pos in term:
        if pos is not None:
            lb[pos], ub[pos] = -box, box
    for n, b in enumerate(case.load_bus_ids):
        if b in protected_bus:
            lb[n] = ub[n] = 0.0

    A_eq = [np.ones(nd)]
    b_eq = [0.0]
    flow_map = -model.S @ V - g * np.outer(model.S @ e, SkV)
    for l in sorted(pmu.protected_lines):
        A_eq.append(flow_map[l])
        b_eq.append(0.0)

    A_ub, b_ub = [], []
    caps = []
    for sign, bus, pos in ((-1.0, i_bus, term[0]), (1.0, j_bus, term[1])):
        # dP = x_pos + sign * dp'(x)
        cap = 0.0 if (pos is None or bus in protected_bus) else tau * D[pos]
        caps.append(cap)
        row = sign * dp_coef.copy()
        if pos is not None:
            row[pos] += 1.0
        const = sign * dp_const
        if cap == 0.0:
            A_eq.append(row)
            b_eq.append(-const)
        else:
            A_ub += [row, -row]
            b_ub += [cap - const, cap + const]

    poly = Polytope(np.array(A_eq), np.array(b_eq),
                    np.array(A_ub).reshape(-1, nd), np.array(b_ub), lb, ub)
    zero_ok = poly.contains(np.zeros(nd))
    if not zero_ok:
        warnings.warn(
            f"no-attack point violates the terminal budget for line {case.line_name(k)} "
            f"at tau={tau}", stacklevel=2)
    return AttackProblem(rm, case, float(tau), fk0_mode, poly, flow_map, dp_const, dp_coef,
                         term, tuple(caps), zero_ok)


@dataclass
class SolverTrace:
    starts: int
    best_start: int
    iterations: int
    lp_solves: int
    lp_gap: float
    active_rank: int
    n_vars: int
    is_vertex: bool
    objective: float
    zero_feasible: bool
    backend: str


@dataclass(eq=False)
class AttackVector:
    target_line: int
    target_name: str
    tau: float
    load_buses: tuple
    delta_d: np.ndarray             # MW per load
    delta_f: np.ndarray             # MW per line
    achieved_residual: float        # rad
    residual_before: float          # rad, ||K||
    best_fit_flow: float            # MW
    dp_prime: float                 # MW
    terminal_net: tuple             # (dP_i, dP_j) MW, load sign
    terminal_caps: tuple            # MW
    fk0_mode: str
    trace: SolverTrace = field(repr=False)

    def to_dict(self, case: GridCase | None = None) -> dict:
        d = {
            "target_line": self.target_name,
            "target_index": self.target_line,
            "tau": self.tau,
            "fk0_mode": self.fk0_mode,
            "achieved_residual_deg": float(np.degrees(self.achieved_residual)),
            "residual_before_deg": float(np.degrees(self.residual_before)),
            "best_fit_flow_mw": self.best_fit_flow,
            "dp_prime_mw": self.dp_prime,
            "terminal_net_mw": list(self.terminal_net),
            "terminal_caps_mw": list(self.terminal_caps),
            "delta_d_mw": {str(b): float(v) for b, v in zip(self.load_buses, self.delta_d)},
            "solver": asdict(self.trace),
        }
        if case is not None:
            d["delta_f_mw"] = {case.line_name(l): float(v) for l, v in enumerate(self.delta_f)}
        else:
            d["delta_f_mw"] = [float(v) for v in self.delta_f]
        return d


def solve_attack(prob: AttackProblem, starts: int = 32, seed: int = 0,
                 warm_start=None) -> AttackVector:
    """Maximize the target residual. ``warm_start`` is a previous
    :class:`AttackVector` (or false-load array in MW) tried first."""
    case, rm = prob.case, prob.rm
    base = case.base_mva
    x0 = None
    if warm_start is not None:
        x0 = np.asarray(getattr(warm_start, "delta_d", warm_start), dtype=float) / base
    res = maximize_convex_quadratic(rm.Q, rm.q, prob.polytope, starts=starts, seed=seed,
                                    warm_start=x0)
    x = res.x
    return _package(prob, x, res)


def _package(prob: AttackProblem, x, res) -> AttackVector:
    case, rm = prob.case, prob.rm
    base = case.base_mva
    dp = prob.dp_const + prob.dp_coef @ x
    ti, tj = prob.terminal_loads
    dPi, dPj = terminal_net_injections(x[ti] if ti is not None else 0.0,
                                       x[tj] if tj is not None else 0.0, dp)
    trace = SolverTrace(
        starts=len(res.start_values), best_start=res.best_start, iterations=res.iterations,
        lp_solves=res.lp_solves, lp_gap=res.certificate.lp_gap,
        active_rank=res.certificate.active_rank, n_vars=prob.n,
        is_vertex=res.certificate.is_vertex, objective=res.value,
        zero_feasible=prob.zero_feasible, backend=_kernels.backend())
    return AttackVector(
        target_line=rm.k, target_name=case.line_name(rm.k), tau=prob.tau,
        load_buses=case.load_bus_ids, delta_d=x * base, delta_f=(prob.flow_map @ x) * base,
        achieved_residual=rm.residual(x), residual_before=float(np.linalg.norm(rm.K)),
        best_fit_flow=optimal_fk0(rm, x) * base, dp_prime=float(dp) * base,
        terminal_net=(float(dPi) * base, float(dPj) * base),
        terminal_caps=tuple(c * base for c in prob.terminal_caps),
        fk0_mode=prob.fk0_mode, trace=trace)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def measurement_perturbation(av: AttackVector, case: GridCase, model: DcModel) -> np.ndarray:
    """False measurement vector (injections, +flows, -flows) in pu.

    Injections carry the false load redistribution plus the transfer across
    the target that makes the false flows consistent with it.
    """
    base = case.base_mva
    V = build_incidence(case).V
    x = np.asarray(av.delta_d, dtype=float) / base
    e = terminal_vector(model, av.target_line)
    g = line_gamma(model, av.target_line)
    df_k = -(model.S[av.target_line] @ V) @ x
    dinj = -V @ x + g * e * df_k
    dF = np.asarray(av.delta_f, dtype=float) / base
    return np.concatenate([dinj, dF, -dF])


@dataclass
class VerificationReport:
    checks: dict
    details: dict
    post_report: object = None
    pre_report: object = None

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    @property
    def post_attack_rank(self):
        return self.details.get("post_attack_rank")


def verify_attack(av: AttackVector, case: GridCase, model: DcModel, pmu: PmuPlacement,
                  H: Jacobian, obs: PmuObservation | None = None, candidates=None,
                  base_measurements=(), tol: float = 1e-8) -> VerificationReport:
    base = case.base_mva
    dd = np.asarray(av.delta_d, dtype=float)
    D = np.abs(case.load_mw)
    terminals = set()
    for b in (case.lines[av.target_line].from_bus, case.lines[av.target_line].to_bus):
        terminals.add(b)
    checks, details = {}, {}

    mw_tol = tol * base
    details["zero_sum_mw"] = float(dd.sum())
    checks["zero_sum"] = abs(details["zero_sum_mw"]) <= mw_tol

    excess = [abs(v) - av.tau * d for b, v, d in zip(case.load_bus_ids, dd, D) if b not in terminals]
    details["load_bound_excess_mw"] = float(max(excess, default=0.0))
    checks["load_bounds"] = details["load_bound_excess_mw"] <= mw_tol

    term_excess = [abs(p) - c for p, c in zip(av.terminal_net, av.terminal_caps)]
    details["terminal_bound_excess_mw"] = float(max(term_excess))
    checks["terminal_bounds"] = details["terminal_bound_excess_mw"] <= mw_tol

    prot = [abs(v) for b, v in zip(case.load_bus_ids, dd) if b in pmu.protected_injection_buses]
    details["pmu_injection_max_mw"] = float(max(prot, default=0.0))
    checks["pmu_injections"] = details["pmu_injection_max_mw"] <= mw_tol

    pf = [abs(av.delta_f[l]) for l in pmu.protected_lines]
    details["pmu_flow_max_mw"] = float(max(pf, default=0.0))
    checks["pmu_flows"] = details["pmu_flow_max_mw"] <= mw_tol

    dz = measurement_perturbation(av, case, model)
    dtheta, *_ = np.linalg.lstsq(H.H, dz, rcond=None)
    details["stealth_lsq_residual"] = float(np.linalg.norm(dz - H.H @ dtheta))
    checks["stealth"] = details["stealth_lsq_residual"] <= tol

    # false flows must equal the shift-factor response to the false injections
    n = case.n_bus
    details["flow_consistency"] = float(np.max(np.abs(model.S @ dz[:n] - dz[n:n + case.n_line])))
    checks["flow_consistency"] = details["flow_consistency"] <= tol

    se_pairs = []
    for z in base_measurements:
        r0 = se_residual(H, z)
        zv = getattr(z, "z", z)
        r1 = se_residual(H, np.asarray(zv) + dz)
        se_pairs.append((r0, r1))
    if se_pairs:
        details["se_residual_max_change"] = float(max(abs(a - b) for a, b in se_pairs))
        checks["se_residual_unchanged"] = details["se_residual_max_change"] <= tol

    post = pre = None
    if obs is not None and candidates is not None:
        pre = identify_outage(model, pmu, obs, candidates)
        post = identify_outage(model, pmu, obs, candidates, injection_shift=dz[:n])
        details["pre_attack_rank"] = pre.rank_of(av.target_line)
        details["post_attack_rank"] = post.rank_of(av.target_line)
        details["post_attack_residual"] = post.residual_of(av.target_line)
    return VerificationReport(checks, details, post, pre)
