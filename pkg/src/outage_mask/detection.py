"""PMU-based single-line outage detection by residual ranking.

For a hypothesised outage of line l, the predicted PMU angle change is the
response to the compensating transfer ``-gamma_l * f`` across the line's
terminals, with the pre-outage flow ``f`` left free. The residual is the
distance from the observed change to the best such prediction; the line with
the smallest residual is declared outaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .case import GridCase, PmuPlacement
from .dc import DcModel, solve_angles
from .errors import CaseParseError, DegenerateOutageError
from .outage import all_gammas, post_outage_angles_exact

UNOBSERVABLE_TOL = 1e-12
TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class PmuObservation:
    delta_theta_m: np.ndarray       # rad, ordered as pmu_buses
    pmu_buses: tuple
    true_line: int | None = None
    noise_seed: int | None = None

    def __post_init__(self):
        if len(self.delta_theta_m) != len(self.pmu_buses):
            raise ValueError("observation length differs from the PMU count")


@dataclass(frozen=True)
class CandidateResult:
    line: int
    residual: float                 # rad
    best_fit_flow: float            # pu
    observable: bool


@dataclass
class DetectionReport:
    ranking: list                   # CandidateResult sorted by residual
    identified: int
    by_line: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.by_line = {c.line: c for c in self.ranking}

    def rank_of(self, line: int) -> int:
        """1-based rank of ``line``."""
        for pos, c in enumerate(self.ranking, start=1):
            if c.line == line:
                return pos
        raise KeyError(line)

    def residual_of(self, line: int) -> float:
        return self.by_line[line].residual


def simulate_observation(case: GridCase, model: DcModel, k, pmu: PmuPlacement,
                         noise=None, p_pre=None) -> PmuObservation:
    """Angle changes at the PMU buses after an exact removal of line ``k``.

    ``noise`` is ``(sigma_rad, seed)``; zero-mean Gaussian noise is added per PMU.
    """
    k = case.find_line(k)
    if p_pre is None:
        p_pre = case.injections_pu()
    theta_pre = solve_angles(model, p_pre)
    theta_post = post_outage_angles_exact(case, k, p_pre)
    idx = pmu.indices(case)
    d = theta_post[idx] - theta_pre[idx]
    seed = None
    if noise is not None:
        sigma, seed = noise
        if sigma > 0:
            d = d + np.random.default_rng(seed).normal(0.0, sigma, size=d.shape)
    return PmuObservation(d, pmu.pmu_buses, k, seed)


def beta2_columns(model: DcModel, pmu: PmuPlacement, lines) -> np.ndarray:
    """Columns ``gamma_l * R Binv e_l`` restricted to PMU rows."""
    case = model.case
    lines = np.asarray(lines, dtype=np.int64)
    g = all_gammas(model, lines)
    if np.any(np.isnan(g)):
        bad = [case.line_name(int(k)) for k in lines[np.isnan(g)]]
        raise DegenerateOutageError(f"islanding candidate line(s): {', '.join(bad)}")
    rows = model.Binv_ext[pmu.indices(case)]
    M = rows[:, case.line_from[lines]] - rows[:, case.line_to[lines]]
    return M * g


def _observed_side(model, pmu, obs, injection_shift):
    b = np.asarray(obs.delta_theta_m, dtype=float)
    if injection_shift is not None:
        b = b - model.Binv_ext[pmu.indices(model.case)] @ np.asarray(injection_shift, dtype=float)
    return b


def candidate_residual(model: DcModel, pmu: PmuPlacement, obs: PmuObservation, line,
                       injection_shift=None) -> CandidateResult:
    """Residual of one candidate line.

    ``injection_shift`` is the change in measured bus injections (pu) that
    the calculated angles should include; ``None`` means unchanged.
    """
    line = model.case.find_line(line)
    b = _observed_side(model, pmu, obs, injection_shift)
    D = beta2_columns(model, pmu, [line])
    r, f = _kernels.orthogonal_residuals(D, b[:, None], UNOBSERVABLE_TOL)
    observable = bool(np.linalg.norm(D) >= UNOBSERVABLE_TOL)
    return CandidateResult(line, float(r[0, 0]), float(f[0, 0]), observable)


def rank_residuals(lines, residuals, scale):
    """Order candidates by residual; values within ``TIE_RTOL * scale`` of a
    group's smallest member tie and fall back to the lowest line index."""
    lines = np.asarray(lines)
    residuals = np.asarray(residuals, dtype=float)
    tol = TIE_RTOL * max(scale, 1e-300)
    order = list(np.lexsort((lines, residuals)))
    out = []
    while order:
        lead = residuals[order[0]]
        group = [o for o in order if residuals[o] <= lead + tol]
        group.sort(key=lambda o: lines[o])
        out.extend(group)
        taken = set(group)
        order = [o for o in order if o not in taken]
    return out


def identify_outage(model: DcModel, pmu: PmuPlacement, obs: PmuObservation, candidates,
                    injection_shift=None) -> DetectionReport:
    case = model.case
    cand = [case.find_line(c) for c in candidates]
    if not cand:
        raise ValueError("candidate set is empty")
    b = _observed_side(model, pmu, obs, injection_shift)
    D = beta2_columns(model, pmu, cand)
    r, f = _kernels.orthogonal_residuals(D, b[:, None], UNOBSERVABLE_TOL)
    observable = np.linalg.norm(D, axis=0) >= UNOBSERVABLE_TOL
    results = [CandidateResult(c, float(r[n, 0]), float(f[n, 0]), bool(observable[n]))
               for n, c in enumerate(cand)]
    order = rank_residuals(cand, r[:, 0], float(np.linalg.norm(b)))
    ranking = [results[o] for o in order]
    return DetectionReport(ranking, ranking[0].line)


def identify_batch(model: DcModel, pmu: PmuPlacement, observations, candidates) -> np.ndarray:
    """Identified line for each observation column (``observations`` is s x T)."""
    case = model.case
    cand = np.array([case.find_line(c) for c in candidates])
    Bobs = np.asarray(observations, dtype=float)
    r, _ = _kernels.orthogonal_residuals(beta2_columns(model, pmu, cand), Bobs, UNOBSERVABLE_TOL)
    out = np.empty(Bobs.shape[1], dtype=np.int64)
    for t in range(Bobs.shape[1]):
        out[t] = cand[rank_residuals(cand, r[:, t], float(np.linalg.norm(Bobs[:, t])))[0]]
    return out


# ---------------------------------------------------------------------------
# observation fixtures: one "bus_id  delta_degrees" pair per row
# ---------------------------------------------------------------------------

def parse_observation(text: str, pmu: PmuPlacement) -> PmuObservation:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].split()
        if not body:
            continue
        if len(body) != 2:
            raise CaseParseError(f"observation row needs 2 columns, got {len(body)}", lineno)
        try:
            bus, deg = int(body[0]), float(body[1])
        except ValueError:
            raise CaseParseError("observation row must be 'bus_id delta_degrees'", lineno) from None
        if bus in values:
            raise CaseParseError(f"bus {bus} listed twice", lineno)
        values[bus] = deg
    if set(values) != set(pmu.pmu_buses):
        raise CaseParseError(
            f"observation buses {sorted(values)} do not match PMU buses {sorted(pmu.pmu_buses)}")
    d = np.radians([values[b] for b in pmu.pmu_buses])
    return PmuObservation(d, pmu.pmu_buses)


def read_observation(path, pmu: PmuPlacement) -> PmuObservation:
    return parse_observation(Path(path).read_text(encoding="utf-8"), pmu)


def format_observation(obs: PmuObservation) -> str:
    rows = ["# bus  delta_theta_deg"]
    rows += [f"{b} {float(np.degrees(v))!r}" for b, v in zip(obs.pmu_buses, obs.delta_theta_m)]
    return "\n".join(rows) + "\n"
