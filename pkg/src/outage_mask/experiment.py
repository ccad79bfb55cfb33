"""Experiment protocol shared by the CLI: config, observations, table rows.

Every row is a flat dict with power in MW and angles in degrees so CSV and
JSON renderings carry the same values.
"""

from __future__ import annotations

import configparser
import logging
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .attack import (
    AttackVector, VerificationReport, assemble_problem, build_residual_model, solve_attack,
    verify_attack,
)
from .case import (
    GridCase, PmuPlacement, bridge_lines, bundled_case_path, default_candidates, load_case,
    place_pmus,
)
from .dc import DcModel, Jacobian, build_dc_model, build_jacobian, line_flows, solve_angles
from .detection import DetectionReport, PmuObservation, identify_outage, read_observation, simulate_observation
from .errors import (
    CaseValidationError, DegenerateOutageError, InfeasibleAttackError, IterationLimitError,
    OutageMaskError, UnknownLineError, UnobservableTargetError,
)
from .estimation import noisy_measurements
from .outage import thevenin

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_PMU_BUSES = (4, 13, 18, 23, 24)

# the 24-line study set for the 39-bus case with PMUs at DEFAULT_PMU_BUSES
REFERENCE_CANDIDATES_39 = (
    "1-2", "1-39", "2-3", "2-25", "5-6", "5-8", "6-7", "7-8", "8-9", "9-39", "10-11", "10-13",
    "12-11", "14-15", "15-16", "16-17", "16-19", "16-21", "17-27", "21-22", "25-26", "26-27",
    "26-28", "26-29",
)

# status values of sweep rows
OK = "ok"
FAILURE_STATUS = {
    InfeasibleAttackError: "infeasible",
    UnobservableTargetError: "unobservable",
    DegenerateOutageError: "islanding",
    IterationLimitError: "iteration-limit",
}


@dataclass
class ExperimentConfig:
    case: str = ""                      # empty: bundled 39-bus case
    pmu: tuple = DEFAULT_PMU_BUSES
    candidates: object = "auto"         # "auto", "reference" or a list of line names
    taus: tuple = (0.5,)
    noise_sigma_deg: float = 0.0
    seed: int = 0
    starts: int = 32
    solver_seed: int = 0
    fk0_mode: str = "best-fit"
    obs: str = ""                       # observation fixture file
    base_sets: int = 10                 # random measurement sets for the stealth check
    format: str = "csv"

    def validate(self):
        for t in self.taus:
            if not (0 < t <= 4):
                raise CaseValidationError(f"tau values must lie in (0, 4], got {t}")
        if self.noise_sigma_deg < 0:
            raise CaseValidationError("--noise-sigma must be non-negative")
        if self.starts < 0:
            raise CaseValidationError("--starts must be non-negative")
        if self.format not in ("csv", "json"):
            raise CaseValidationError("--format must be csv or json")
        if self.fk0_mode not in ("best-fit", "actual"):
            raise CaseValidationError("--fk0-mode must be best-fit or actual")
        return self


def parse_list(text, conv=str) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(conv(v) for v in text)
    return tuple(conv(v) for v in str(text).replace(",", " ").split() if v)


def read_config(path) -> dict:
    """Read ``[experiment]`` from an INI-style file into config field values."""
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise CaseValidationError(f"cannot read config file {path}")
    if not parser.has_section("experiment"):
        raise CaseValidationError(f"{path}: missing [experiment] section")
    sec = parser["experiment"]
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for key, raw in sec.items():
        name = key.replace("-", "_")
        if name == "tau":
            name = "taus"
        if name not in known:
            raise CaseValidationError(f"{path}: unknown key {key!r} in [experiment]")
        try:
            if name == "pmu":
                out[name] = parse_list(raw, int)
            elif name == "taus":
                out[name] = parse_list(raw, float)
            elif name == "candidates":
                vals = parse_list(raw)
                out[name] = vals[0] if len(vals) == 1 and vals[0] in ("auto", "reference") else vals
            elif name in ("noise_sigma_deg",):
                out[name] = float(raw)
            elif name in ("seed", "starts", "solver_seed", "base_sets"):
                out[name] = int(raw)
            else:
                out[name] = raw.strip()
        except ValueError:
            raise CaseValidationError(f"{path}: bad value for {key}: {raw!r}") from None
    return out


def merge_config(file_values: dict, overrides: dict) -> ExperimentConfig:
    """Config file values, then command-line overrides (``None`` = not given)."""
    cfg = replace(ExperimentConfig(), **file_values)
    given = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **given).validate()


@dataclass(eq=False)
class Context:
    cfg: ExperimentConfig
    case: GridCase
    model: DcModel
    pmu: PmuPlacement
    H: Jacobian
    candidates: list                    # non-islanding ranking set (line indices)
    skipped: list = field(default_factory=list)


def resolve_line(case: GridCase, ref) -> int:
    """``FROM-TO`` name or a 1-based line number."""
    text = str(ref).strip()
    if text.isdigit():
        n = int(text)
        if not 1 <= n <= case.n_line:
            raise UnknownLineError(f"line number {n} out of range 1..{case.n_line}")
        return n - 1
    return case.find_line(text)


def build_context(cfg: ExperimentConfig) -> Context:
    path = Path(cfg.case) if cfg.case else bundled_case_path("case39")
    case = load_case(path)
    model = build_dc_model(case)
    pmu = place_pmus(case, cfg.pmu)
    if cfg.candidates == "auto":
        raw = default_candidates(case, pmu)
    elif cfg.candidates == "reference":
        raw = [case.find_line(n) for n in REFERENCE_CANDIDATES_39]
    else:
        raw = [resolve_line(case, n) for n in cfg.candidates]
    bridges = bridge_lines(case)
    cand = [k for k in raw if k not in bridges]
    skipped = [k for k in raw if k in bridges]
    for k in skipped:
        log.warning("candidate %s islands the network; left out of the ranking", case.line_name(k))
    if not cand:
        raise CaseValidationError("candidate set is empty after removing islanding lines")
    return Context(cfg, case, model, pmu, build_jacobian(model), cand, skipped)


def observation(ctx: Context, k: int) -> PmuObservation:
    if ctx.cfg.obs:
        return read_observation(ctx.cfg.obs, ctx.pmu)
    sigma = np.radians(ctx.cfg.noise_sigma_deg)
    noise = (sigma, ctx.cfg.seed) if sigma > 0 else None
    return simulate_observation(ctx.case, ctx.model, k, ctx.pmu, noise=noise)


def measured_flow(ctx: Context, k: int) -> float:
    """Pre-outage flow of line ``k`` as seen by a 1%-noise meter (pu)."""
    f = line_flows(ctx.model, solve_angles(ctx.model, ctx.case.injections_pu()))[k]
    rng = np.random.default_rng(ctx.cfg.seed)
    return float(f + rng.normal(0.0, 0.01 * abs(f)))


def base_measurement_sets(ctx: Context):
    theta = solve_angles(ctx.model, ctx.case.injections_pu())
    rng = np.random.default_rng(ctx.cfg.seed)
    return [noisy_measurements(ctx.H, theta, 0.01, rng) for _ in range(ctx.cfg.base_sets)]


def ranking_rows(case: GridCase, report: DetectionReport, stage=None, top=None) -> list:
    rows = []
    for pos, c in enumerate(report.ranking[:top], start=1):
        row = {} if stage is None else {"stage": stage}
        row.update(rank=pos, line=case.line_name(c.line),
                   residual_deg=float(np.degrees(c.residual)),
                   best_fit_flow_mw=float(c.best_fit_flow * case.base_mva),
                   observable=c.observable)
        rows.append(row)
    return rows


def run_detect(ctx: Context, k: int):
    obs = observation(ctx, k)
    report = identify_outage(ctx.model, ctx.pmu, obs, ctx.candidates)
    return report, ranking_rows(ctx.case, report)


@dataclass(eq=False)
class AttackOutcome:
    vector: AttackVector
    verification: VerificationReport
    pre: DetectionReport
    post: DetectionReport

    @property
    def masked(self) -> bool:
        return self.post.identified != self.vector.target_line


def run_attack(ctx: Context, k: int, tau: float, warm_start=None, obs=None) -> AttackOutcome:
    case = ctx.case
    if k in ctx.pmu.protected_lines:
        raise CaseValidationError(f"line {case.line_name(k)} is monitored by a PMU; its outage is seen directly")
    if obs is None:
        obs = observation(ctx, k)
    rm = build_residual_model(ctx.model, ctx.pmu, k, obs)
    f_act = measured_flow(ctx, k) if ctx.cfg.fk0_mode == "actual" else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        prob = assemble_problem(rm, case, ctx.model, ctx.pmu, tau, f_k0_actual=f_act,
                                fk0_mode=ctx.cfg.fk0_mode)
    if not prob.zero_feasible:
        log.info("line %s, tau %g: no-attack point is outside the terminal budget", case.line_name(k), tau)
    av = solve_attack(prob, starts=ctx.cfg.starts, seed=ctx.cfg.solver_seed, warm_start=warm_start)
    ver = verify_attack(av, case, ctx.model, ctx.pmu, ctx.H, obs, ctx.candidates,
                        base_measurement_sets(ctx))
    if not ver.ok:
        bad = [name for name, good in ver.checks.items() if not good]
        log.warning("attack on %s at tau %g fails checks: %s", case.line_name(k), tau, ", ".join(bad))
    return AttackOutcome(av, ver, ver.pre_report, ver.post_report)


SWEEP_COLUMNS = ("line", "tau", "status", "residual_before_deg", "rank_before",
                 "residual_after_deg", "rank_after", "masked", "objective", "stealth_ok")


def run_sweep(ctx: Context, lines, taus):
    """Rows for every (line, tau); tau ascends per line with warm starts.

    Returns ``(rows, n_failed)``; failures become rows with a status.
    """
    case = ctx.case
    taus = sorted(float(t) for t in taus)
    rows, failed = [], 0
    for k in lines:
        name = case.line_name(k)
        warm = None
        pre = None
        try:
            obs = observation(ctx, k)
            if k not in bridge_lines(case):
                pre = identify_outage(ctx.model, ctx.pmu, obs, sorted(set(ctx.candidates) | {k}))
        except OutageMaskError as exc:
            obs = None
            log.warning("line %s: %s", name, exc)
        for tau in taus:
            row = dict.fromkeys(SWEEP_COLUMNS, "")
            row.update(line=name, tau=tau)
            if pre is not None:
                row.update(residual_before_deg=float(np.degrees(pre.residual_of(k))),
                           rank_before=pre.rank_of(k))
            try:
                if obs is None:
                    raise DegenerateOutageError(f"line {name} islands the network")
                out = _sweep_attack(ctx, k, tau, warm, obs)
                warm = out.vector
                row.update(status=OK,
                           residual_after_deg=float(np.degrees(out.vector.achieved_residual)),
                           rank_after=out.post.rank_of(k), masked=out.masked,
                           objective=out.vector.trace.objective,
                           stealth_ok=out.verification.ok)
            except OutageMaskError as exc:
                failed += 1
                row["status"] = _status(exc)
                log.warning("line %s, tau %g: %s", name, tau, exc)
            rows.append(row)
            log.info("line %s tau %g -> %s", name, tau, row["status"])
    return rows, failed


def _sweep_attack(ctx, k, tau, warm, obs):
    # the target joins the ranking set even when the candidate policy omits it
    if k in ctx.candidates:
        return run_attack(ctx, k, tau, warm, obs)
    sub = replace(ctx, candidates=sorted(set(ctx.candidates) | {k}))
    return run_attack(sub, k, tau, warm, obs)


def _status(exc) -> str:
    for cls, name in FAILURE_STATUS.items():
        if isinstance(exc, cls):
            return name
    if isinstance(exc, CaseValidationError):
        return "pmu-covered"
    return "error"


def gamma_info(ctx: Context, k: int) -> dict:
    th = thevenin(ctx.model, k)
    return {
        "line": ctx.case.line_name(k),
        "x_k": th.x_k,
        "binv_ii": th.binv_ii,
        "binv_jj": th.binv_jj,
        "binv_ij": th.binv_ij,
        "xth": th.xth,
        "gamma": th.gamma,
    }
