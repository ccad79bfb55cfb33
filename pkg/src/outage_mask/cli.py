"""Command-line harness: detect, attack, sweep-tau, gamma, report.

Data goes to stdout (or ``--out``); logs go to stderr. Exit codes: 0 success,
1 error, 2 usage error, 3 sweep finished with failed rows.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiment as ex
from .errors import OutageMaskError
from .serialize import attack_to_json

log = logging.getLogger("outage_mask")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 3


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(command: str, rows: list, fmt: str, meta: dict | None = None) -> str:
    """Rows as CSV (schema comment line first) or a JSON document."""
    if fmt == "json":
        doc = {"schema_version": ex.SCHEMA_VERSION, "command": command}
        if meta:
            doc.update(meta)
        doc["rows"] = rows
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    buf.write(f"# outage-mask schema_version={ex.SCHEMA_VERSION} command={command}\n")
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        cols = list(rows[0])
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r[c]) for c in cols])
    return buf.getvalue()


def _parse_value(text):
    if text == "":
        return ""
    if text in ("true", "false"):
        return text == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def load_table(path) -> tuple:
    """Read a CSV or JSON table written by :func:`render`: ``(command, rows)``."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        return doc.get("command", ""), doc["rows"]
    lines = text.splitlines()
    command = ""
    if lines and lines[0].startswith("#"):
        for tok in lines[0].split():
            if tok.startswith("command="):
                command = tok.split("=", 1)[1]
        lines = lines[1:]
    rows = [{k: _parse_value(v) for k, v in r.items()} for r in csv.DictReader(lines)]
    return command, rows


def _fmt_num(v, spec):
    return format(v, spec) if isinstance(v, (int, float)) and not isinstance(v, bool) else "-"


def report_text(command: str, rows: list, top: int = 5) -> str:
    if command == "sweep-tau":
        taus = sorted({float(r["tau"]) for r in rows})
        lines = list(dict.fromkeys(r["line"] for r in rows))
        by = {(r["line"], float(r["tau"])): r for r in rows}
        head = f"{'line':>8} {'tau=0':>14}" + "".join(f" {'tau=' + format(t, 'g'):>14}" for t in taus)
        out = ["RESIDUALS OF LINES FOR DIFFERENT TAU (deg, rank in brackets)", head]
        for ln in lines:
            first = by[(ln, taus[0])]
            cells = [f"{_fmt_num(first['residual_before_deg'], '.4f')} ({first['rank_before'] or '-'})"]
            for t in taus:
                r = by.get((ln, t))
                if r is None:
                    cells.append("")
                elif r["status"] != "ok":
                    cells.append(str(r["status"]))
                else:
                    cells.append(f"{r['residual_after_deg']:.4f} ({r['rank_after']})")
            out.append(f"{ln:>8} " + " ".join(f"{c:>14}" for c in cells))
        return "\n".join(out) + "\n"
    if command in ("detect", "attack"):
        out = []
        stages = ["pre", "post"] if command == "attack" else [None]
        for st in stages:
            sel = [r for r in rows if st is None or r.get("stage") == st]
            title = {None: "TOP {n} LOWEST RESIDUALS", "pre": "TOP {n} LOWEST RESIDUALS BEFORE ATTACK",
                     "post": "TOP {n} LOWEST RESIDUALS AFTER ATTACK"}[st].format(n=top)
            out += [title, f"{'rank':>4}  {'line':>8}  {'r (deg)':>10}"]
            out += [f"{r['rank']:>4}  {r['line']:>8}  {r['residual_deg']:>10.4f}" for r in sel[:top]]
            out.append("")
        return "\n".join(out)
    raise OutageMaskError(f"cannot render a table produced by {command!r}")


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _one_line(ctx, args):
    if not args.line:
        raise OutageMaskError("--line is required")
    if len(args.line) != 1:
        raise OutageMaskError("this command takes exactly one --line")
    return ex.resolve_line(ctx.case, args.line[0])


def cmd_detect(ctx, args) -> int:
    k = _one_line(ctx, args) if args.line else None
    if k is None and not ctx.cfg.obs:
        raise OutageMaskError("detect needs --line (simulated outage) or --obs (fixture)")
    if k is not None and k not in ctx.candidates:
        ctx = replace(ctx, candidates=sorted(set(ctx.candidates) | {k}))
    report, rows = ex.run_detect(ctx, k)
    log.info("identified line %s", ctx.case.line_name(report.identified))
    _emit(render("detect", rows, ctx.cfg.format), args.out)
    return EXIT_OK


def cmd_attack(ctx, args) -> int:
    k = _one_line(ctx, args)
    if len(ctx.cfg.taus) != 1:
        raise OutageMaskError("attack takes a single --tau value; use sweep-tau for lists")
    if k not in ctx.candidates:
        ctx = replace(ctx, candidates=sorted(set(ctx.candidates) | {k}))
    out = ex.run_attack(ctx, k, ctx.cfg.taus[0])
    av = out.vector
    rows = ex.ranking_rows(ctx.case, out.pre, "pre") + ex.ranking_rows(ctx.case, out.post, "post")
    meta = {
        "target_line": av.target_name,
        "tau": av.tau,
        "rank_before": out.pre.rank_of(k),
        "rank_after": out.post.rank_of(k),
        "masked": out.masked,
        "residual_before_deg": float(np.degrees(out.pre.residual_of(k))),
        "residual_after_deg": float(np.degrees(av.achieved_residual)),
        "checks": out.verification.checks,
    }
    log.info("line %s tau %g: rank %d -> %d, residual %.4f -> %.4f deg",
             av.target_name, av.tau, meta["rank_before"], meta["rank_after"],
             meta["residual_before_deg"], meta["residual_after_deg"])
    if args.vector_out:
        Path(args.vector_out).write_text(attack_to_json(av, ctx.case) + "\n", encoding="utf-8")
        log.info("wrote attack vector to %s", args.vector_out)
    _emit(render("attack", rows, ctx.cfg.format, meta), args.out)
    return EXIT_OK if out.verification.ok else EXIT_ERROR


def cmd_sweep(ctx, args) -> int:
    if args.line:
        lines = [ex.resolve_line(ctx.case, ref) for ref in args.line]
    elif ctx.cfg.candidates == "reference":
        lines = [ctx.case.find_line(n) for n in ex.REFERENCE_CANDIDATES_39]
    else:
        lines = list(ctx.candidates) + list(ctx.skipped)
    rows, failed = ex.run_sweep(ctx, lines, ctx.cfg.taus)
    _emit(render("sweep-tau", rows, ctx.cfg.format), args.out)
    if failed:
        log.warning("%d of %d rows failed", failed, len(rows))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_gamma(ctx, args) -> int:
    k = _one_line(ctx, args)
    info = ex.gamma_info(ctx, k)
    _emit(render("gamma", [info], ctx.cfg.format), args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.input:
        raise OutageMaskError("report needs a table file argument")
    command, rows = load_table(args.input)
    _emit(report_text(command, rows, args.top), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with an [experiment] section; flags override it")
    common.add_argument("--case", help="case file (native or MATPOWER); default: bundled 39-bus case")
    common.add_argument("--pmu", help="comma-separated PMU bus ids (default 4,13,18,23,24)")
    common.add_argument("--candidates", help="'auto', 'reference' or comma-separated line names")
    common.add_argument("--line", action="append",
                        help="line as FROM-TO or 1-based number; comma lists and repeats allowed")
    common.add_argument("--tau", help="comma-separated attack budget fractions in (0, 4]")
    common.add_argument("--noise-sigma", type=float, help="PMU angle noise sigma in degrees")
    common.add_argument("--seed", type=int, help="noise seed")
    common.add_argument("--starts", type=int, help="random solver starts (default 32)")
    common.add_argument("--solver-seed", type=int, help="seed for solver starts")
    common.add_argument("--fk0-mode", choices=("best-fit", "actual"),
                        help="pre-outage flow used in the terminal constraints")
    common.add_argument("--obs", help="observation fixture: rows of 'bus_id delta_degrees'")
    common.add_argument("--base-sets", type=int, help="measurement sets for the stealth check")
    common.add_argument("--format", choices=("csv", "json"), help="output format (default csv)")
    common.add_argument("--out", help="write the table here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="outage-mask", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("detect", parents=[common], help="rank candidate lines for one outage")
    a = sub.add_parser("attack", parents=[common], help="synthesize and verify a masking attack")
    a.add_argument("--vector-out", help="write the attack vector JSON here")
    sub.add_parser("sweep-tau", parents=[common], help="attack each line over a list of tau")
    sub.add_parser("gamma", parents=[common], help="print gamma and its Thevenin parts")
    r = sub.add_parser("report", help="render a stored table in the study layout")
    r.add_argument("input", help="CSV or JSON file written by another command")
    r.add_argument("--top", type=int, default=5, help="rows per ranking table")
    r.add_argument("--out", help="write here instead of stdout")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> ex.ExperimentConfig:
    file_values = ex.read_config(args.config) if args.config else {}
    cand = None
    if args.candidates is not None:
        vals = ex.parse_list(args.candidates)
        cand = vals[0] if len(vals) == 1 and vals[0] in ("auto", "reference") else vals
    overrides = {
        "case": args.case,
        "pmu": ex.parse_list(args.pmu, int) if args.pmu is not None else None,
        "candidates": cand,
        "taus": ex.parse_list(args.tau, float) if args.tau is not None else None,
        "noise_sigma_deg": args.noise_sigma,
        "seed": args.seed,
        "starts": args.starts,
        "solver_seed": args.solver_seed,
        "fk0_mode": args.fk0_mode,
        "obs": args.obs,
        "base_sets": args.base_sets,
        "format": args.format,
    }
    return ex.merge_config(file_values, overrides)


COMMANDS = {"detect": cmd_detect, "attack": cmd_attack, "sweep-tau": cmd_sweep, "gamma": cmd_gamma}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "report":
            return cmd_report(args)
        if getattr(args, "line", None):
            args.line = [ref for item in args.line for ref in ex.parse_list(item)]
        ctx = ex.build_context(config_from_args(args))
        return COMMANDS[args.command](ctx, args)
    except (OutageMaskError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
