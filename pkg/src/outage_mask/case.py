"""Grid case description, case-file readers/writers and graph facts.

Two text formats are understood:

* the native format (canonical, read and written)::

      # comments start with '#'
      [case]
      base_mva 100
      [bus]
      # id  kind            kind: slack | generator | load | transit
      1     slack
      2     load
      [line]
      # from  to  x_pu  [in_service]
      1       2   0.1   1
      [load]
      # bus  MW
      2      50
      [gen]
      # bus  MW
      1      50

* MATPOWER-style ``mpc.bus`` / ``mpc.gen`` / ``mpc.branch`` tables (read only).
  Only bus id/type/Pd, generator bus/Pg/status and branch from/to/x/status
  are used; every other column is ignored.

Loads and generation are kept in MW. Generation is rescaled proportionally
at construction so that it matches total load exactly (lossless DC balance).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import CaseParseError, CaseValidationError, UnknownLineError

BUS_KINDS = ("slack", "generator", "load", "transit")

_BALANCE_TOL_PU = 1e-6


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    x: float
    in_service: bool = True

    @property
    def name(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class GridCase:
    """Static network description. Build through :func:`make_case` or a parser."""

    base_mva: float
    bus_ids: tuple[int, ...]
    bus_kinds: tuple[str, ...]
    lines: tuple[Line, ...]
    loads: tuple[tuple[int, float], ...]
    gens: tuple[tuple[int, float], ...]

    # -- sizes -------------------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def n_load(self) -> int:
        return len(self.loads)

    @property
    def n_gen(self) -> int:
        return len(self.gens)

    # -- index maps --------------------------------------------------------
    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b: i for i, b in enumerate(self.bus_ids)}

    @cached_property
    def slack(self) -> int:
        """Internal index of the slack bus."""
        return self.bus_kinds.index("slack")

    @cached_property
    def line_from(self) -> np.ndarray:
        return np.array([self.bus_index[ln.from_bus] for ln in self.lines], dtype=np.int64)

    @cached_property
    def line_to(self) -> np.ndarray:
        return np.array([self.bus_index[ln.to_bus] for ln in self.lines], dtype=np.int64)

    @cached_property
    def reactance(self) -> np.ndarray:
        return np.array([ln.x for ln in self.lines], dtype=float)

    @cached_property
    def in_service(self) -> np.ndarray:
        return np.array([ln.in_service for ln in self.lines], dtype=bool)

    @cached_property
    def load_bus_ids(self) -> tuple[int, ...]:
        return tuple(b for b, _ in self.loads)

    @cached_property
    def load_index(self) -> np.ndarray:
        return np.array([self.bus_index[b] for b, _ in self.loads], dtype=np.int64)

    @cached_property
    def load_mw(self) -> np.ndarray:
        return np.array([mw for _, mw in self.loads], dtype=float)

    @cached_property
    def gen_index(self) -> np.ndarray:
        return np.array([self.bus_index[b] for b, _ in self.gens], dtype=np.int64)

    @cached_property
    def gen_mw(self) -> np.ndarray:
        return np.array([mw for _, mw in self.gens], dtype=float)

    def line_name(self, k: int) -> str:
        return self.lines[k].name

    def injections_pu(self) -> np.ndarray:
        """Net bus injections (generation minus load) in per-unit."""
        p = np.zeros(self.n_bus)
        np.add.at(p, self.gen_index, self.gen_mw)
        np.subtract.at(p, self.load_index, self.load_mw)
        return p / self.base_mva

    def find_line(self, key) -> int:
        """Resolve a 0-based index or a ``"from-to"`` name to a line index.

        Names match the first line in file order with those terminals;
        the reversed orientation is tried only if no forward match exists.
        """
        if isinstance(key, (int, np.integer)):
            k = int(key)
            if not 0 <= k < self.n_line:
                raise UnknownLineError(f"line index {k} out of range 0..{self.n_line - 1}")
            return k
        text = str(key).strip()
        m = re.fullmatch(r"(-?\d+)\s*-\s*(-?\d+)", text)
        if not m:
            raise UnknownLineError(f"cannot interpret line reference {key!r}")
        a, b = int(m.group(1)), int(m.group(2))
        for k, ln in enumerate(self.lines):
            if ln.from_bus == a and ln.to_bus == b:
                return k
        for k, ln in enumerate(self.lines):
            if ln.from_bus == b and ln.to_bus == a:
                return k
        raise UnknownLineError(f"no line {text}")


@dataclass(frozen=True)
class IncidenceMatrices:
    W: np.ndarray  # N x L, +1 at from-bus, -1 at to-bus
    V: np.ndarray  # N x ND
    U: np.ndarray  # N x NG


@dataclass(frozen=True)
class PmuPlacement:
    pmu_buses: tuple[int, ...]
    protected_injection_buses: frozenset = field(default_factory=frozenset)
    protected_lines: frozenset = field(default_factory=frozenset)

    def indices(self, case: GridCase) -> np.ndarray:
        return np.array([case.bus_index[b] for b in self.pmu_buses], dtype=np.int64)


def place_pmus(case: GridCase, buses) -> PmuPlacement:
    """PMUs at ``buses``; every PMU bus protects its injection and its incident lines."""
    buses = tuple(int(b) for b in buses)
    if not buses:
        raise CaseValidationError("PMU placement is empty")
    unknown = [b for b in buses if b not in case.bus_index]
    if unknown:
        raise CaseValidationError(f"PMU bus(es) not in case: {unknown}")
    if len(set(buses)) != len(buses):
        raise CaseValidationError("duplicate PMU bus")
    pset = set(buses)
    lines = frozenset(
        k for k, ln in enumerate(case.lines)
        if ln.in_service and (ln.from_bus in pset or ln.to_bus in pset)
    )
    return PmuPlacement(buses, frozenset(buses), lines)


# ---------------------------------------------------------------------------
# construction / validation
# ---------------------------------------------------------------------------

def make_case(base_mva, buses, lines, loads, gens) -> GridCase:
    """Validate raw tables and return a balanced :class:`GridCase`.

    ``buses`` is a sequence of ``(id, kind)``; ``lines`` of
    ``(from, to, x[, in_service])``; ``loads``/``gens`` of ``(bus, MW)``.
    Repeated load or generator entries on a bus are summed.
    """
    base_mva = float(base_mva)
    if not np.isfinite(base_mva) or base_mva <= 0:
        raise CaseValidationError(f"base_mva must be positive, got {base_mva}")

    bus_ids, kinds = [], []
    for bid, kind in buses:
        if kind not in BUS_KINDS:
            raise CaseValidationError(f"bus {bid}: unknown kind {kind!r}")
        bus_ids.append(int(bid))
        kinds.append(kind)
    if not bus_ids:
        raise CaseValidationError("case has no buses")
    if len(set(bus_ids)) != len(bus_ids):
        raise CaseValidationError("duplicate bus id")
    n_slack = kinds.count("slack")
    if n_slack != 1:
        raise CaseValidationError(
            "no slack bus" if n_slack == 0 else f"{n_slack} slack buses (exactly one required)"
        )
    known = set(bus_ids)

    line_objs = []
    for row in lines:
        f, t, x = int(row[0]), int(row[1]), float(row[2])
        status = bool(row[3]) if len(row) > 3 else True
        if f not in known or t not in known:
            raise CaseValidationError(f"line {f}-{t} references an unknown bus")
        if f == t:
            raise CaseValidationError(f"line {f}-{t} is a self-loop")
        if not np.isfinite(x) or x <= 0:
            raise CaseValidationError(f"line {f}-{t}: reactance must be positive and finite, got {x}")
        line_objs.append(Line(f, t, x, status))

    def _merge(entries, what):
        acc: dict[int, float] = {}
        for bid, mw in entries:
            bid, mw = int(bid), float(mw)
            if bid not in known:
                raise CaseValidationError(f"{what} at unknown bus {bid}")
            if not np.isfinite(mw):
                raise CaseValidationError(f"{what} at bus {bid} is not finite")
            acc[bid] = acc.get(bid, 0.0) + mw
        order = {b: i for i, b in enumerate(bus_ids)}
        return [(b, acc[b]) for b in sorted(acc, key=order.__getitem__)]

    load_list = [(b, mw) for b, mw in _merge(loads, "load") if mw != 0.0]
    gen_list = _merge(gens, "generator")
    gen_list = _balance(bus_ids[kinds.index("slack")], load_list, gen_list, base_mva)

    case = GridCase(base_mva, tuple(bus_ids), tuple(kinds), tuple(line_objs),
                    tuple(load_list), tuple(gen_list))
    if not is_connected(case):
        raise CaseValidationError("in-service network is not connected")
    return case


def _balance(slack_id, loads, gens, base_mva):
    """Scale generation to match total load.

    If there is no positive generation at all, the slack bus picks up the
    whole load. Cases already balanced to 1e-9 MW are left untouched so that
    write/read round trips are exact.
    """
    total_load = sum(mw for _, mw in loads)
    total_gen = sum(mw for _, mw in gens)
    if abs(total_gen - total_load) <= 1e-9 * max(1.0, abs(total_load)):
        return gens
    if total_gen > 0:
        scale = total_load / total_gen
        gens = [(b, mw * scale) for b, mw in gens]
    else:
        gens = [(b, mw) for b, mw in gens if b != slack_id]
        gens.append((slack_id, total_load - sum(mw for _, mw in gens)))
    mismatch = (sum(mw for _, mw in gens) - total_load) / base_mva
    if abs(mismatch) > _BALANCE_TOL_PU:
        raise CaseValidationError(f"generation/load imbalance {mismatch:.3e} pu after normalization")
    return gens


# ---------------------------------------------------------------------------
# graph facts
# ---------------------------------------------------------------------------

def _adjacency(case: GridCase, skip: int | None = None):
    adj = [[] for _ in range(case.n_bus)]
    for k in range(case.n_line):
        if k == skip or not case.in_service[k]:
            continue
        i, j = case.line_from[k], case.line_to[k]
        adj[i].append((j, k))
        adj[j].append((i, k))
    return adj


def is_connected(case: GridCase, skip: int | None = None) -> bool:
    adj = _adjacency(case, skip)
    seen = np.zeros(case.n_bus, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v, _ in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return bool(seen.all())


def bridge_lines(case: GridCase) -> frozenset:
    """Indices of in-service lines whose removal disconnects the network.

    Iterative low-link DFS over the multigraph; parallel lines are never
    bridges because the walk skips only the edge it arrived on.
    """
    n = case.n_bus
    adj = _adjacency(case)
    disc = [-1] * n
    low = [0] * n
    bridges = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            u, via, it = stack[-1]
            advanced = False
            for v, k in it:
                if k == via:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, k, iter(adj[v])))
                    advanced = True
                    break
                low[u] = min(low[u], disc[v])
            if advanced:
                continue
            stack.pop()
            if stack:
                parent = stack[-1][0]
                low[parent] = min(low[parent], low[u])
                if low[u] > disc[parent]:
                    bridges.add(via)
    return frozenset(bridges)


def is_islanding_line(case: GridCase, k) -> bool:
    k = case.find_line(k)
    if not case.in_service[k]:
        raise ValueError(f"line {case.line_name(k)} is out of service")
    return k in bridge_lines(case)


def build_incidence(case: GridCase) -> IncidenceMatrices:
    N, L = case.n_bus, case.n_line
    W = np.zeros((N, L))
    cols = np.arange(L)
    W[case.line_from, cols] = 1.0
    W[case.line_to, cols] = -1.0
    V = np.zeros((N, case.n_load))
    V[case.load_index, np.arange(case.n_load)] = 1.0
    U = np.zeros((N, case.n_gen))
    U[case.gen_index, np.arange(case.n_gen)] = 1.0
    return IncidenceMatrices(W, V, U)


def default_candidates(case: GridCase, pmu: PmuPlacement) -> list[int]:
    """In-service lines that are neither bridges nor covered by a PMU."""
    bridges = bridge_lines(case)
    return [
        k for k in range(case.n_line)
        if case.in_service[k] and k not in bridges and k not in pmu.protected_lines
    ]


# ---------------------------------------------------------------------------
# native format
# ---------------------------------------------------------------------------

_SECTIONS = ("case", "bus", "line", "load", "gen")


def _tokens(text):
    """Yield (lineno, column_of_each_token, tokens) for non-blank lines."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        toks = [(m.start() + 1, m.group()) for m in re.finditer(r"\S+", body)]
        if toks:
            yield lineno, toks


def parse_native(text: str) -> GridCase:
    section = None
    base_mva = 100.0
    buses, lines, loads, gens = [], [], [], []
    seen = set()

    def num(tok, lineno, conv=float):
        col, s = tok
        try:
            return conv(s)
        except ValueError:
            raise CaseParseError(f"expected a number, got {s!r}", lineno, col) from None

    for lineno, toks in _tokens(text):
        first = toks[0][1]
        if first.startswith("["):
            m = re.fullmatch(r"\[(\w+)\]", first)
            if not m or m.group(1) not in _SECTIONS or len(toks) != 1:
                raise CaseParseError(f"bad section header {first!r}", lineno, toks[0][0])
            section = m.group(1)
            if section in seen:
                raise CaseParseError(f"duplicate section [{section}]", lineno, toks[0][0])
            seen.add(section)
            continue
        if section is None:
            raise CaseParseError("data before the first section header", lineno, toks[0][0])

        def arity(lo, hi=None):
            hi = lo if hi is None else hi
            if not lo <= len(toks) <= hi:
                want = str(lo) if lo == hi else f"{lo}-{hi}"
                col = toks[min(len(toks), hi) - 1][0] if len(toks) > hi else toks[-1][0]
                raise CaseParseError(
                    f"[{section}] row needs {want} columns, got {len(toks)}", lineno, col)

        if section == "case":
            arity(2)
            if first != "base_mva":
                raise CaseParseError(f"unknown [case] key {first!r}", lineno, toks[0][0])
            base_mva = num(toks[1], lineno)
        elif section == "bus":
            arity(2)
            kind = toks[1][1]
            if kind not in BUS_KINDS:
                raise CaseParseError(f"unknown bus kind {kind!r}", lineno, toks[1][0])
            buses.append((num(toks[0], lineno, int), kind))
        elif section == "line":
            arity(3, 4)
            row = [num(toks[0], lineno, int), num(toks[1], lineno, int), num(toks[2], lineno)]
            if len(toks) == 4:
                row.append(num(toks[3], lineno, int) != 0)
            lines.append(tuple(row))
        elif section == "load":
            arity(2)
            loads.append((num(toks[0], lineno, int), num(toks[1], lineno)))
        else:
            arity(2)
            gens.append((num(toks[0], lineno, int), num(toks[1], lineno)))

    return make_case(base_mva, buses, lines, loads, gens)


def format_case(case: GridCase) -> str:
    """Serialize to the native format; ``parse_native`` inverts this exactly."""
    out = ["[case]", f"base_mva {case.base_mva!r}", "", "[bus]", "# id kind"]
    out += [f"{b} {k}" for b, k in zip(case.bus_ids, case.bus_kinds)]
    out += ["", "[line]", "# from to x in_service"]
    out += [f"{ln.from_bus} {ln.to_bus} {ln.x!r} {int(ln.in_service)}" for ln in case.lines]
    out += ["", "[load]", "# bus MW"]
    out += [f"{b} {mw!r}" for b, mw in case.loads]
    out += ["", "[gen]", "# bus MW"]
    out += [f"{b} {mw!r}" for b, mw in case.gens]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# MATPOWER-style tables
# ---------------------------------------------------------------------------

_MPC_SCALAR = re.compile(r"mpc\.baseMVA\s*=\s*([^;\s]+)\s*;")
_MPC_TABLE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)


def parse_matpower(text: str) -> GridCase:
    # strip comments but keep newlines so reported line numbers stay right
    clean = re.sub(r"%[^\n]*", "", text)
    m = _MPC_SCALAR.search(clean)
    base_mva = 100.0
    if m:
        try:
            base_mva = float(m.group(1))
        except ValueError:
            raise CaseParseError(f"bad baseMVA {m.group(1)!r}",
                                 clean.count("\n", 0, m.start(1)) + 1) from None

    tables = {}
    for tm in _MPC_TABLE.finditer(clean):
        name = tm.group(1)
        start_line = clean.count("\n", 0, tm.start(2)) + 1
        rows = []
        body = tm.group(2)
        offset = 0
        for chunk in re.split(r"[;\n]", body):
            line_here = start_line + body.count("\n", 0, offset)
            offset += len(chunk) + 1
            chunk = chunk.strip()
            if not chunk:
                continue
            vals = []
            for tok in re.split(r"[\s,]+", chunk):
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise CaseParseError(f"non-numeric entry {tok!r} in mpc.{name}", line_here) from None
            rows.append(vals)
        tables[name] = rows

    for need, width in (("bus", 3), ("branch", 4), ("gen", 2)):
        if need not in tables:
            raise CaseParseError(f"missing mpc.{need} table")
        for r in tables[need]:
            if len(r) < width:
                raise CaseParseError(f"mpc.{need} row has {len(r)} columns, need at least {width}")

    gens = []
    for r in tables["gen"]:
        if len(r) > 7 and r[7] <= 0:
            continue
        gens.append((int(r[0]), r[1]))
    gen_buses = {b for b, _ in gens}

    buses, loads = [], []
    for r in tables["bus"]:
        bid, btype, pd = int(r[0]), int(r[1]), r[2]
        if btype == 4:
            raise CaseValidationError(f"bus {bid} is isolated (type 4)")
        if btype == 3:
            kind = "slack"
        elif bid in gen_buses:
            kind = "generator"
        elif pd != 0:
            kind = "load"
        else:
            kind = "transit"
        buses.append((bid, kind))
        if pd != 0:
            loads.append((bid, pd))

    lines = []
    for r in tables["branch"]:
        status = bool(r[10]) if len(r) > 10 else True
        lines.append((int(r[0]), int(r[1]), r[3], status))
    return make_case(base_mva, buses, lines, loads, gens)


def parse_case(text: str) -> GridCase:
    """Parse either accepted format, sniffing for ``mpc.`` tables."""
    if re.search(r"^\s*mpc\.\w+\s*=", text, re.M):
        return parse_matpower(text)
    return parse_native(text)


def load_case(path) -> GridCase:
    return parse_case(Path(path).read_text(encoding="utf-8"))


def bundled_case_path(name: str = "case39") -> Path:
    return Path(__file__).with_name("data") / f"{name}.m"
