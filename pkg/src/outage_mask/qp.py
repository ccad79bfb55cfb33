"""Maximizing a convex quadratic over a bounded polytope.

The maximum of a convex function over a polytope is attained at a vertex,
but finding it is NP-hard in general. :func:`maximize_convex_quadratic` runs
monotone vertex ascent: from the current point, solve the LP that maximizes
the objective's linearization, jump to that vertex, repeat until the LP finds
no improving direction. Restarts come from the vertices that maximize random
linear objectives. :func:`vertex_enumeration_max` is the exhaustive check
for small instances and shares no code with the simplex path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InfeasibleAttackError, IterationLimitError, UnboundedProblemError

_PIVOT_TOL = 1e-10
_FEAS_TOL = 1e-9


@dataclass(eq=False)
class Polytope:
    """``{x : A_eq x = b_eq, A_ub x <= b_ub, lb <= x <= ub}`` with finite bounds."""

    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        n = len(self.lb)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub))):
            raise ValueError("all variable bounds must be finite")
        self._std = None

    @property
    def n(self) -> int:
        return len(self.lb)

    def violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = [np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0)]
        if len(self.b_eq):
            v.append(np.max(np.abs(self.A_eq @ x - self.b_eq)))
        if len(self.b_ub):
            v.append(np.max(self.A_ub @ x - self.b_ub, initial=0.0))
        return float(max(v))

    def contains(self, x, tol=1e-8) -> bool:
        return self.violation(x) <= tol

    def active_rank(self, x, tol=1e-7) -> int:
        """Rank of the constraint normals tight at ``x`` (``n`` means vertex)."""
        x = np.asarray(x, dtype=float)
        rows = [self.A_eq]
        if len(self.b_ub):
            rows.append(self.A_ub[np.abs(self.A_ub @ x - self.b_ub) <= tol])
        eye = np.eye(self.n)
        rows.append(eye[(np.abs(x - self.lb) <= tol) | (np.abs(x - self.ub) <= tol)])
        M = np.vstack(rows)
        if M.size == 0:
            return 0
        return int(np.linalg.matrix_rank(M, tol=1e-9))

    # -- LP machinery -----------------------------------------------------
    def _standard_form(self):
        if self._std is None:
            self._std = _StandardForm(self)
        return self._std

    def lp_max(self, c, warm=None) -> "LpResult":
        """Maximize ``c.x``. ``warm`` is a previous :class:`LpResult` whose
        basis is reused as the starting point."""
        return self._standard_form().maximize(np.asarray(c, dtype=float), warm)


@dataclass
class LpResult:
    x: np.ndarray
    value: float
    iterations: int
    T: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)


class _StandardForm:
    """Phase-I-feasible tableau for a :class:`Polytope`.

    Variables with ``lb == ub`` are eliminated. Remaining ones are shifted to
    ``y = x - lb >= 0`` with explicit upper-bound rows ``y + t = ub - lb``.
    """

    def __init__(self, poly: Polytope):
        width = poly.ub - poly.lb
        if np.any(width < -_FEAS_TOL):
            raise InfeasibleAttackError("a variable has lower bound above its upper bound")
        self.poly = poly
        free = np.nonzero(width > _FEAS_TOL)[0]
        self.free = free
        x_fixed = poly.lb.copy()
        nf = len(free)
        m_eq, m_ub = len(poly.b_eq), len(poly.b_ub)
        A_eq = poly.A_eq[:, free]
        b_eq = poly.b_eq - poly.A_eq @ x_fixed
        A_ub = poly.A_ub[:, free]
        b_ub = poly.b_ub - poly.A_ub @ x_fixed
        # drop rows that no longer involve any variable; check they hold
        keep_eq = np.any(np.abs(A_eq) > 1e-14, axis=1)
        if np.any(np.abs(b_eq[~keep_eq]) > _FEAS_TOL):
            raise InfeasibleAttackError("an equality constraint is violated by fixed variables")
        keep_ub = np.any(np.abs(A_ub) > 1e-14, axis=1)
        if np.any(b_ub[~keep_ub] < -_FEAS_TOL):
            raise InfeasibleAttackError("an inequality constraint is violated by fixed variables")
        A_eq, b_eq = A_eq[keep_eq], b_eq[keep_eq]
        A_ub, b_ub = A_ub[keep_ub], b_ub[keep_ub]
        m_eq, m_ub = len(b_eq), len(b_ub)

        m = m_eq + m_ub + nf
        n_std = nf + m_ub + nf
        A = np.zeros((m, n_std))
        b = np.zeros(m)
        A[:m_eq, :nf] = A_eq
        b[:m_eq] = b_eq
        A[m_eq:m_eq + m_ub, :nf] = A_ub
        A[m_eq:m_eq + m_ub, nf:nf + m_ub] = np.eye(m_ub)
        b[m_eq:m_eq + m_ub] = b_ub
        A[m_eq + m_ub:, :nf] = np.eye(nf)
        A[m_eq + m_ub:, nf + m_ub:] = np.eye(nf)
        b[m_eq + m_ub:] = width[free]

        scale = np.max(np.abs(A), axis=1)
        scale[scale == 0] = 1.0
        A /= scale[:, None]
        b /= scale
        neg = b < 0
        A[neg] *= -1.0
        b[neg] *= -1.0

        # initial basis: a slack column with +1 where possible, else an artificial
        basis = np.empty(m, dtype=np.int64)
        needs_art = []
        for r in range(m):
            if r >= m_eq:
                sc = nf + (r - m_eq) if r < m_eq + m_ub else nf + m_ub + (r - m_eq - m_ub)
                coef = A[r, sc]
                if coef > 0:
                    A[r] /= coef
                    b[r] /= coef
                    basis[r] = sc
                    continue
            needs_art.append(r)
        n_art = len(needs_art)
        T = np.zeros((m + 1, n_std + n_art + 1))
        T[:m, :n_std] = A
        T[:m, -1] = b
        for a, r in enumerate(needs_art):
            T[r, n_std + a] = 1.0
            basis[r] = n_std + a
        # phase I: minimize the sum of artificials
        for r in needs_art:
            T[m, :n_std] -= T[r, :n_std]
            T[m, -1] -= T[r, -1]
        self.iterations_phase1 = 0
        if n_art:
            status, it = _kernels.simplex_iterate(T, basis, n_std + n_art, 50_000, _PIVOT_TOL)
            self.iterations_phase1 = it
            if status == _kernels.STATUS_ITER_LIMIT:
                raise IterationLimitError("phase I simplex iteration limit")
            infeas = -T[m, -1]
            if infeas > _FEAS_TOL * max(1.0, np.max(np.abs(b), initial=0.0)):
                raise InfeasibleAttackError(f"constraint set is empty (phase I residual {infeas:.3e})")
            # move zero-level artificials out of the basis where possible
            for r in range(m):
                if basis[r] >= n_std:
                    cands = np.nonzero(np.abs(T[r, :n_std]) > 1e-9)[0]
                    if cands.size:
                        c = cands[np.argmax(np.abs(T[r, cands]))]
                        T[r] /= T[r, c]
                        for i in range(m + 1):
                            if i != r and T[i, c] != 0.0:
                                T[i] -= T[i, c] * T[r]
                        T[:, c] = 0.0
                        T[r, c] = 1.0
                        basis[r] = c
        self.T = T
        self.basis = basis
        self.m = m
        self.n_std = n_std
        self.nf = nf
        self.x_fixed = x_fixed

    def point(self, T, basis) -> np.ndarray:
        y = np.zeros(self.nf)
        rows = np.nonzero(basis < self.nf)[0]
        y[basis[rows]] = T[rows, -1]
        x = self.x_fixed.copy()
        x[self.free] += y
        return np.clip(x, self.poly.lb, self.poly.ub)

    def maximize(self, c, warm=None) -> LpResult:
        if warm is not None:
            T, basis = warm.T.copy(), warm.basis.copy()
        else:
            T, basis = self.T.copy(), self.basis.copy()
        m = self.m
        cf = c[self.free]
        cmax = np.max(np.abs(cf), initial=0.0)
        iters = 0
        if cmax > 0:
            cost = np.zeros(T.shape[1] - 1)
            cost[:self.nf] = -cf / cmax
            cb = cost[basis]
            T[m, :-1] = cost - cb @ T[:m, :-1]
            T[m, -1] = -cb @ T[:m, -1]
            status, iters = _kernels.simplex_iterate(T, basis, self.n_std, 50_000, _PIVOT_TOL)
            if status == _kernels.STATUS_UNBOUNDED:
                raise UnboundedProblemError("LP is unbounded")
            if status == _kernels.STATUS_ITER_LIMIT:
                raise IterationLimitError("simplex iteration limit")
        x = self.point(T, basis)
        return LpResult(x, float(c @ x), iters, T, basis)

    def neighbors(self, state: LpResult):
        """Yield ``(x, column, row)`` for each non-degenerate edge out of the
        vertex held in ``state``."""
        T, basis = state.T, state.basis
        m = self.m
        # redundant rows may keep a zero-level artificial basic
        base_y = np.zeros(T.shape[1] - 1)
        base_y[basis] = T[:m, -1]
        nonbasic = np.ones(self.n_std, dtype=bool)
        nonbasic[basis[basis < self.n_std]] = False
        for j in np.nonzero(nonbasic)[0]:
            col = T[:m, j]
            pos = col > _PIVOT_TOL
            if not pos.any():
                continue
            ratios = T[:m, -1][pos] / col[pos]
            theta = ratios.min()
            if theta <= _PIVOT_TOL:
                continue
            rows = np.nonzero(pos)[0]
            r = rows[np.argmin(ratios)]
            y = base_y.copy()
            y[basis] -= theta * col
            y[j] = theta
            x = self.x_fixed.copy()
            x[self.free] += y[:self.nf]
            yield np.clip(x, self.poly.lb, self.poly.ub), j, r

    def pivot(self, state: LpResult, j, r, c) -> LpResult:
        T, basis = state.T.copy(), state.basis.copy()
        T[r] /= T[r, j]
        for i in range(T.shape[0]):
            if i != r and T[i, j] != 0.0:
                T[i] -= T[i, j] * T[r]
        T[:, j] = 0.0
        T[r, j] = 1.0
        basis[r] = j
        x = self.point(T, basis)
        return LpResult(x, float(c @ x), 1, T, basis)


# ---------------------------------------------------------------------------
# vertex ascent
# ---------------------------------------------------------------------------

@dataclass
class AscentCertificate:
    lp_gap: float           # max over the polytope of grad.(y - x) at the answer
    active_rank: int
    is_vertex: bool


@dataclass
class QpResult:
    x: np.ndarray
    value: float
    best_start: int
    start_values: list
    iterations: int
    lp_solves: int
    certificate: AscentCertificate
    hit_iteration_cap: bool = False


def quad_value(Q, q, x) -> float:
    return float(0.5 * x @ Q @ x + q @ x)


def _improving_neighbor(Q, q, poly, state, f):
    std = poly._standard_form()
    best = None
    for x, j, r in std.neighbors(state):
        fx = quad_value(Q, q, x)
        if fx > f + 1e-12 * max(abs(f), 1e-300) and (best is None or fx > best[0]):
            best = (fx, j, r)
    if best is None:
        return None
    return best[0], std.pivot(state, best[1], best[2], Q @ state.x + q)


def _ascend(Q, q, poly, x0, warm, max_iter):
    """Linearization ascent; when the LP step stalls at a vertex, try the
    best improving adjacent vertex before giving up."""
    x = np.asarray(x0, dtype=float)
    f = quad_value(Q, q, x)
    state = warm
    lp_solves = 0
    for it in range(max_iter):
        g = Q @ x + q
        res = poly.lp_max(g, state)
        lp_solves += 1
        gap = float(g @ (res.x - x))
        fy = quad_value(Q, q, res.x)
        if gap > 1e-12 * max(abs(f), 1e-300) and fy > f:
            x, f, state = res.x, fy, res
            continue
        # LP-stationary; only a vertex tableau has neighbours to inspect
        at_vertex = state if state is not None else (res if np.allclose(res.x, x) else None)
        step = _improving_neighbor(Q, q, poly, at_vertex, f) if at_vertex is not None else None
        if step is None:
            return x, f, state, it, lp_solves, False
        f, state = step
        x = state.x
    return x, f, state, max_iter, lp_solves, True


def maximize_convex_quadratic(Q, q, poly: Polytope, starts=32, seed=0,
                              warm_start=None, include_origin=True, max_iter=500) -> QpResult:
    """Best vertex found by multi-start linearization ascent.

    Start 0 is ``warm_start`` when given and feasible, then the origin when
    feasible and requested, then ``starts`` vertices maximizing random
    directions drawn from ``seed``. Ties keep the lowest start index.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    rng = np.random.default_rng(seed)
    initial = []
    if warm_start is not None and poly.contains(warm_start):
        initial.append(np.clip(np.asarray(warm_start, dtype=float), poly.lb, poly.ub))
    if include_origin and poly.contains(np.zeros(poly.n)):
        initial.append(np.zeros(poly.n))
    best = None
    values = []
    total_it = 0
    total_lp = 0
    capped = False
    n_random = max(int(starts), 0)
    for s in range(len(initial) + n_random):
        if s < len(initial):
            x0, warm = initial[s], None
        else:
            d = rng.standard_normal(poly.n)
            lp = poly.lp_max(d)
            total_lp += 1
            x0, warm = lp.x, lp
        x, f, _, it, nlp, hit = _ascend(Q, q, poly, x0, warm, max_iter)
        total_it += it
        total_lp += nlp
        values.append(f)
        if best is None or f > best[1] + 1e-12 * max(abs(best[1]), 1e-300):
            best = (x, f, s, hit)
        capped = capped or hit
    if best is None:
        # no starts at all: fall back to any feasible vertex
        lp = poly.lp_max(np.zeros(poly.n))
        best = (lp.x, quad_value(Q, q, lp.x), 0, False)
        values.append(best[1])
    x, f, s, hit = best
    g = Q @ x + q
    gap = float(g @ (poly.lp_max(g).x - x))
    rank = poly.active_rank(x)
    cert = AscentCertificate(max(gap, 0.0), rank, rank == poly.n)
    result = QpResult(x, f, s, values, total_it, total_lp + 1, cert, hit)
    if hit:
        raise IterationLimitError("vertex ascent hit its iteration cap", best=result)
    return result


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------

def enumerate_vertices(poly: Polytope, tol=1e-9) -> np.ndarray:
    """All vertices by brute force over active sets (small problems only)."""
    n = poly.n
    G = np.vstack([poly.A_ub, np.eye(n), -np.eye(n)])
    h = np.concatenate([poly.b_ub, poly.ub, -poly.lb])
    Aeq, beq = poly.A_eq, poly.b_eq
    r_eq = np.linalg.matrix_rank(Aeq) if len(beq) else 0
    need = n - r_eq
    found = []
    for S in itertools.combinations(range(len(h)), need):
        M = np.vstack([Aeq, G[list(S)]])
        rhs = np.concatenate([beq, h[list(S)]])
        if np.linalg.matrix_rank(M, tol=1e-10) < n:
            continue
        x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        if np.max(np.abs(M @ x - rhs)) > tol * max(1.0, np.max(np.abs(rhs))):
            continue
        if poly.contains(x, tol=1e-8):
            found.append(x)
    if not found:
        return np.zeros((0, n))
    V = np.array(found)
    _, idx = np.unique(np.round(V, 9), axis=0, return_index=True)
    return V[np.sort(idx)]


def vertex_enumeration_max(Q, q, poly: Polytope):
    V = enumerate_vertices(poly)
    if len(V) == 0:
        raise InfeasibleAttackError("polytope has no vertices")
    vals = 0.5 * np.einsum("vi,ij,vj->v", V, Q, V) + V @ q
    k = int(np.argmax(vals))
    return V[k], float(vals[k])
