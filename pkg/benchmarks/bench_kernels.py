"""Time the numba and pure-numpy kernel flavours side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--trials 20000]

Each kernel is compiled (or warmed up) once before timing. The last block
times a full attack solve on the 39-bus case with each flavour switched in.
"""

from __future__ import annotations

import argparse
import time
import warnings

import numpy as np

from outage_mask import _kernels
from outage_mask.attack import assemble_problem, build_residual_model, solve_attack
from outage_mask.case import bundled_case_path, load_case, place_pmus
from outage_mask.dc import build_dc_model
from outage_mask.detection import simulate_observation


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def lp_tableau(rng, m, n):
    A = rng.uniform(0, 1, size=(m, n))
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = rng.uniform(1, 2, size=m)
    T[m, :n] = -rng.uniform(0, 1, size=n)
    return T, np.arange(n, n + m, dtype=np.int64)


def bench_simplex(flavour, rng, repeat, m=60, n=80, count=20):
    fn = _kernels.simplex_iterate_numba if flavour == "numba" else _kernels.simplex_iterate_numpy
    problems = [lp_tableau(rng, m, n) for _ in range(count)]

    def run():
        for T, basis in problems:
            fn(T.copy(), basis.copy(), n + m, 10_000, 1e-10)

    run()
    return best_of(run, repeat)


def bench_residuals(flavour, rng, repeat, trials):
    fn = _kernels.orthogonal_residuals_numba if flavour == "numba" else _kernels.orthogonal_residuals_numpy
    D = rng.normal(size=(5, 46))
    B = rng.normal(size=(5, trials))
    fn(D[:, :2].copy(), B[:, :2].copy(), 1e-12)
    return best_of(lambda: fn(D, B, 1e-12), repeat)


def bench_attack(flavour, repeat):
    case = load_case(bundled_case_path("case39"))
    model = build_dc_model(case)
    pmu = place_pmus(case, (4, 13, 18, 23, 24))
    obs = simulate_observation(case, model, "25-26", pmu, noise=(np.radians(0.05), 7))
    rm = build_residual_model(model, pmu, "25-26", obs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        prob = assemble_problem(rm, case, model, pmu, 0.5)
    saved = _kernels.USE_NUMBA
    _kernels.USE_NUMBA = flavour == "numba"
    try:
        solve_attack(prob, starts=2)
        return best_of(lambda: solve_attack(prob, starts=32), repeat)
    finally:
        _kernels.USE_NUMBA = saved


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats, best is reported")
    ap.add_argument("--trials", type=int, default=20_000, help="observation columns for the residual kernel")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rows = []
    for label, bench in (
        ("simplex_iterate (20 LPs, 60x80)", lambda fl: bench_simplex(fl, np.random.default_rng(args.seed), args.repeat)),
        (f"orthogonal_residuals (46 x {args.trials})",
         lambda fl: bench_residuals(fl, np.random.default_rng(args.seed), args.repeat, args.trials)),
        ("solve_attack 25-26, 32 starts", lambda fl: bench_attack(fl, args.repeat)),
    ):
        t_nb, t_np = bench("numba"), bench("numpy")
        rows.append((label, t_nb, t_np))

    print(f"{'kernel':<40} {'numba (s)':>11} {'numpy (s)':>11} {'speedup':>8}")
    for label, t_nb, t_np in rows:
        print(f"{label:<40} {t_nb:>11.4f} {t_np:>11.4f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
