import numpy as np
import pytest

from outage_mask.case import bridge_lines, load_case, parse_case
from outage_mask.dc import build_dc_model, line_flows, solve_angles
from outage_mask.errors import DegenerateOutageError, TopologyError
from outage_mask.outage import (
    OutageScenario, all_gammas, equivalent_injection, gamma, make_scenario,
    post_outage_angles_equiv, post_outage_angles_exact, terminal_vector, thevenin,
)

from conftest import random_balanced

SMALL = ("tri3.case", "parallel2.case", "radial4.case")


def _models(case39, data_dir):
    cases = [case39] + [load_case(data_dir / n) for n in SMALL]
    return [(c, build_dc_model(c)) for c in cases]


def test_gamma_39_line_25_26(model39):
    assert abs(gamma(model39, "25-26") - (-3.1582)) <= 0.07


def test_gamma_parallel_pair(data_dir):
    m = build_dc_model(load_case(data_dir / "parallel2.case"))
    th = thevenin(m, 0)
    assert th.xth == pytest.approx(0.05)
    assert gamma(m, 0) == pytest.approx(-2.0)
    assert gamma(m, 1) == pytest.approx(-2.0)


def test_gamma_bridge_degenerate():
    two = build_dc_model(parse_case("[bus]\n1 slack\n2 load\n[line]\n1 2 0.1\n[load]\n2 1\n"))
    with pytest.raises(DegenerateOutageError):
        gamma(two, 0)


def test_gamma_errors_exactly_on_bridges(case39, data_dir):
    for c, m in _models(case39, data_dir):
        g = all_gammas(m, np.arange(c.n_line))
        bridges = bridge_lines(c)
        for k in range(c.n_line):
            assert np.isnan(g[k]) == (k in bridges)
            if k in bridges:
                with pytest.raises(DegenerateOutageError):
                    gamma(m, k)
            else:
                assert g[k] == pytest.approx(gamma(m, k), rel=1e-14)


def test_xth_reference_invariant(case39):
    # Thevenin reactance does not depend on which bus is the angle reference
    from outage_mask.case import GridCase
    k = case39.find_line("25-26")
    base = thevenin(build_dc_model(case39), k).xth
    kinds = list(case39.bus_kinds)
    kinds[kinds.index("slack")] = "generator"
    kinds[case39.bus_index[39]] = "slack"
    moved = GridCase(case39.base_mva, case39.bus_ids, tuple(kinds), case39.lines, case39.loads, case39.gens)
    assert thevenin(build_dc_model(moved), k).xth == pytest.approx(base, rel=1e-10)


def test_equivalent_injection():
    sc = OutageScenario(0, -2.0, np.array([1.0, -1.0]), 0.0, np.zeros(2))
    assert equivalent_injection(sc, 0.0) == 0.0
    assert equivalent_injection(sc, 0.5) == pytest.approx(1.0)
    for f in (0.3, -1.7, 12.0):
        assert equivalent_injection(sc, f) == -equivalent_injection(sc, -f)


def test_terminal_vector(model39):
    k = model39.case.find_line("25-26")
    e = terminal_vector(model39, k)
    assert e[model39.case.bus_index[25]] == 1.0
    assert e[model39.case.bus_index[26]] == -1.0
    assert np.count_nonzero(e) == 2


def test_zero_injection_no_effect(model39):
    sc = make_scenario(model39, "25-26", np.zeros(39))
    np.testing.assert_array_equal(post_outage_angles_equiv(model39, sc), 0.0)
    np.testing.assert_array_equal(post_outage_angles_exact(model39.case, "25-26", np.zeros(39)), 0.0)


def test_equivalence_all_lines(case39, data_dir, rng):
    """Compensating transfer on the intact network reproduces the exact removal."""
    for c, m in _models(case39, data_dir):
        bridges = bridge_lines(c)
        for k in range(c.n_line):
            if k in bridges:
                continue
            for _ in range(20):
                p = random_balanced(rng, c.n_bus, c.slack)
                sc = make_scenario(m, k, p)
                a = post_outage_angles_equiv(m, sc)
                b = post_outage_angles_exact(c, k, p)
                scale = max(np.max(np.abs(b)), 1e-300)
                assert np.max(np.abs(a - b)) <= 1e-9 * scale


def test_equivalent_line_carries_transfer(model39, case39):
    # after compensation, the outaged line's flow equals the injected transfer
    k = case39.find_line("25-26")
    sc = make_scenario(model39, k)
    f = line_flows(model39, post_outage_angles_equiv(model39, sc))
    assert f[k] == pytest.approx(equivalent_injection(sc, sc.f_k0_actual), rel=1e-10)


def test_triangle_exact_matches_bruteforce(data_dir):
    c = load_case(data_dir / "tri3.case")
    m = build_dc_model(c)
    p = c.injections_pu()
    for k in range(3):
        # hand-built B_out
        keep = [n for n in range(3) if n != k]
        B = np.zeros((3, 3))
        for n in keep:
            i, j, b = c.line_from[n], c.line_to[n], 1 / c.reactance[n]
            B[i, i] += b
            B[j, j] += b
            B[i, j] -= b
            B[j, i] -= b
        th = np.zeros(3)
        th[1:] = np.linalg.solve(B[1:, 1:], p[1:])
        np.testing.assert_allclose(post_outage_angles_exact(c, k, p), th, atol=1e-12)
        np.testing.assert_allclose(post_outage_angles_equiv(m, make_scenario(m, k, p)), th, atol=1e-12)
        assert np.max(np.abs(th - solve_angles(m, p))) > 1e-6


def test_exact_bridge_topology_error(case39):
    with pytest.raises(TopologyError):
        post_outage_angles_exact(case39, "16-19", case39.injections_pu())


def test_39_pmu_changes_against_ac(case39, model39):
    k = case39.find_line("25-26")
    p = case39.injections_pu()
    idx = [case39.bus_index[b] for b in (4, 13, 18, 23, 24)]
    d = np.degrees(post_outage_angles_exact(case39, k, p) - solve_angles(model39, p))[idx]
    ac = np.array([-0.07, -0.11, -0.32, -0.43, -0.44])
    assert np.all(np.abs(d - ac) <= 0.15)
