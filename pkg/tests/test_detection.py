import numpy as np
import pytest

from outage_mask.case import default_candidates, load_case, place_pmus
from outage_mask.dc import build_dc_model
from outage_mask.detection import (
    PmuObservation, beta2_columns, candidate_residual, format_observation, identify_batch,
    identify_outage, parse_observation, rank_residuals, read_observation, simulate_observation,
)
from outage_mask.errors import CaseParseError, DegenerateOutageError


@pytest.fixture(scope="module")
def cand39(case39, pmu39):
    return default_candidates(case39, pmu39)


def _collinear(u, v, tol=1e-9):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        return nu < 1e-12 and nv < 1e-12
    return abs(abs(u @ v) / (nu * nv) - 1.0) < tol


def test_zero_injection_zero_observation(case39, model39, pmu39):
    obs = simulate_observation(case39, model39, "25-26", pmu39, p_pre=np.zeros(39))
    np.testing.assert_array_equal(obs.delta_theta_m, 0.0)


def test_seeded_noise_deterministic(case39, model39, pmu39):
    a = simulate_observation(case39, model39, "25-26", pmu39, noise=(1e-3, 5))
    b = simulate_observation(case39, model39, "25-26", pmu39, noise=(1e-3, 5))
    c = simulate_observation(case39, model39, "25-26", pmu39, noise=(1e-3, 6))
    np.testing.assert_array_equal(a.delta_theta_m, b.delta_theta_m)
    assert not np.array_equal(a.delta_theta_m, c.delta_theta_m)


def test_observation_against_ac_vector(case39, model39, pmu39):
    obs = simulate_observation(case39, model39, "25-26", pmu39)
    ac = np.array([-0.07, -0.11, -0.32, -0.43, -0.44])
    assert np.all(np.abs(np.degrees(obs.delta_theta_m) - ac) <= 0.15)


def test_observation_length_checked():
    with pytest.raises(ValueError):
        PmuObservation(np.zeros(3), (1, 2))


def test_true_line_zero_residual(case39, model39, pmu39, cand39):
    for k in cand39:
        obs = simulate_observation(case39, model39, k, pmu39)
        res = candidate_residual(model39, pmu39, obs, k)
        assert res.residual < 1e-9


def test_zero_observation_zero_residuals(model39, pmu39, cand39, data_dir):
    obs = read_observation(data_dir / "zero_obs.txt", pmu39)
    rep = identify_outage(model39, pmu39, obs, cand39)
    for c in rep.ranking:
        assert c.residual == 0.0
        assert c.best_fit_flow == 0.0
    # all tie: ranking falls back to line order
    assert [c.line for c in rep.ranking] == sorted(cand39)


def test_best_fit_flow_recovers_actual(case39, model39, pmu39):
    from outage_mask.dc import line_flows, solve_angles
    k = case39.find_line("5-8")
    obs = simulate_observation(case39, model39, k, pmu39)
    f = line_flows(model39, solve_angles(model39, case39.injections_pu()))[k]
    assert candidate_residual(model39, pmu39, obs, k).best_fit_flow == pytest.approx(f, rel=1e-9)


def test_residual_matches_grid_minimization(model39, pmu39, cand39, rng):
    obs = PmuObservation(rng.normal(scale=0.01, size=5), pmu39.pmu_buses)
    fs = np.linspace(-30, 30, 600001)
    for k in cand39[:8]:
        d = beta2_columns(model39, pmu39, [k])[:, 0]
        grid = np.linalg.norm(obs.delta_theta_m[None, :] + fs[:, None] * d[None, :], axis=1).min()
        assert candidate_residual(model39, pmu39, obs, k).residual == pytest.approx(grid, abs=1e-6)


def test_noise_free_completeness_up_to_collinearity(case39, model39, pmu39, cand39):
    """Rank 1 always has zero residual; when it is not the true line, the two
    lines' angle signatures are collinear so no detector could separate them."""
    D = beta2_columns(model39, pmu39, cand39)
    col = dict(zip(cand39, D.T))
    for k in cand39:
        obs = simulate_observation(case39, model39, k, pmu39)
        if np.linalg.norm(col[k]) < 1e-12:
            # an outage behind a cut vertex leaves the PMU angles untouched
            assert np.linalg.norm(obs.delta_theta_m) < 1e-12
            continue
        rep = identify_outage(model39, pmu39, obs, cand39)
        top = rep.ranking[0]
        assert top.residual < 1e-9
        if rep.identified != k:
            assert _collinear(col[rep.identified], col[k])
            assert rep.identified < k


def test_completeness_where_signatures_distinct(data_dir):
    # ring with a spur, PMUs at buses 2 and 4: the three ring lines are distinguishable
    c = load_case(data_dir / "radial4.case")
    m = build_dc_model(c)
    pmu = place_pmus(c, [2, 4])
    cand = [0, 1, 2]
    for k in cand:
        obs = simulate_observation(c, m, k, pmu)
        assert identify_outage(m, pmu, obs, cand).identified == k


def test_single_candidate(case39, model39, pmu39):
    obs = simulate_observation(case39, model39, "25-26", pmu39, noise=(1e-3, 1))
    k = case39.find_line("1-2")
    assert identify_outage(model39, pmu39, obs, [k]).identified == k


def test_empty_candidates_rejected(model39, pmu39):
    with pytest.raises(ValueError):
        identify_outage(model39, pmu39, PmuObservation(np.zeros(5), pmu39.pmu_buses), [])


def test_islanding_candidate_rejected(case39, model39, pmu39):
    obs = PmuObservation(np.zeros(5), pmu39.pmu_buses)
    with pytest.raises(DegenerateOutageError):
        identify_outage(model39, pmu39, obs, [case39.find_line("16-19")])


def test_report_invariants(case39, model39, pmu39, cand39):
    obs = simulate_observation(case39, model39, "5-8", pmu39, noise=(np.radians(0.05), 3))
    rep = identify_outage(model39, pmu39, obs, cand39)
    assert sorted(c.line for c in rep.ranking) == sorted(cand39)
    r = [c.residual for c in rep.ranking]
    assert r == sorted(r) or np.allclose(r, sorted(r), rtol=0, atol=1e-9 * np.linalg.norm(obs.delta_theta_m))
    assert rep.identified == rep.ranking[0].line
    assert rep.residual_of(rep.identified) == pytest.approx(min(r))
    assert rep.rank_of(rep.identified) == 1


def test_scale_equivariance(case39, model39, pmu39, cand39):
    p = case39.injections_pu()
    k = case39.find_line("14-15")
    a = identify_outage(model39, pmu39, simulate_observation(case39, model39, k, pmu39, p_pre=p), cand39)
    b = identify_outage(model39, pmu39, simulate_observation(case39, model39, k, pmu39, p_pre=3 * p), cand39)
    assert [c.line for c in a.ranking] == [c.line for c in b.ranking]
    for ca, cb in zip(a.ranking, b.ranking):
        assert cb.residual == pytest.approx(3 * ca.residual, abs=1e-12)


def test_unobservable_ordering(case39, model39, pmu39, cand39):
    obs = simulate_observation(case39, model39, "2-3", pmu39, noise=(np.radians(0.05), 9))
    rep = identify_outage(model39, pmu39, obs, cand39)
    norm_b = np.linalg.norm(obs.delta_theta_m)
    unobs = [c for c in rep.ranking if not c.observable]
    assert {case39.line_name(c.line) for c in unobs} == {"26-28", "26-29", "28-29"}
    for u in unobs:
        assert u.residual == pytest.approx(norm_b)
        for c in rep.ranking:
            if c.observable and c.residual < norm_b - 1e-12:
                assert rep.rank_of(c.line) < rep.rank_of(u.line)


def test_batch_matches_single(case39, model39, pmu39, cand39, backend):
    obs = [simulate_observation(case39, model39, k, pmu39, noise=(np.radians(0.05), n))
           for n, k in enumerate(cand39)]
    batch = identify_batch(model39, pmu39, np.column_stack([o.delta_theta_m for o in obs]), cand39)
    single = [identify_outage(model39, pmu39, o, cand39).identified for o in obs]
    assert list(batch) == single


def test_rank_residuals_ties():
    order = rank_residuals([5, 2, 9, 1], [1.0, 1.0 + 1e-12, 0.5, 2.0], scale=1.0)
    assert order == [2, 1, 0, 3]


def test_eq52_fixture_ranks_first(model39, pmu39, cand39, data_dir, case39):
    obs = read_observation(data_dir / "eq52_obs.txt", pmu39)
    rep = identify_outage(model39, pmu39, obs, cand39)
    top = case39.line_name(rep.identified)
    # 25-26 shares its signature with 2-25, 17-27 and 26-27; the lowest index of the group wins
    assert top == "2-25"
    group = {case39.line_name(c.line) for c in rep.ranking[:4]}
    assert group == {"2-25", "17-27", "25-26", "26-27"}


@pytest.mark.xfail(strict=True, reason="DC residual of the AC-derived vector is 0.083 deg, outside 0.0346 +- 30%")
def test_eq52_fixture_residual(model39, pmu39, data_dir, case39):
    obs = read_observation(data_dir / "eq52_obs.txt", pmu39)
    r = np.degrees(candidate_residual(model39, pmu39, obs, "25-26").residual)
    assert abs(r - 0.0346) <= 0.3 * 0.0346


def test_observation_text_round_trip(case39, model39, pmu39):
    obs = simulate_observation(case39, model39, "25-26", pmu39)
    back = parse_observation(format_observation(obs), pmu39)
    np.testing.assert_allclose(back.delta_theta_m, obs.delta_theta_m, rtol=1e-15)


def test_observation_parse_errors(pmu39):
    with pytest.raises(CaseParseError) as info:
        parse_observation("4 0\n13 x\n", pmu39)
    assert info.value.line == 2
    with pytest.raises(CaseParseError, match="do not match"):
        parse_observation("4 0\n13 0\n", pmu39)
    with pytest.raises(CaseParseError, match="twice"):
        parse_observation("4 0\n4 0\n", pmu39)
