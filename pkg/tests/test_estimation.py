import numpy as np
import pytest

from outage_mask.case import parse_case
from outage_mask.dc import build_dc_model, build_jacobian, solve_angles
from outage_mask.errors import RankDeficientError
from outage_mask.estimation import (
    MeasurementSet, bad_data_test, default_threshold, estimate, expected_noise_norm,
    noise_sigmas, noisy_measurements, residual,
)
from outage_mask.serialize import measurements_from_json, measurements_to_json


def _theta(rng, n, slack):
    th = rng.normal(size=n)
    th[slack] = 0.0
    return th


def test_consistent_system(H39, rng):
    for _ in range(5):
        th = _theta(rng, 39, H39.slack)
        np.testing.assert_allclose(estimate(H39, H39.H @ th), th, atol=1e-10)
        assert residual(H39, H39.H @ th) < 1e-10


def test_zero_measurements(H39):
    np.testing.assert_array_equal(estimate(H39, np.zeros(131)), 0.0)


def test_normal_equations(H39, rng):
    z = rng.normal(size=131)
    th = estimate(H39, z)
    assert th[H39.slack] == 0.0
    g = H39.H.T @ (z - H39.H @ th)
    assert np.max(np.abs(np.delete(g, H39.slack))) < 1e-9


def test_idempotent(H39, rng):
    z = rng.normal(size=131)
    np.testing.assert_array_equal(estimate(H39, z), estimate(H39, z))


def test_length_checked(H39):
    with pytest.raises(ValueError):
        estimate(H39, np.zeros(5))


def test_rank_deficiency():
    m = build_dc_model(parse_case("[bus]\n1 slack\n2 load\n[line]\n1 2 0.1\n[load]\n2 1\n"))
    H = build_jacobian(m)
    H.H[:] = 0.0
    with pytest.raises(RankDeficientError):
        estimate(H, np.zeros(4))


def test_corrupted_entry_orthogonal_growth(H39, rng):
    th = _theta(rng, 39, H39.slack)
    z = H39.H @ th
    A = np.delete(H39.H, H39.slack, axis=1)
    Qm, _ = np.linalg.qr(A)
    for idx in (3, 60, 120):
        e = np.zeros(131)
        e[idx] = 10 * 0.01 * max(abs(z[idx]), 1.0)
        # oracle: the part of the corruption outside the column space
        expect = np.linalg.norm(e - Qm @ (Qm.T @ e))
        assert residual(H39, z + e) == pytest.approx(expect, rel=1e-8)


def test_stealth_theorem(H39, rng):
    for _ in range(20):
        z = rng.normal(size=131)
        dth = rng.normal(size=39)
        assert abs(residual(H39, z + H39.H @ dth) - residual(H39, z)) < 1e-8


def test_bad_data_boundaries():
    assert bad_data_test(0.0, 1.0)
    assert bad_data_test(1.0, 1.0)
    assert not bad_data_test(1.0 + 1e-12, 1.0)
    with pytest.raises(ValueError):
        bad_data_test(0.5, 0.0)


def test_noise_calibration(case39, model39, H39):
    theta = solve_angles(model39, case39.injections_pu())
    rng = np.random.default_rng(2024)
    passes = 0
    for _ in range(1000):
        ms = noisy_measurements(H39, theta, 0.01, rng)
        passes += bad_data_test(residual(H39, ms), ms.threshold)
    assert passes >= 990


def test_threshold_helpers():
    s = noise_sigmas([3.0, -4.0], 0.1)
    np.testing.assert_allclose(s, [0.3, 0.4])
    assert expected_noise_norm(s) == pytest.approx(0.5)
    assert default_threshold(s) == pytest.approx(1.5)


def test_weighted_residual(H39, rng):
    z = rng.normal(size=131)
    w = np.ones(131)
    assert residual(H39, MeasurementSet(z, w)) == pytest.approx(residual(H39, z))


def test_measurement_json_round_trip(H39, rng):
    ms = MeasurementSet(rng.normal(size=131), rng.uniform(1, 2, size=131), 0.25)
    back = measurements_from_json(measurements_to_json(ms))
    np.testing.assert_array_equal(back.z, ms.z)
    np.testing.assert_array_equal(back.weights, ms.weights)
    assert back.threshold == ms.threshold
    with pytest.raises(ValueError):
        measurements_from_json('{"kind": "attack_vector", "schema_version": 1}')
