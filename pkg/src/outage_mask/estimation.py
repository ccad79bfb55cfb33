"""DC least-squares state estimation and the bad-data residual test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dc import Jacobian
from .errors import RankDeficientError


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Measurements ordered (injections, +flows, -flows), per-unit."""

    z: np.ndarray
    weights: np.ndarray | None = None
    threshold: float | None = None

    def __post_init__(self):
        if self.weights is not None and len(self.weights) != len(self.z):
            raise ValueError("weights and measurements differ in length")


def _check(H: Jacobian, z):
    z = np.asarray(z.z if isinstance(z, MeasurementSet) else z, dtype=float)
    if z.shape != (H.H.shape[0],):
        raise ValueError(f"expected {H.H.shape[0]} measurements, got {z.shape}")
    return z


def estimate(H: Jacobian, z) -> np.ndarray:
    """Least-squares angles with the slack angle pinned to zero."""
    weights = z.weights if isinstance(z, MeasurementSet) else None
    zv = _check(H, z)
    A = np.delete(H.H, H.slack, axis=1)
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=float))
        A, zv = A * w[:, None], zv * w
    sol, _, rank, _ = np.linalg.lstsq(A, zv, rcond=None)
    if rank < A.shape[1]:
        raise RankDeficientError(f"measurement matrix has rank {rank} < {A.shape[1]} unknowns")
    theta = np.zeros(H.n_bus)
    theta[np.arange(H.n_bus) != H.slack] = sol
    return theta


def residual(H: Jacobian, z, theta_hat=None) -> float:
    """``||z - H theta_hat||_2`` (weighted when the set carries weights)."""
    zv = _check(H, z)
    if theta_hat is None:
        theta_hat = estimate(H, z)
    e = zv - H.H @ theta_hat
    if isinstance(z, MeasurementSet) and z.weights is not None:
        e = e * np.sqrt(z.weights)
    return float(np.linalg.norm(e))


def bad_data_test(r: float, threshold: float) -> bool:
    """True when the residual passes (closed boundary)."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return r <= threshold


def noise_sigmas(z_true, fraction=0.01) -> np.ndarray:
    return fraction * np.abs(np.asarray(z_true, dtype=float))


def expected_noise_norm(sigmas) -> float:
    return float(np.sqrt(np.sum(np.square(sigmas))))


def default_threshold(sigmas) -> float:
    return 3.0 * expected_noise_norm(sigmas)


def noisy_measurements(H: Jacobian, theta, fraction=0.01, rng=None) -> MeasurementSet:
    """``H theta`` plus Gaussian noise with sigma = ``fraction`` * |true value|."""
    rng = np.random.default_rng(rng)
    z_true = H.H @ np.asarray(theta, dtype=float)
    sig = noise_sigmas(z_true, fraction)
    z = z_true + rng.normal(0.0, 1.0, size=z_true.shape) * sig
    return MeasurementSet(z, None, default_threshold(sig))
