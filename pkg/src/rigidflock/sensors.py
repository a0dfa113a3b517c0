"""Synthetic relative-pose measurement noise.

Models a vision-style relative localization sensor: range noise proportional
to distance, fixed angular noise on the bearing, fixed heading noise. The
position covariance is built with one radial eigenvalue (range) and two
equal tangential eigenvalues (bearing), so the ellipsoid elongates along the
line of sight. The controller receives exactly the covariance used to draw
the sample; no estimation error is modeled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import DELTA, NoisyRelativePose
from .core import RelativePose, wrap_angle


@dataclass(frozen=True)
class SensorSpec:
    """Noise magnitudes and measurement rate.

    dist_frac_sigma: range noise as a fraction of the true distance.
    bearing_sigma:   angular noise of the direction (radians).
    heading_sigma:   relative heading noise (radians).
    rate_hz:         measurements per second.
    """

    dist_frac_sigma: float = 0.10
    bearing_sigma: float = 0.03
    heading_sigma: float = 0.26
    rate_hz: float = 10.0

    def __post_init__(self):
        if min(self.dist_frac_sigma, self.bearing_sigma,
               self.heading_sigma) < 0.0:
            raise ValueError("noise magnitudes must be >= 0")
        if self.rate_hz <= 0.0:
            raise ValueError("rate_hz must be positive")


def covariance_sigmas(distance: float, spec: SensorSpec):
    """(radial, tangential) standard deviations at a given range, floored."""
    return (max(spec.dist_frac_sigma * distance, DELTA),
            max(spec.bearing_sigma * distance, DELTA))


def covariance_for(p_true, spec: SensorSpec) -> np.ndarray:
    """Position covariance at the true relative position.

    C = sigma_t^2 (I - rr^T) + sigma_r^2 rr^T with r the radial unit vector,
    sigma_r = dist_frac_sigma * d and sigma_t = bearing_sigma * d. Both
    eigenvalues are floored at DELTA^2 so C stays positive definite for
    zero-noise configurations.
    """
    p = np.asarray(p_true, dtype=float).reshape(3)
    d = float(np.linalg.norm(p))
    if d == 0.0:
        raise ValueError("relative distance must be positive")
    r_hat = p / d
    s_r, s_t = covariance_sigmas(d, spec)
    return s_t ** 2 * np.eye(3) + (s_r ** 2 - s_t ** 2) * np.outer(r_hat, r_hat)


def sample_measurement(rng: np.random.Generator, true_rel: RelativePose,
                       spec: SensorSpec) -> NoisyRelativePose:
    """Draw one noisy measurement of a true relative pose.

    The position perturbation is A z with z a standard normal 3-vector and
    A the symmetric square root of the covariance (same radial/tangential
    frame). The attached statistics are exactly the generating ones.
    """
    p = true_rel.p_rel
    d = float(np.linalg.norm(p))
    if d == 0.0:
        raise ValueError("relative distance must be positive")
    r_hat = p / d
    # Draw with the raw magnitudes (zero noise stays exact); the floor only
    # protects the attached covariance from degeneracy.
    s_r_raw = spec.dist_frac_sigma * d
    s_t_raw = spec.bearing_sigma * d
    z = rng.standard_normal(3)
    p_m = p + s_t_raw * z + (s_r_raw - s_t_raw) * float(z @ r_hat) * r_hat
    psi_m = wrap_angle(true_rel.psi_rel + spec.heading_sigma
                       * rng.standard_normal())
    s_r, s_t = covariance_sigmas(d, spec)
    cov = s_t ** 2 * np.eye(3) + (s_r ** 2 - s_t ** 2) * np.outer(r_hat, r_hat)
    return NoisyRelativePose(p_m, psi_m, cov, spec.heading_sigma ** 2)


def measurement_stream(master_seed: int, agent_id: int,
                       run_id: int = 0) -> np.random.Generator:
    """Independent, reproducible noise stream for one agent in one run.

    Streams are keyed on (master_seed, agent_id, run_id) only, so two runs
    that share a seed see identical noise regardless of controller settings;
    parameter sweeps then compare controllers on the same realizations.
    """
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed,
                               spawn_key=(1, agent_id, run_id)))


def init_stream(master_seed: int) -> np.random.Generator:
    """Stream for initial conditions, shared by all controller settings."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(0,)))
