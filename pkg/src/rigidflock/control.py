"""Per-agent formation control laws.

Two controllers over the same measurement interface:

* ``proportional_command``: plain gradient-descent action on the formation
  error, summing four terms per observed neighbor (two positional, one
  bearing-coupled heading term, one heading-consensus term).
* ``restrained_command``: the noise-aware variant. Every term is replaced by
  a setpoint pulled back toward the measurement by the noise quantile
  sigma * Phi^-1(ell) along a 1D reduction of that term, then passed through
  a dead-zone clamp. ell in (0, 0.5] is the admissible overshoot
  probability; ell = 0.5 reproduces the proportional controller exactly.

Commands are velocities in the agent body frame, held constant for one
control period. The summed heading rate is saturated so one period never
rotates the agent by more than ``omega_cap`` radians; the bearing-coupled
term grows with the squared neighbor distance, so an uncapped command can
spin the agent arbitrarily fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (ensure_covariance3, rotz, std_normal_quantile,
                   wrap_angle)

# Floor used wherever a covariance eigenvalue must stay positive (m^2 scale
# 1e-8), far below any realistic sensor noise and far above double rounding.
DELTA = 1e-4


@dataclass(frozen=True)
class NoisyRelativePose:
    """Measured relative pose with the noise statistics attached to it."""

    p_m: np.ndarray
    psi_m: float
    cov_p: np.ndarray
    var_psi: float

    def __post_init__(self):
        object.__setattr__(self, "p_m",
                           np.asarray(self.p_m, dtype=float).reshape(3))
        object.__setattr__(self, "psi_m", wrap_angle(self.psi_m))
        object.__setattr__(self, "cov_p", ensure_covariance3(self.cov_p))
        if self.var_psi < 0.0:
            raise ValueError("heading variance must be >= 0")


@dataclass(frozen=True)
class DesiredRelativePose:
    p_d: np.ndarray
    psi_d: float

    def __post_init__(self):
        object.__setattr__(self, "p_d",
                           np.asarray(self.p_d, dtype=float).reshape(3))
        object.__setattr__(self, "psi_d", wrap_angle(self.psi_d))


@dataclass(frozen=True)
class ControlCommand:
    """Body-frame velocity u (m/s) and heading rate omega (rad/s)."""

    u: np.ndarray
    omega: float


@dataclass(frozen=True)
class ControllerConfig:
    """Gains and restraining parameters shared by all agents.

    omega_cap bounds the heading change per control period (radians).
    """

    k_e: float = 0.5
    ell: float = 0.5
    restraining: bool = True
    omega_cap: float = math.pi

    def __post_init__(self):
        if self.k_e <= 0.0:
            raise ValueError("k_e must be positive")
        if not 0.0 < self.ell <= 0.5:
            raise ValueError("ell must lie in (0, 0.5]")
        if self.omega_cap <= 0.0:
            raise ValueError("omega_cap must be positive")

    @property
    def quantile(self) -> float:
        """Phi^-1(ell); exactly 0.0 at ell = 0.5."""
        return std_normal_quantile(self.ell)


def clamp_dz(y, a):
    """Dead-zone clamp: y if <y, a> in (0, ||a||^2], else zero.

    Scalars and same-shape vectors are both accepted. The half-open lower
    bound nullifies opposing or orthogonal actions, the closed upper bound
    passes y = a unchanged.
    """
    if np.isscalar(y) or isinstance(y, (float, int)):
        prod = float(y) * float(a)
        return float(y) if 0.0 < prod <= float(a) * float(a) else 0.0
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    prod = float(np.dot(y, a))
    if 0.0 < prod <= float(np.dot(a, a)):
        return y.copy()
    return np.zeros_like(y)


def _sign(x: float) -> float:
    # sign(0) := 0 so dead-center inputs produce a zero offset.
    return math.copysign(1.0, x) if x != 0.0 else 0.0


def _tau_psi1(p_d: np.ndarray, p_m: np.ndarray) -> float:
    """Bearing-coupled heading term p_d^T S^T p_m (z cross product)."""
    return p_d[0] * p_m[1] - p_d[1] * p_m[0]


def proportional_command(measurements, cfg: ControllerConfig,
                         dt: float = 1.0) -> ControlCommand:
    """Gradient-descent command from (measured, desired) relative pose pairs.

    u sums the direct position error and the rotation-compensated position
    error; omega sums the bearing cross term and twice the wrapped heading
    error. ``dt`` is the control period used by the heading-rate cap.
    """
    if not measurements:
        raise ValueError("at least one observation is required")
    u = np.zeros(3)
    omega = 0.0
    for meas, des in measurements:
        dpsi = wrap_angle(meas.psi_m - des.psi_d)
        p_d_rot = rotz(dpsi) @ des.p_d
        u += (meas.p_m - des.p_d) + (meas.p_m - p_d_rot)
        omega += _tau_psi1(des.p_d, meas.p_m) + 2.0 * dpsi
    u *= cfg.k_e
    omega *= cfg.k_e
    return ControlCommand(u, _cap_omega(omega, cfg, dt))


def _cap_omega(omega: float, cfg: ControllerConfig, dt: float) -> float:
    cap = cfg.omega_cap / dt
    return min(max(omega, -cap), cap)


def setpoint_p1(meas: NoisyRelativePose, des: DesiredRelativePose,
                ell: float) -> np.ndarray:
    """Restrained target for the direct position term.

    The position error is reduced to a 1D Gaussian along the line from the
    desired to the measured relative position (Mahalanobis reduction), and
    the setpoint backs off from the measurement mean by sigma * Phi^-1(ell)
    along that line. Coincident measured and desired positions return the
    measurement itself.
    """
    diff = meas.p_m - des.p_d
    if not np.any(diff):
        return meas.p_m.copy()
    m2 = float(diff @ np.linalg.solve(meas.cov_p, diff))
    return meas.p_m + diff / math.sqrt(m2) * std_normal_quantile(ell)


def approx_rotated_desired(meas: NoisyRelativePose, des: DesiredRelativePose):
    """Gaussian surrogate for the heading-rotated desired position.

    Rotating the desired relative position by a noisy heading difference
    yields a banana-shaped distribution on a horizontal circle. It is
    replaced by a Gaussian whose mean pulls the horizontal part inward by
    cos(sigma_psi) and whose covariance has radial, tangential and vertical
    eigenvalues r^2 * [(1 - cos s)^2, sin^2 s, DELTA^2], with s clipped to
    pi/2. Returns (mean, covariance). A desired position on the vertical
    axis has no tangent direction; the covariance falls back to DELTA^2 * I.
    """
    dpsi = wrap_angle(meas.psi_m - des.psi_d)
    p_dr = rotz(dpsi) @ des.p_d
    sigma_psi = math.sqrt(meas.var_psi)
    p_hat = p_dr.copy()
    p_hat[:2] *= math.cos(sigma_psi)

    r = math.hypot(p_dr[0], p_dr[1])
    if r == 0.0:
        return p_hat, DELTA ** 2 * np.eye(3)
    s_c = min(sigma_psi, 0.5 * math.pi)
    radial = np.array([p_dr[0] / r, p_dr[1] / r, 0.0])
    tangent = np.array([-radial[1], radial[0], 0.0])
    vertical = np.array([0.0, 0.0, 1.0])
    lam = r * r * np.array([(1.0 - math.cos(s_c)) ** 2,
                            math.sin(s_c) ** 2,
                            DELTA ** 2])
    cov_t = (lam[0] * np.outer(radial, radial)
             + lam[1] * np.outer(tangent, tangent)
             + lam[2] * np.outer(vertical, vertical))
    return p_hat, cov_t


def setpoint_p2(meas: NoisyRelativePose, des: DesiredRelativePose,
                ell: float) -> np.ndarray:
    """Restrained target for the rotation-compensated position term.

    Same construction as ``setpoint_p1`` but measured against the Gaussian
    surrogate of the rotated desired position, under the combined covariance
    of measurement and surrogate.
    """
    p_hat, cov_t = approx_rotated_desired(meas, des)
    diff = meas.p_m - p_hat
    if not np.any(diff):
        return meas.p_m.copy()
    cov_c = meas.cov_p + cov_t
    m2 = float(diff @ np.linalg.solve(cov_c, diff))
    return meas.p_m + diff / math.sqrt(m2) * std_normal_quantile(ell)


def bearing_sigma(meas: NoisyRelativePose) -> float:
    """Approximate bearing standard deviation of a position measurement.

    The position covariance is rotated so the bearing axis aligns with x;
    the (2,2) element then holds the horizontal-tangential variance, and its
    square root over the measurement range approximates the angular spread.
    Valid when the range is large against the covariance axes.
    """
    norm = float(np.linalg.norm(meas.p_m))
    if norm == 0.0:
        raise ValueError("bearing of a zero-length measurement is undefined")
    beta = math.atan2(meas.p_m[1], meas.p_m[0])
    rot = rotz(-beta)
    c_r = rot @ meas.cov_p @ rot.T
    return math.sqrt(max(c_r[1, 1], 0.0)) / norm


def restrained_bearing_term(meas: NoisyRelativePose, des: DesiredRelativePose,
                            ell: float) -> float:
    """Pre-clamp replacement of the bearing-coupled heading term.

    The measured position is rotated horizontally toward the desired bearing
    by sigma_beta * |Phi^-1(ell)| (never past it; if the rotation overshoots,
    the sign flip makes the clamp in ``restrained_command`` zero the term).
    Degenerate horizontal projections contribute zero.
    """
    r_d = math.hypot(des.p_d[0], des.p_d[1])
    r_m = math.hypot(meas.p_m[0], meas.p_m[1])
    if r_d == 0.0 or r_m == 0.0:
        return 0.0
    zeta_d = math.atan2(des.p_d[1], des.p_d[0])
    zeta_m = math.atan2(meas.p_m[1], meas.p_m[0])
    sign = _sign(wrap_angle(zeta_d - zeta_m))
    theta = sign * bearing_sigma(meas) * (-std_normal_quantile(ell))
    return _tau_psi1(des.p_d, rotz(theta) @ meas.p_m)


def setpoint_psi2(meas: NoisyRelativePose, des: DesiredRelativePose,
                  ell: float) -> float:
    """Restrained target heading for the heading-consensus term."""
    err = wrap_angle(meas.psi_m - des.psi_d)
    offset = math.sqrt(meas.var_psi) * _sign(err) * std_normal_quantile(ell)
    return wrap_angle(meas.psi_m + offset)


def restrained_command(measurements, cfg: ControllerConfig,
                       dt: float = 1.0) -> ControlCommand:
    """Noise-restrained command; equals the proportional one at ell = 0.5.

    Each term is clamped against its raw proportional counterpart, so any
    term whose measured error falls inside its dead zone contributes zero.
    At ell = 0.5 the quantile vanishes: the positional setpoints collapse
    onto the measurement, the rotated-desired term keeps its raw anchor, and
    every clamp passes its argument through unchanged.
    """
    if not measurements:
        raise ValueError("at least one observation is required")
    if not cfg.restraining:
        raise ValueError("restraining is disabled in this configuration")
    q = cfg.quantile
    u = np.zeros(3)
    omega = 0.0
    # Per-edge terms are grouped exactly as in proportional_command so the
    # ell = 0.5 collapse is equal bit for bit, not merely close.
    for meas, des in measurements:
        a1 = meas.p_m - des.p_d
        term1 = clamp_dz(setpoint_p1(meas, des, cfg.ell) - des.p_d, a1)

        if q == 0.0:
            # Quantile zero disables the Gaussian surrogate; the term
            # reduces to its raw proportional form.
            dpsi = wrap_angle(meas.psi_m - des.psi_d)
            term2 = meas.p_m - rotz(dpsi) @ des.p_d
        else:
            p_hat, _ = approx_rotated_desired(meas, des)
            a2 = meas.p_m - p_hat
            term2 = clamp_dz(setpoint_p2(meas, des, cfg.ell) - p_hat, a2)
        u += term1 + term2

        raw = _tau_psi1(des.p_d, meas.p_m)
        term3 = clamp_dz(restrained_bearing_term(meas, des, cfg.ell), raw)

        a4 = wrap_angle(meas.psi_m - des.psi_d)
        y4 = wrap_angle(setpoint_psi2(meas, des, cfg.ell) - des.psi_d)
        omega += term3 + 2.0 * clamp_dz(y4, a4)

    u *= cfg.k_e
    omega *= cfg.k_e
    return ControlCommand(u, _cap_omega(omega, cfg, dt))


def command(measurements, cfg: ControllerConfig, dt: float = 1.0
            ) -> ControlCommand:
    """Dispatch on cfg.restraining."""
    if cfg.restraining:
        return restrained_command(measurements, cfg, dt)
    return proportional_command(measurements, cfg, dt)
