"""One-dimensional stochastic model of the restrained controller.

A single scalar state x chases a target d using noisy measurements m of x,
applying per step either the plain proportional displacement k_ef (d - m) or
its restrained variant with a dead zone of half-width sigma_m |Phi^-1(ell)|
around the measured target. The module carries both the simulation side
(seeded ensembles, two mutually tracking agents, long single-agent runs) and
the closed-form side (steady-state variance with and without restraining,
stopping probability, effective gain near the target, expected coherence
time, histogram KL divergence from a fitted Gaussian).

All generators are seeded through numpy SeedSequence, so every trace is
reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .core import TAU, std_normal_cdf, std_normal_quantile

# Empirical variance-reduction exponent beta(k_ef), tabulated at five gains;
# linear interpolation in between, error outside the tabulated range.
BETA_NODES = ((0.1, 0.7251), (0.5, 0.8266), (1.0, 1.043),
              (1.5, 1.498), (1.9, 3.177))


@dataclass(frozen=True)
class OneDConfig:
    """Parameters of the scalar tracking process.

    k_ef is the dimensionless per-step gain (proportional gain over the
    measurement rate); ell the admissible overshoot probability; sigma_m the
    measurement noise; sigma_init the initial ensemble spread around d.
    """

    k_ef: float
    ell: float = 0.5
    sigma_m: float = 1.0
    f: float = 10.0
    d: float = 0.0
    sigma_init: float = 100.0
    n_agents: int = 10_000
    horizon: int = 2000
    seed: int = 0

    def __post_init__(self):
        # Gains at or beyond 2 are simulable (they diverge); the closed-form
        # predictions validate their own (0, 2) domain.
        if self.k_ef <= 0.0:
            raise ValueError("k_ef must be positive")
        if not 0.0 < self.ell <= 0.5:
            raise ValueError("ell must lie in (0, 0.5]")
        if self.sigma_m < 0.0:
            raise ValueError("sigma_m must be >= 0")

    @property
    def quantile(self) -> float:
        return std_normal_quantile(self.ell)


@dataclass
class EnsembleTrace:
    """Per-step ensemble summaries; entry k describes the state after k+1
    steps. mean_abs_dv[0] is zero (no previous velocity to compare)."""

    mean_abs_dd: np.ndarray
    sigma_a: np.ndarray
    mean_abs_dv: np.ndarray
    final_states: np.ndarray = field(repr=False, default=None)


def step_1d_proportional(x, m, cfg: OneDConfig):
    """One proportional step: x' = x + k_ef (d - m)."""
    return x + cfg.k_ef * (cfg.d - m)


def restrained_displacement(dm, sigma_m, cfg: OneDConfig):
    """Clamped restrained displacement given measured error dm = d - m.

    Moves toward the setpoint d + sign(dm) sigma Phi^-1(ell); zero whenever
    |dm| falls inside the dead zone sigma |Phi^-1(ell)|. Works elementwise
    on arrays.
    """
    q = cfg.quantile
    y = dm + np.sign(dm) * sigma_m * q
    return np.where(np.abs(dm) > -sigma_m * q, cfg.k_ef * y, 0.0)


def step_1d_restrained(x, m, sigma_m, cfg: OneDConfig):
    """One restrained step from state x and measurement m of x."""
    return x + restrained_displacement(cfg.d - m, sigma_m, cfg)


def continuous_state_1d(t: float, x0: float, cfg: OneDConfig) -> float:
    """Noiseless piecewise-linear state at continuous time t.

    Linear interpolation of the geometric progression between sampling
    instants; the agent moves at constant velocity between measurements.
    """
    k = math.floor(t * cfg.f)
    frac = t * cfg.f - k
    node = cfg.d + (x0 - cfg.d) * (1.0 - cfg.k_ef) ** k
    return cfg.k_ef * cfg.d * frac + node * (1.0 - cfg.k_ef * frac)


def exp_approx_1d(t: float, x0: float, cfg: OneDConfig) -> float:
    """Exponential descent through the sampling nodes."""
    return cfg.d + (x0 - cfg.d) * (1.0 - cfg.k_ef) ** (t * cfg.f)


def sigma_ss_proportional(cfg: OneDConfig) -> float:
    """Steady-state standard deviation under pure proportional control."""
    if not 0.0 < cfg.k_ef < 2.0:
        raise ValueError("steady state exists only for k_ef in (0, 2)")
    return cfg.sigma_m * math.sqrt(cfg.k_ef / (2.0 - cfg.k_ef))


def variance_closed_form(k: int, cfg: OneDConfig, var0: float) -> float:
    """Ensemble variance after k proportional steps from variance var0."""
    if not 0.0 < cfg.k_ef < 2.0:
        raise ValueError("closed form is valid only for k_ef in (0, 2)")
    decay = (1.0 - cfg.k_ef) ** (2 * k)
    return (cfg.sigma_m ** 2 * cfg.k_ef * (1.0 - decay) / (2.0 - cfg.k_ef)
            + decay * var0)


def beta_interp(k_ef: float) -> float:
    """Piecewise-linear beta(k_ef) between the tabulated nodes."""
    ks = [k for k, _ in BETA_NODES]
    if not ks[0] <= k_ef <= ks[-1]:
        raise ValueError(f"k_ef={k_ef} outside tabulated range "
                         f"[{ks[0]}, {ks[-1]}]")
    return float(np.interp(k_ef, ks, [b for _, b in BETA_NODES]))


def sigma_ss_restrained(cfg: OneDConfig) -> float:
    """Steady-state standard deviation with restraining.

    sigma^2 = sigma_ss^2 * exp(beta(k_ef) Phi^-1(ell)); valid for k_ef in
    [0.1, 1.9] and ell in [0.01, 0.5].
    """
    if not 0.01 <= cfg.ell <= 0.5:
        raise ValueError("ell must lie in [0.01, 0.5] for this approximation")
    factor = math.exp(beta_interp(cfg.k_ef) * cfg.quantile)
    return sigma_ss_proportional(cfg) * math.sqrt(factor)


def stopping_probability(delta: float, sigma_m: float, ell: float) -> float:
    """Probability that a step produces no motion, at true error delta.

    Phi(-delta/sigma - Phi^-1(ell)) - Phi(-delta/sigma + Phi^-1(ell)); at
    delta = 0 this equals 1 - 2 ell, so the minimum motion probability is
    2 ell at the target.
    """
    if sigma_m <= 0.0:
        raise ValueError("sigma_m must be positive")
    q = std_normal_quantile(ell)
    z = delta / sigma_m
    return std_normal_cdf(-z - q) - std_normal_cdf(-z + q)


def motion_probability(delta: float, sigma_m: float, ell: float) -> float:
    return 1.0 - stopping_probability(delta, sigma_m, ell)


def effective_gain(cfg: OneDConfig) -> float:
    """Linearized gain of the expected state near the target.

    First-order expansion of the expected restrained step around zero error:
    E[x' - d] = (1 - k_ef') E[x - d] with
    k_ef' = k_ef ((1 - 1/sigma) sqrt(2/pi) Phi^-1(ell)
            exp(-Phi^-1(ell)^2 / (2 sigma^2)) + 2 ell).
    Reduces to k_ef at ell = 0.5.
    """
    if cfg.sigma_m <= 0.0:
        raise ValueError("sigma_m must be positive")
    q = cfg.quantile
    s = cfg.sigma_m
    return cfg.k_ef * ((1.0 - 1.0 / s) * math.sqrt(2.0 / math.pi) * q
                       * math.exp(-q * q / (2.0 * s * s)) + 2.0 * cfg.ell)


def conditional_variance_at_target(cfg: OneDConfig) -> float:
    """Variance of the next error conditioned on zero current error.

    var = 2 k_ef^2 sigma^2 [ (1 + q^2) ell + q phi(q) ], q = Phi^-1(ell).
    Strictly increasing in ell on (0, 0.5]; equals k_ef^2 sigma^2 at
    ell = 0.5, the plain one-step noise injection.
    """
    q = cfg.quantile
    phi_q = math.exp(-0.5 * q * q) / math.sqrt(TAU)
    return (2.0 * cfg.k_ef ** 2 * cfg.sigma_m ** 2
            * ((1.0 + q * q) * cfg.ell + q * phi_q))


def expected_coherence_time(cfg: OneDConfig) -> float:
    """Expected number of steps between motion events in steady state.

    Integrates the reciprocal motion probability against a Gaussian
    steady-state density with the restrained sigma; adaptive quadrature on
    +-8 sigma, absolute tolerance 1e-6.
    """
    s_ss = sigma_ss_restrained(cfg)
    s_m = cfg.sigma_m
    ell = cfg.ell
    norm = 1.0 / (s_ss * math.sqrt(TAU))

    def integrand(z):
        density = norm * math.exp(-0.5 * (z / s_ss) ** 2)
        return density / motion_probability(z, s_m, ell)

    val, err = quad(integrand, -8.0 * s_ss, 8.0 * s_ss,
                    epsabs=1e-6, limit=200)
    if not math.isfinite(val) or err > 1e-4 * max(abs(val), 1.0):
        raise ArithmeticError("coherence-time integral did not converge")
    return val


def estimate_coherence_time(cfg: OneDConfig, steps: int = 1_000_000,
                            burn: int = 20_000) -> float:
    """Coherence time from one long single-agent run at steady state.

    Counts motion events after burn-in; the mean interval between motions
    estimates the expected coherence time (steps per motion).
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed,
                                                       spawn_key=(7,)))
    q = cfg.quantile
    s = cfg.sigma_m
    thr = -s * q
    k_ef = cfg.k_ef
    d = cfg.d
    x = d
    moves = 0
    total = steps + burn
    done = 0
    chunk = 1 << 20
    while done < total:
        n = min(chunk, total - done)
        noise = rng.standard_normal(n) * s
        for i in range(n):
            dm = d - (x + noise[i])
            if dm > thr:
                x += k_ef * (dm + s * q)
                if done + i >= burn:
                    moves += 1
            elif dm < -thr:
                x += k_ef * (dm - s * q)
                if done + i >= burn:
                    moves += 1
        done += n
    if moves == 0:
        raise ArithmeticError("no motion events observed")
    return steps / moves


def kl_divergence_gaussianity(samples, bins: int = 64,
                              span: float = 5.0) -> float:
    """KL divergence (nats) of a sample histogram from a fitted Gaussian.

    The Gaussian is zero-mean with the empirical standard deviation; the
    histogram uses ``bins`` equal bins on +-span sigma. Both distributions
    are renormalized on the window and empty bins are skipped.
    """
    z = np.asarray(samples, dtype=float).ravel()
    if z.size < 10_000:
        raise ValueError("need at least 1e4 samples for a stable estimate")
    sig = float(z.std())
    if sig == 0.0:
        raise ValueError("samples are degenerate (zero variance)")
    edges = np.linspace(-span * sig, span * sig, bins + 1)
    counts, _ = np.histogram(z, edges)
    inside = counts.sum()
    if inside == 0:
        raise ValueError("no samples inside the histogram window")
    p = counts / inside
    cdf_edges = np.array([std_normal_cdf(e / sig) for e in edges])
    gauss = np.diff(cdf_edges)
    gauss /= gauss.sum()
    mask = counts > 0
    return float(np.sum(p[mask] * np.log(p[mask] / gauss[mask])))


def run_1d_ensemble(cfg: OneDConfig, restrained: bool = True,
                    x0=None) -> EnsembleTrace:
    """Simulate the scalar ensemble for cfg.horizon steps.

    Agents start Gaussian around d with spread sigma_init (or at the given
    x0 array). sigma_a is the spread of the ensemble around its own mean at
    each step; mean_abs_dv averages the per-agent change of velocity between
    consecutive steps.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    n = cfg.n_agents
    if x0 is None:
        x = cfg.d + rng.standard_normal(n) * cfg.sigma_init
    else:
        x = np.asarray(x0, dtype=float).copy()
    mean_abs_dd = np.empty(cfg.horizon)
    sigma_a = np.empty(cfg.horizon)
    mean_abs_dv = np.empty(cfg.horizon)
    v_prev = None
    for k in range(cfg.horizon):
        m = x + rng.standard_normal(n) * cfg.sigma_m
        if restrained:
            disp = restrained_displacement(cfg.d - m, cfg.sigma_m, cfg)
        else:
            disp = cfg.k_ef * (cfg.d - m)
        x = x + disp
        v = disp * cfg.f
        mean_abs_dd[k] = np.abs(x - cfg.d).mean()
        sigma_a[k] = x.std()
        mean_abs_dv[k] = 0.0 if v_prev is None else np.abs(v - v_prev).mean()
        v_prev = v
    return EnsembleTrace(mean_abs_dd, sigma_a, mean_abs_dv, final_states=x)


@dataclass
class TwoAgentTrace:
    """Ensemble trace of the relative displacement of two active agents."""

    delta_mean: np.ndarray
    delta_abs_mean: np.ndarray
    clamp_rate: np.ndarray


def run_1d_two_agents(cfg: OneDConfig, delta0: float | None = None
                      ) -> TwoAgentTrace:
    """Two mutually tracking agents, both restrained, over an ensemble.

    Each pair starts at relative displacement delta0 (default sigma_init)
    from the desired one; both agents step on independent measurements of
    the same relative state. clamp_rate is the per-step fraction of agent
    inputs nullified by the dead zone.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed,
                                                       spawn_key=(2,)))
    n = cfg.n_agents
    d0 = cfg.sigma_init if delta0 is None else delta0
    p1 = np.zeros(n)
    p2 = np.full(n, cfg.d + d0)
    q = cfg.quantile
    s = cfg.sigma_m
    delta_mean = np.empty(cfg.horizon)
    delta_abs_mean = np.empty(cfg.horizon)
    clamp_rate = np.empty(cfg.horizon)
    for k in range(cfg.horizon):
        delta12 = p2 - p1 - cfg.d
        d12 = delta12 + rng.standard_normal(n) * s
        d21 = -delta12 + rng.standard_normal(n) * s
        move1 = np.abs(d12) > -s * q
        move2 = np.abs(d21) > -s * q
        y12 = d12 + np.sign(d12) * s * q
        y21 = d21 + np.sign(d21) * s * q
        p1 = p1 + np.where(move1, cfg.k_ef * y12, 0.0)
        p2 = p2 + np.where(move2, cfg.k_ef * y21, 0.0)
        delta12 = p2 - p1 - cfg.d
        delta_mean[k] = delta12.mean()
        delta_abs_mean[k] = np.abs(delta12).mean()
        clamp_rate[k] = 1.0 - 0.5 * (move1.mean() + move2.mean())
    return TwoAgentTrace(delta_mean, delta_abs_mean, clamp_rate)


# --- convergence metrics ------------------------------------------------------


def _suffix_moments(dev: np.ndarray):
    """Reverse-cumulative first and second moments of a deviation series."""
    rev2 = np.cumsum(dev[::-1] ** 2)[::-1]
    rev1 = np.cumsum(dev[::-1])[::-1]
    count = np.arange(dev.size, 0, -1, dtype=float)
    mean = rev1 / count
    rms = np.sqrt(rev2 / count)
    var = np.maximum(rev2 / count - mean ** 2, 0.0)
    return rms, np.sqrt(var)


def convergence_metrics_1d(history, d: float, f: float, debug: bool = False):
    """(t_c, sigma_t, mean_dv) of one recorded state history.

    Convergence index k_c is the first step whose deviation from the target
    enters the band of three suffix RMS values (RMS taken about the target,
    so the band is well defined for norm-valued series too). sigma_t is the
    stable-state spread about the mean, estimated on the suffix from
    max(k_c, M/2) so the post-entry transient ramp cannot inflate it.
    mean_dv averages |v[k] - v[k-1]| over consecutive velocity segments.

    A history that never enters the band gets k_c equal to the last index
    and converged=False in the debug payload.
    """
    x = np.asarray(history, dtype=float).ravel()
    if x.size < 10:
        raise ValueError("need a history of at least 10 samples")
    dev = x - d
    rms, std_mean = _suffix_moments(dev)
    inside = np.abs(dev) <= 3.0 * rms
    converged = bool(inside.any())
    k_c = int(np.argmax(inside)) if converged else x.size - 1
    tail_start = max(k_c, x.size // 2)
    sigma_t = float(np.std(dev[tail_start:]))
    v = np.diff(x) * f
    mean_dv = float(np.abs(np.diff(v)).mean()) if v.size >= 2 else 0.0
    t_c = k_c / f
    if not debug:
        return t_c, sigma_t, mean_dv
    # Literal band-exit reading of the convergence index, for comparison.
    exits = np.nonzero(np.abs(dev[:-1]) > 3.0 * rms[1:])[0]
    k_literal = int(exits[0] + 1) if exits.size else 0
    return {
        "t_c": t_c, "sigma_t": sigma_t, "mean_dv": mean_dv,
        "k_c": k_c, "converged": converged,
        "k_c_literal": k_literal,
        "sigma_fin_rms_at_kc": float(rms[k_c]),
        "sigma_fin_std_at_kc": float(std_mean[k_c]),
    }


# --- trade-off sweep ----------------------------------------------------------


def tradeoff_sweep(k_grid, ells, n_runs: int = 500, horizon: int = 2000,
                   sigma_m: float = 1.0, f: float = 10.0,
                   sigma_init: float = 100.0, seed: int = 0):
    """(t_c, sigma_t, mean_dv) averaged over runs, per (k_ef, ell) cell.

    Every cell shares nothing but the base seed; runs inside a cell are the
    columns of one vectorized ensemble. Returns {(k_ef, ell): (t_c, sigma_t,
    mean_dv)}.
    """
    out = {}
    for ell in ells:
        for k_ef in k_grid:
            cfg = OneDConfig(k_ef=k_ef, ell=ell, sigma_m=sigma_m, f=f,
                             sigma_init=sigma_init, n_agents=n_runs,
                             horizon=horizon, seed=seed)
            rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(3, int(k_ef * 1e6),
                                                        int(ell * 1e6))))
            x = rng.standard_normal(n_runs) * sigma_init
            states = np.empty((horizon + 1, n_runs))
            states[0] = x
            for k in range(horizon):
                m = x + rng.standard_normal(n_runs) * sigma_m
                x = x + restrained_displacement(cfg.d - m, sigma_m, cfg)
                states[k + 1] = x
            dev = states
            rev2 = np.cumsum(dev[::-1] ** 2, axis=0)[::-1]
            count = np.arange(horizon + 1, 0, -1, dtype=float)[:, None]
            rms = np.sqrt(rev2 / count)
            inside = np.abs(dev) <= 3.0 * rms
            k_c = inside.argmax(axis=0)
            tail = np.maximum(k_c, (horizon + 1) // 2)
            sig_t = np.array([dev[tail[i]:, i].std()
                              for i in range(n_runs)])
            v = np.diff(states, axis=0) * f
            dv = np.abs(np.diff(v, axis=0)).mean(axis=0)
            out[(k_ef, ell)] = (float(k_c.mean() / f), float(sig_t.mean()),
                                float(dv.mean()))
    return out


def dominance_check(sweep, k_grid, ells, base_ell: float = 0.5,
                    band: float = 0.05):
    """Check restrained trade-off points sit on or below the base curve.

    The base curve is (t_c, sigma_t) over k_grid at base_ell; every other
    point must satisfy sigma_t <= interp(curve at its t_c) * (1 + band),
    clamping to the curve's end values outside its t_c range. Returns
    (all_ok, violations).
    """
    base = sorted((sweep[(k, base_ell)][0], sweep[(k, base_ell)][1])
                  for k in k_grid)
    bt = np.array([p[0] for p in base])
    bs = np.array([p[1] for p in base])
    violations = []
    for ell in ells:
        if ell == base_ell:
            continue
        for k in k_grid:
            t_c, sigma_t, _ = sweep[(k, ell)]
            limit = float(np.interp(t_c, bt, bs)) * (1.0 + band)
            if sigma_t > limit:
                violations.append((k, ell, sigma_t, limit))
    return not violations, violations
