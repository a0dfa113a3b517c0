"""Discrete-time formation simulation in R^3 x S^1.

All agents sample their neighbors synchronously at the sensor rate, compute
a command from the latest measurements, then fly straight and rotate at a
constant rate until the next sample. Ground truth is kept by the simulator
and used only for error metrics, never by the controllers.

The per-step command math is vectorized over all edges; it reproduces the
scalar functions in ``control`` to floating-point accuracy (asserted by the
test suite), and one (scenario, seed) pair always reproduces the same run
bit for bit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .control import DELTA, ControllerConfig
from .core import AgentPose, relative_pose, wrap_angle
from .graphs import ObservationGraph, count_passive_sinks, fiedler_value, \
    is_connected, remove_random_edges_keep_connected
from .oned import convergence_metrics_1d
from .sensors import SensorSpec, init_stream, measurement_stream


class ScenarioError(ValueError):
    """Raised when a scenario violates a structural invariant."""


@dataclass(frozen=True)
class Scenario:
    """Desired formation, observation topology and all run parameters.

    The desired formation is a list of template world poses; the desired
    relative pose of every edge is derived from them, which keeps the target
    consistent across agents by construction.
    """

    desired: tuple
    graph: ObservationGraph
    controller: ControllerConfig = ControllerConfig()
    sensor: SensorSpec = SensorSpec()
    init_radius: float = 20.0
    horizon_steps: int = 2000
    seed: int = 0
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "desired", tuple(self.desired))
        self.validate()

    def validate(self):
        problems = []
        if len(self.desired) != self.graph.n:
            problems.append(
                f"desired pose count {len(self.desired)} does not match "
                f"agent count {self.graph.n}")
        if not is_connected(self.graph):
            problems.append("observation graph is not connected")
        sinks = count_passive_sinks(self.graph)
        if sinks > 1:
            problems.append(f"graph has {sinks} passive sinks, at most one "
                            "observed-but-not-observing agent is allowed")
        if self.init_radius < 0:
            problems.append("init_radius must be >= 0")
        if self.horizon_steps < 0:
            problems.append("horizon_steps must be >= 0")
        if problems:
            raise ScenarioError("; ".join(problems))

    def min_desired_distance(self) -> float:
        d = [float(np.linalg.norm(a.p - b.p))
             for k, a in enumerate(self.desired)
             for b in self.desired[k + 1:]]
        return min(d) if d else 0.0


@dataclass
class RunRecord:
    """Ground-truth states, commands and error series of one run.

    positions[k], headings[k] describe the state after k steps (index 0 is
    the initial condition); u[k], omega[k] are the commands applied during
    step k. The summary dict carries the convergence metrics.
    """

    positions: np.ndarray
    headings: np.ndarray
    u: np.ndarray
    omega: np.ndarray
    e_f: np.ndarray
    e_p: np.ndarray
    e_psi: np.ndarray
    fiedler: np.ndarray
    summary: dict = field(default_factory=dict)


def formation_error(poses, desired, graph: ObservationGraph):
    """(e_F, e_p, e_psi) of a set of world poses against the template.

    e_F is the Euclidean norm of the stacked per-edge residuals (positions
    and wrapped headings); e_p and e_psi average each agent's mean edge
    residual norm over the agents that observe anybody.
    """
    if not graph.edges:
        raise ValueError("graph has no edges")
    per_agent_p = {}
    per_agent_psi = {}
    sq_sum = 0.0
    for i, j in graph.sorted_edges():
        rel = relative_pose(poses[i], poses[j])
        rel_d = relative_pose(desired[i], desired[j])
        dp = float(np.linalg.norm(rel_d.p_rel - rel.p_rel))
        dpsi = abs(wrap_angle(rel_d.psi_rel - rel.psi_rel))
        sq_sum += dp * dp + dpsi * dpsi
        per_agent_p.setdefault(i, []).append(dp)
        per_agent_psi.setdefault(i, []).append(dpsi)
    e_p = float(np.mean([np.mean(v) for v in per_agent_p.values()]))
    e_psi = float(np.mean([np.mean(v) for v in per_agent_psi.values()]))
    return math.sqrt(sq_sum), e_p, e_psi


@dataclass
class SimState:
    """Mutable simulation state; owns the per-agent noise streams."""

    positions: np.ndarray
    headings: np.ndarray
    step_index: int
    rngs: tuple


def init_state(scenario: Scenario, run_id: int = 0) -> SimState:
    """Initial poses in a ball of init_radius with uniform headings.

    The draw depends only on the scenario seed, so runs that differ in
    controller settings start identically.
    """
    n = scenario.graph.n
    rng = init_stream(scenario.seed)
    direction = rng.standard_normal((n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = scenario.init_radius * rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0)
    positions = direction * radius[:, None]
    headings = wrap_angle(rng.uniform(-math.pi, math.pi, n))
    rngs = tuple(measurement_stream(scenario.seed, a, run_id)
                 for a in range(n))
    return SimState(positions, headings, 0, rngs)


class _EdgeCache:
    """Precomputed static edge arrays of a scenario."""

    def __init__(self, scenario: Scenario):
        edges = scenario.graph.sorted_edges()
        self.obs_i = np.array([i for i, _ in edges], dtype=int)
        self.obs_j = np.array([j for _, j in edges], dtype=int)
        self.n_edges = len(edges)
        des = scenario.desired
        p_d = np.empty((self.n_edges, 3))
        psi_d = np.empty(self.n_edges)
        for e, (i, j) in enumerate(edges):
            rel = relative_pose(des[i], des[j])
            p_d[e] = rel.p_rel
            psi_d[e] = rel.psi_rel
        self.p_d = p_d
        self.psi_d = psi_d
        # Draw counts per agent, ascending agent order (matches sorted edges).
        self.deg = np.bincount(self.obs_i, minlength=scenario.graph.n)


def _true_relative(positions, headings, cache: _EdgeCache):
    ci = np.cos(headings[cache.obs_i])
    si = np.sin(headings[cache.obs_i])
    d = positions[cache.obs_j] - positions[cache.obs_i]
    p_rel = np.stack([ci * d[:, 0] + si * d[:, 1],
                      -si * d[:, 0] + ci * d[:, 1],
                      d[:, 2]], axis=1)
    psi_rel = wrap_angle(headings[cache.obs_j] - headings[cache.obs_i])
    return p_rel, psi_rel


def _draw_noise(state: SimState, cache: _EdgeCache) -> np.ndarray:
    """One (n_edges, 4) block of standard normals, per-agent streams.

    Agent i draws 4 values per observed neighbor in ascending neighbor
    order, which is exactly the sorted-edge order of the cache.
    """
    blocks = []
    for a, rng in enumerate(state.rngs):
        if cache.deg[a]:
            blocks.append(rng.standard_normal((cache.deg[a], 4)))
    return np.vstack(blocks) if blocks else np.empty((0, 4))


def _edge_commands(p_m, psi_m, s_r, s_t, r_hat, cache: _EdgeCache,
                   cfg: ControllerConfig, var_psi: float):
    """Per-edge restrained or proportional control terms, vectorized.

    Returns (position terms (E, 3), heading terms (E,)). Mirrors the scalar
    functions in ``control`` exactly; the clamp of the two positional terms
    is reduced algebraically (the restrained offset is collinear with the
    raw error, so the clamp passes iff the Mahalanobis norm of the error
    exceeds |Phi^-1(ell)|).
    """
    p_d = cache.p_d
    dpsi_m = wrap_angle(psi_m - cache.psi_d)
    cm, sm = np.cos(dpsi_m), np.sin(dpsi_m)
    p_dr = np.stack([cm * p_d[:, 0] - sm * p_d[:, 1],
                     sm * p_d[:, 0] + cm * p_d[:, 1],
                     p_d[:, 2]], axis=1)
    raw_bearing = p_d[:, 0] * p_m[:, 1] - p_d[:, 1] * p_m[:, 0]

    if not cfg.restraining or cfg.ell == 0.5:
        pos = (p_m - p_d) + (p_m - p_dr)
        ang = raw_bearing + 2.0 * dpsi_m
        return pos, ang

    q = cfg.quantile
    n_e = cache.n_edges

    # Direct position term: closed-form Mahalanobis under the radial-
    # tangential covariance.
    a1 = p_m - p_d
    a1_r = np.einsum("ij,ij->i", a1, r_hat)
    a1_sq = np.einsum("ij,ij->i", a1, a1)
    m1_sq = (a1_sq - a1_r ** 2) / s_t ** 2 + a1_r ** 2 / s_r ** 2
    m1 = np.sqrt(np.maximum(m1_sq, 0.0))
    fac1 = np.where(m1 > -q, 1.0 + q / np.where(m1 > 0.0, m1, 1.0), 0.0)
    pos = a1 * fac1[:, None]

    # Rotated-desired term under the combined covariance.
    sigma_psi = math.sqrt(var_psi)
    sig_c = min(sigma_psi, 0.5 * math.pi)
    p_hat = p_dr.copy()
    p_hat[:, :2] *= math.cos(sigma_psi)
    rr = np.hypot(p_dr[:, 0], p_dr[:, 1])
    ok = rr > 0.0
    rad = np.zeros((n_e, 3))
    rad[ok, 0] = p_dr[ok, 0] / rr[ok]
    rad[ok, 1] = p_dr[ok, 1] / rr[ok]
    tan = np.zeros((n_e, 3))
    tan[:, 0], tan[:, 1] = -rad[:, 1], rad[:, 0]
    lam_r = rr ** 2 * (1.0 - math.cos(sig_c)) ** 2
    lam_t = rr ** 2 * math.sin(sig_c) ** 2
    lam_v = rr ** 2 * DELTA ** 2
    eye = np.eye(3)
    cov = (s_t ** 2)[:, None, None] * eye \
        + (s_r ** 2 - s_t ** 2)[:, None, None] \
        * np.einsum("ij,ik->ijk", r_hat, r_hat)
    cov_t = (lam_r[:, None, None] * np.einsum("ij,ik->ijk", rad, rad)
             + lam_t[:, None, None] * np.einsum("ij,ik->ijk", tan, tan))
    cov_t[:, 2, 2] += lam_v
    cov_t[~ok] = DELTA ** 2 * eye
    a2 = p_m - p_hat
    sol = np.linalg.solve(cov + cov_t, a2[:, :, None])[:, :, 0]
    m2 = np.sqrt(np.maximum(np.einsum("ij,ij->i", a2, sol), 0.0))
    fac2 = np.where(m2 > -q, 1.0 + q / np.where(m2 > 0.0, m2, 1.0), 0.0)
    pos = pos + a2 * fac2[:, None]

    # Bearing term: rotate the measurement toward the desired bearing by
    # sigma_beta |Phi^-1(ell)|, then clamp against the raw term.
    r_m = np.hypot(p_m[:, 0], p_m[:, 1])
    r_d = np.hypot(p_d[:, 0], p_d[:, 1])
    okm = r_m > 0.0
    t_hat = np.zeros((n_e, 3))
    t_hat[okm, 0] = -p_m[okm, 1] / r_m[okm]
    t_hat[okm, 1] = p_m[okm, 0] / r_m[okm]
    t_dot_r = np.einsum("ij,ij->i", t_hat, r_hat)
    var_tan = s_t ** 2 + (s_r ** 2 - s_t ** 2) * t_dot_r ** 2
    dist = np.linalg.norm(p_m, axis=1)
    safe = dist > 0.0
    sigma_b = np.zeros(n_e)
    sigma_b[safe] = np.sqrt(np.maximum(var_tan[safe], 0.0)) / dist[safe]
    zeta_d = np.arctan2(p_d[:, 1], p_d[:, 0])
    zeta_m = np.arctan2(p_m[:, 1], p_m[:, 0])
    theta = np.sign(wrap_angle(zeta_d - zeta_m)) * sigma_b * (-q)
    ct, st_ = np.cos(theta), np.sin(theta)
    y3 = (p_d[:, 0] * (st_ * p_m[:, 0] + ct * p_m[:, 1])
          - p_d[:, 1] * (ct * p_m[:, 0] - st_ * p_m[:, 1]))
    prod = y3 * raw_bearing
    ang = np.where((prod > 0.0) & (prod <= raw_bearing ** 2)
                   & (r_d > 0.0) & okm, y3, 0.0)

    # Heading-consensus term.
    y4 = wrap_angle(dpsi_m + sigma_psi * np.sign(dpsi_m) * q)
    prod4 = y4 * dpsi_m
    ang = ang + 2.0 * np.where((prod4 > 0.0) & (prod4 <= dpsi_m ** 2),
                               y4, 0.0)
    return pos, ang


def step(state: SimState, scenario: Scenario,
         cache: _EdgeCache | None = None) -> SimState:
    """Advance one measurement period: sample, command, integrate."""
    if cache is None:
        cache = _EdgeCache(scenario)
    new_state, _, _ = _step_recorded(state, scenario, cache)
    return new_state


def _step_recorded(state: SimState, scenario: Scenario, cache: _EdgeCache):
    cfg = scenario.controller
    spec = scenario.sensor
    dt = 1.0 / spec.rate_hz
    n = scenario.graph.n

    p_rel, psi_rel = _true_relative(state.positions, state.headings, cache)
    dist = np.linalg.norm(p_rel, axis=1)
    if np.any(dist == 0.0):
        raise ArithmeticError("two agents coincide; relative pose undefined")
    r_hat = p_rel / dist[:, None]
    s_r_raw = spec.dist_frac_sigma * dist
    s_t_raw = spec.bearing_sigma * dist
    z = _draw_noise(state, cache)
    z_r = np.einsum("ij,ij->i", z[:, :3], r_hat)
    p_m = p_rel + s_t_raw[:, None] * z[:, :3] \
        + (s_r_raw - s_t_raw)[:, None] * z_r[:, None] * r_hat
    psi_m = wrap_angle(psi_rel + spec.heading_sigma * z[:, 3])
    # The controller sees floored covariances, never degenerate ones.
    s_r = np.maximum(s_r_raw, DELTA)
    s_t = np.maximum(s_t_raw, DELTA)

    pos_terms, ang_terms = _edge_commands(p_m, psi_m, s_r, s_t, r_hat,
                                          cache, cfg, spec.heading_sigma ** 2)
    u = np.zeros((n, 3))
    omega = np.zeros(n)
    np.add.at(u, cache.obs_i, pos_terms)
    np.add.at(omega, cache.obs_i, ang_terms)
    u *= cfg.k_e
    omega *= cfg.k_e
    cap = cfg.omega_cap / dt
    omega = np.clip(omega, -cap, cap)

    cw, sw = np.cos(state.headings), np.sin(state.headings)
    u_world = np.stack([cw * u[:, 0] - sw * u[:, 1],
                        sw * u[:, 0] + cw * u[:, 1],
                        u[:, 2]], axis=1)
    new = SimState(state.positions + u_world * dt,
                   wrap_angle(state.headings + omega * dt),
                   state.step_index + 1,
                   state.rngs)
    return new, u, omega


def _error_series_entry(positions, headings, cache: _EdgeCache):
    p_rel, psi_rel = _true_relative(positions, headings, cache)
    dp = cache.p_d - p_rel
    dpsi = wrap_angle(cache.psi_d - psi_rel)
    disp_p = float(np.linalg.norm(dp))
    disp_psi = float(np.linalg.norm(dpsi))
    e_f = math.hypot(disp_p, disp_psi)
    per_edge_p = np.linalg.norm(dp, axis=1)
    agents = np.unique(cache.obs_i)
    e_p = float(np.mean([per_edge_p[cache.obs_i == a].mean()
                         for a in agents]))
    e_psi = float(np.mean([np.abs(dpsi[cache.obs_i == a]).mean()
                           for a in agents]))
    return e_f, e_p, e_psi, disp_p, disp_psi


def run(scenario: Scenario, run_id: int = 0) -> RunRecord:
    """Simulate the scenario for its full horizon and compute metrics.

    Convergence metrics follow the scalar definitions with the stacked
    positional (heading) residual norm as the displacement series. The
    summary's ``converged`` flag requires the stable-state RMS of the
    positional series to stay under half the smallest desired inter-agent
    distance; chaotic non-converged runs sit orders of magnitude above it.
    """
    cache = _EdgeCache(scenario)
    n = scenario.graph.n
    steps = scenario.horizon_steps
    state = init_state(scenario, run_id)
    f_hz = scenario.sensor.rate_hz

    positions = np.empty((steps + 1, n, 3))
    headings = np.empty((steps + 1, n))
    u_all = np.empty((steps, n, 3))
    omega_all = np.empty((steps, n))
    e_f = np.empty(steps + 1)
    e_p = np.empty(steps + 1)
    e_psi = np.empty(steps + 1)
    disp_p = np.empty(steps + 1)
    disp_psi = np.empty(steps + 1)

    positions[0] = state.positions
    headings[0] = state.headings
    e_f[0], e_p[0], e_psi[0], disp_p[0], disp_psi[0] = \
        _error_series_entry(state.positions, state.headings, cache)
    for k in range(steps):
        state, u_k, om_k = _step_recorded(state, scenario, cache)
        positions[k + 1] = state.positions
        headings[k + 1] = state.headings
        u_all[k] = u_k
        omega_all[k] = om_k
        e_f[k + 1], e_p[k + 1], e_psi[k + 1], disp_p[k + 1], \
            disp_psi[k + 1] = _error_series_entry(state.positions,
                                                  state.headings, cache)

    fiedler = np.full(steps + 1, fiedler_value(scenario.graph)
                      if n >= 2 else 0.0)
    summary = _summarize(disp_p, disp_psi, u_all, omega_all, f_hz, scenario)
    return RunRecord(positions, headings, u_all, omega_all,
                     e_f, e_p, e_psi, fiedler, summary)


def _summarize(disp_p, disp_psi, u_all, omega_all, f_hz, scenario):
    if disp_p.size < 10:
        return {}
    mp = convergence_metrics_1d(disp_p, 0.0, f_hz, debug=True)
    mpsi = convergence_metrics_1d(disp_psi, 0.0, f_hz, debug=True)
    tail = max(mp["k_c"], disp_p.size // 2)
    stable_rms_p = float(np.sqrt(np.mean(disp_p[tail:] ** 2)))
    threshold = 0.5 * scenario.min_desired_distance()
    if u_all.shape[0] >= 2:
        du = np.linalg.norm(np.diff(u_all, axis=0), axis=2)
        dom = np.abs(np.diff(omega_all, axis=0))
        mean_dv = float(du.mean())
        mean_domega = float(dom.mean())
        a_p = float(du.mean() * f_hz)
    else:
        mean_dv = mean_domega = a_p = 0.0
    v_psi = float(np.abs(omega_all).mean()) if omega_all.size else 0.0
    return {
        "t_cp": mp["t_c"], "t_cpsi": mpsi["t_c"],
        "sigma_tp": mp["sigma_t"], "sigma_tpsi": mpsi["sigma_t"],
        "mean_dv": mean_dv, "mean_domega": mean_domega,
        "a_p": a_p, "v_psi": v_psi,
        "stable_rms_p": stable_rms_p,
        "converged": bool(mp["converged"]
                          and (threshold == 0.0
                               or stable_rms_p < threshold)),
    }


# --- builtin scenarios --------------------------------------------------------


def _poses_from_points(points) -> tuple:
    pts = np.asarray(points, dtype=float)
    pts = pts - pts.mean(axis=0)
    return tuple(AgentPose(p, 0.0) for p in pts)


def builtin_scenarios(controller: ControllerConfig | None = None,
                      sensor: SensorSpec | None = None,
                      seed: int = 0) -> list:
    """The four reference scenarios.

    Two mutual agents 5 m apart; an equilateral triangle of side 5 m; six
    agents on a flat triangle (three vertices of side 10 m plus the three
    side midpoints, closest pair 5 m) fully connected; the same six agents
    with half of the undirected observation pairs removed, still connected
    (removal uses a fixed internal stream so the scenario list is stable).
    """
    controller = controller or ControllerConfig()
    sensor = sensor or SensorSpec()
    side = 5.0
    h = side * math.sqrt(3.0) / 2.0
    pair = _poses_from_points([[0, 0, 0], [side, 0, 0]])
    tri = _poses_from_points([[0, 0, 0], [side, 0, 0], [side / 2.0, h, 0]])
    big = 2.0 * side
    verts = np.array([[0.0, 0.0, 0.0], [big, 0.0, 0.0],
                      [big / 2.0, big * math.sqrt(3.0) / 2.0, 0.0]])
    mids = np.array([(verts[0] + verts[1]) / 2.0,
                     (verts[1] + verts[2]) / 2.0,
                     (verts[2] + verts[0]) / 2.0])
    six = _poses_from_points(np.vstack([verts, mids]))

    full6 = ObservationGraph.complete(6)
    sparse_rng = np.random.default_rng(np.random.SeedSequence(2024,
                                                              spawn_key=(9,)))
    sparse6 = remove_random_edges_keep_connected(full6, 0.5, sparse_rng)
    mk = lambda name, desired, graph: Scenario(
        desired=desired, graph=graph, controller=controller, sensor=sensor,
        seed=seed, name=name)
    return [
        mk("pair", pair, ObservationGraph.complete(2)),
        mk("triangle3", tri, ObservationGraph.complete(3)),
        mk("triangle6", six, full6),
        mk("triangle6_sparse", six, sparse6),
    ]


# --- parameter sweep ----------------------------------------------------------


def _worker_count() -> int:
    raw = os.environ.get("RIGIDFLOCK_THREADS", "0")
    try:
        val = int(raw)
    except ValueError:
        val = 0
    return val if val > 0 else (os.cpu_count() or 1)


def sweep(scenario: Scenario, rates, ells, n_seeds: int) -> list:
    """Grid run over (rate, ell, seed); returns one summary row per cell.

    Seeds offset the scenario seed, so every (rate, ell) pair at a given
    seed shares initial conditions and noise realizations. Cells run on a
    thread pool sized by RIGIDFLOCK_THREADS (0 = auto); row order is fixed
    regardless of scheduling.
    """
    cells = [(f_hz, ell, s) for f_hz in rates for ell in ells
             for s in range(n_seeds)]

    def one(cell):
        f_hz, ell, s = cell
        scen = replace(
            scenario,
            controller=replace(scenario.controller, ell=ell),
            sensor=replace(scenario.sensor, rate_hz=f_hz),
            seed=scenario.seed + s)
        rec = run(scen)
        row = {"rate_hz": f_hz, "ell": ell, "seed": scen.seed}
        row.update(rec.summary)
        return row

    workers = _worker_count()
    if workers == 1:
        return [one(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, cells))
