"""Trajectory-level cross-checks: Euler-Maruyama ensembles, Benettin-QR
Lyapunov spectra with finite-difference Jacobians, and periodic-point counts
for unimodular torus maps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateIterate, StepTooLarge, ValidationError
from .gtomap import MapSpec, _int_det
from .mesh import TWO_PI
from .vfparse import evaluate

_CHUNK = 1024  # steps per pre-drawn noise block


@dataclass
class TrajectoryConfig:
    flow: object
    dt: float = 1e-3
    steps: int = 10000
    ensemble: int = 1
    seed: int = 0
    burn_in_fraction: float = 0.1
    initial: object = "uniform"  # "uniform" or an (ensemble, D) array of points
    save_every: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.steps < 1 or self.ensemble < 1:
            raise ValidationError("steps and ensemble must be >= 1")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ValidationError("burn_in_fraction must lie in [0, 1)")


@dataclass
class LyapunovResult:
    exponents: np.ndarray  # sorted descending, ensemble mean
    stderr: np.ndarray
    per_ic: np.ndarray  # (ensemble, D), each row sorted descending
    config: dict = field(default_factory=dict)


def _streams(seed, ensemble, common_noise=False):
    """Counter-based per-trajectory generators (Philox keyed by seed, index)."""
    keys = [0] * ensemble if common_noise else range(ensemble)
    return [np.random.Generator(np.random.Philox(key=[int(seed), int(i)])) for i in keys]


def _flow_values(flow, x):
    """Evaluate all flow components at states x of shape (ensemble, D)."""
    cols = [x[:, a] for a in range(x.shape[1])]
    out = np.empty_like(x)
    for a, comp in enumerate(flow.components):
        out[:, a] = np.broadcast_to(evaluate(comp, cols), x[:, 0].shape)
    return out


def _initial_states(cfg, rng):
    D = cfg.flow.dim
    if isinstance(cfg.initial, str) and cfg.initial == "uniform":
        return rng.uniform(0.0, TWO_PI, size=(cfg.ensemble, D))
    pts = np.asarray(cfg.initial, dtype=float)
    if pts.shape != (cfg.ensemble, D):
        raise ValidationError(f"initial points must have shape {(cfg.ensemble, D)}, got {pts.shape}")
    return pts % TWO_PI


def integrate_sde(cfg: TrajectoryConfig):
    """Euler-Maruyama ensemble on the torus, wrapped to [0, 2*pi).

    Returns (times, states) with states of shape (ensemble, n_saved, D);
    saving starts after the burn-in and thins by save_every. Identical
    config and seed give bit-identical output.
    """
    D = cfg.flow.dim
    gens = _streams(cfg.seed, cfg.ensemble)
    init_rng = np.random.Generator(np.random.Philox(key=[int(cfg.seed), 2**32]))
    x = _initial_states(cfg, init_rng)
    T = cfg.flow.temperature
    e = np.asarray(cfg.flow.vielbein)
    noise_amp = np.sqrt(T * cfg.dt) * e
    burn = int(cfg.burn_in_fraction * cfg.steps)
    saved_idx = range(burn, cfg.steps, cfg.save_every)
    out = np.empty((cfg.ensemble, len(saved_idx), D))
    times = np.array([(s + 1) * cfg.dt for s in saved_idx])
    save_ptr = 0
    guard = 0.25 * np.pi
    step = 0
    while step < cfg.steps:
        chunk = min(_CHUNK, cfg.steps - step)
        if T > 0:
            noise = np.stack([g.standard_normal((chunk, D)) for g in gens], axis=1)
        else:
            noise = None
        for s in range(chunk):
            F = _flow_values(cfg.flow, x)
            if np.abs(F).max() * cfg.dt > guard:
                raise StepTooLarge(
                    f"|F|*dt = {np.abs(F).max() * cfg.dt:.3f} exceeds pi/4; reduce dt"
                )
            x = x + F * cfg.dt
            if noise is not None:
                x = x + noise[s] * noise_amp
            x %= TWO_PI
            gstep = step + s
            if gstep >= burn and (gstep - burn) % cfg.save_every == 0:
                out[:, save_ptr, :] = x
                save_ptr += 1
        step += chunk
    return times, out


# ---------------------------------------------------------------------------
# Lyapunov exponents
# ---------------------------------------------------------------------------


def _jacobian_fd(flow, x, step=1e-6):
    """Finite-difference Jacobians of F at states x: output (ensemble, D, D)."""
    m, D = x.shape
    J = np.empty((m, D, D))
    for a in range(D):
        dx = np.zeros(D)
        dx[a] = step
        Fp = _flow_values(flow, (x + dx) % TWO_PI)
        Fm = _flow_values(flow, (x - dx) % TWO_PI)
        J[:, :, a] = (Fp - Fm) / (2.0 * step)
    return J


def lyapunov_spectrum(cfg: TrajectoryConfig, common_noise=True, jac_step=1e-6,
                      qr_interval=10, n_windows=10) -> LyapunovResult:
    """Benettin tangent-space QR along stochastic trajectories.

    The tangent propagator per step is I + J(x) dt with finite-difference
    Jacobians of the deterministic part; additive noise shifts the base
    point only. With common_noise every initial condition rides the same
    noise realization (the pathwise convention).
    """
    D = cfg.flow.dim
    m = cfg.ensemble
    gens = _streams(cfg.seed, m, common_noise=common_noise)
    init_rng = np.random.Generator(np.random.Philox(key=[int(cfg.seed), 2**32]))
    x = _initial_states(cfg, init_rng)
    T = cfg.flow.temperature
    noise_amp = np.sqrt(T * cfg.dt) * np.asarray(cfg.flow.vielbein)
    Q = np.broadcast_to(np.eye(D), (m, D, D)).copy()
    logsums = np.zeros((m, D))
    window_rates = []
    window_log = np.zeros((m, D))
    window_steps = 0
    steps_per_window = max(1, cfg.steps // n_windows)
    step = 0
    while step < cfg.steps:
        chunk = min(_CHUNK, cfg.steps - step)
        noise = (
            np.stack([g.standard_normal((chunk, D)) for g in gens], axis=1) if T > 0 else None
        )
        for s in range(chunk):
            J = _jacobian_fd(cfg.flow, x, step=jac_step)
            F = _flow_values(cfg.flow, x)
            x = (x + F * cfg.dt + (noise[s] * noise_amp if noise is not None else 0.0)) % TWO_PI
            Q = Q + cfg.dt * np.einsum("mij,mjk->mik", J, Q)
            if (step + s + 1) % qr_interval == 0:
                for i in range(m):
                    q, r = np.linalg.qr(Q[i])
                    diag = np.diag(r)
                    sgn = np.where(diag < 0, -1.0, 1.0)
                    Q[i] = q * sgn
                    growth = np.log(np.abs(diag))
                    logsums[i] += growth
                    window_log[i] += growth
                window_steps += qr_interval
                if window_steps >= steps_per_window:
                    window_rates.append(window_log / (window_steps * cfg.dt))
                    window_log = np.zeros((m, D))
                    window_steps = 0
        step += chunk
    total_time = cfg.steps * cfg.dt
    per_ic = -np.sort(-(logsums / total_time), axis=1)
    rates = np.array(window_rates)  # (n_win, m, D)
    if len(rates) >= 2:
        win_sorted = -np.sort(-rates, axis=2)
        stderr = win_sorted.std(axis=0).mean(axis=0) / np.sqrt(len(rates))
    else:
        stderr = np.full(D, np.inf)
    return LyapunovResult(
        exponents=per_ic.mean(axis=0),
        stderr=np.maximum(stderr, 1e-300),
        per_ic=per_ic,
        config={"dt": cfg.dt, "steps": cfg.steps, "ensemble": m, "seed": cfg.seed,
                "common_noise": common_noise},
    )


def map_lyapunov(map_spec: MapSpec, steps=1000, warmup=100) -> LyapunovResult:
    """Exponents of an affine torus map: QR accumulation of the constant tangent map.

    The warmup lets the orthogonal frame lock onto the invariant splitting
    (exponentially fast) before growth rates are accumulated, so the result
    is exact up to rounding accumulation.
    """
    A = map_spec.matrix().astype(float)
    D = A.shape[0]
    Q = np.eye(D)
    logsum = np.zeros(D)
    for step in range(warmup + steps):
        Q = A @ Q
        q, r = np.linalg.qr(Q)
        diag = np.diag(r)
        Q = q * np.where(diag < 0, -1.0, 1.0)
        if step >= warmup:
            logsum += np.log(np.abs(diag))
    expo = -np.sort(-(logsum / steps))
    return LyapunovResult(
        exponents=expo, stderr=np.zeros(D), per_ic=expo[None, :],
        config={"steps": steps, "warmup": warmup, "map": map_spec.A},
    )


# ---------------------------------------------------------------------------
# periodic points
# ---------------------------------------------------------------------------


def fixed_point_count(map_spec: MapSpec, n: int) -> int:
    """Number of fixed points of the n-th iterate: |det(A^n - I)|.

    Noise is ignored (deterministic count). Exact in integer arithmetic.
    """
    if n < 1:
        raise ValidationError("iterate order n must be >= 1")
    A = map_spec.matrix()
    An = np.linalg.matrix_power(A, n)
    B = An - np.eye(A.shape[0], dtype=np.int64)
    det = _int_det(B)
    if det == 0:
        raise DegenerateIterate(f"A^{n} = I on a sublattice: det(A^n - I) = 0")
    return abs(int(det))


def orbit_growth_rate(map_spec: MapSpec, n_values):
    """Fitted slope of log(count) versus n over the largest-n half; estimates
    the topological entropy without the small-n transient."""
    ns, logs = [], []
    for n in n_values:
        try:
            c = fixed_point_count(map_spec, int(n))
        except DegenerateIterate:
            continue
        ns.append(float(n))
        logs.append(np.log(c))
    if len(ns) < 2:
        raise ValidationError("need at least two non-degenerate iterates")
    start = min(len(ns) // 2, len(ns) - 2)
    coeffs = np.polyfit(ns[start:], logs[start:], 1)
    return float(coeffs[0])


# ---------------------------------------------------------------------------
# CSV writers
# ---------------------------------------------------------------------------


def write_trajectory_csv(path, times, states, header_lines=()):
    """Dump one ensemble: rows (trajectory, t, x...)."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        D = states.shape[2]
        writer.writerow(["trajectory", "t"] + [f"x{a}" for a in range(D)])
        for i in range(states.shape[0]):
            for j, t in enumerate(times):
                writer.writerow([i, t] + list(states[i, j]))


def write_histogram_csv(path, states, bins=64, header_lines=()):
    """Per-axis histograms of the pooled ensemble samples."""
    D = states.shape[2]
    pooled = states.reshape(-1, D)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["axis", "bin_center", "count"])
        for a in range(D):
            counts, edges = np.histogram(pooled[:, a], bins=bins, range=(0.0, TWO_PI))
            centers = 0.5 * (edges[:-1] + edges[1:])
            for c, cnt in zip(centers, counts):
                writer.writerow([a, c, int(cnt)])
