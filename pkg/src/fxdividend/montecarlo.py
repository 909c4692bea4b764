"""Monte Carlo for discounted dividends paid in a foreign currency.

The surplus ``X`` and the log exchange rate ``L`` are simulated on a uniform
grid with independent random streams.  Each path accrues

    sum_k exp(-delta t_k - L_{t_k}) * dD_k

until ruin, and the estimate is truncated at a horizon ``T`` chosen so that
the neglected tail is below ``tail_tol`` in expectation.

Reproducibility
---------------
Paths are grouped in fixed-size blocks.  Block ``k`` draws from
``SeedSequence(seed, spawn_key=(k,))`` so every block, and therefore every
estimate, is bit-identical for a given ``(n_paths, block_size, seed)``
whatever the number of worker threads.  Block summaries are merged in block
order with the pairwise ``(count, mean, M2)`` update.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .control import IllPosedError, ProblemSpec
from .levy import DiscreteAtoms, LevyTriplet, NormalInverseGaussian, laplace_exponent


@dataclass(frozen=True)
class SimConfig:
    dt: float = 5e-3
    tail_tol: float = 1e-3
    n_paths: int = 10_000
    seed: int = 0
    antithetic: bool = False
    # Brownian-bridge test for ruin between grid points
    bridge: bool = True
    block_size: int = 8192
    workers: int = 1

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not self.tail_tol > 0.0:
            raise ValueError("tail_tol must be positive")
        if not (isinstance(self.n_paths, (int, np.integer)) and self.n_paths > 0):
            raise ValueError(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.block_size < 2 or self.block_size % 2:
            raise ValueError("block_size must be an even integer >= 2")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")


@dataclass(frozen=True)
class ThresholdRate:
    barrier: float
    rate: float

    def __post_init__(self):
        if not (math.isfinite(self.barrier) and self.barrier >= 0.0):
            raise ValueError("barrier must be finite and >= 0")
        if not (math.isfinite(self.rate) and self.rate > 0.0):
            raise ValueError("rate must be finite and > 0")


@dataclass(frozen=True)
class ReflectionBarrier:
    barrier: float

    def __post_init__(self):
        if not (math.isfinite(self.barrier) and self.barrier >= 0.0):
            raise ValueError("barrier must be finite and >= 0")


@dataclass(frozen=True)
class ConstantRate:
    rate: float

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate >= 0.0):
            raise ValueError("rate must be finite and >= 0")


StrategySpec = Union[ThresholdRate, ReflectionBarrier, ConstantRate]


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int
    truncation_bound: float
    horizon: float = math.nan
    dt: float = math.nan

    def z_score(self, target: float) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.mean == target else math.copysign(math.inf, self.mean - target)
        return (self.mean - target) / self.stderr


@dataclass
class PathRecord:
    times: np.ndarray
    surplus: np.ndarray
    log_fx: np.ndarray
    cum_dividends: np.ndarray
    ruined_at: Optional[float]


# --------------------------------------------------------------------------
# random variates


def inverse_gaussian(mean, shape, rng: np.random.Generator, size):
    """Inverse Gaussian draws by the Michael-Schucany-Haas transformation."""
    nu = rng.standard_normal(size)
    y = nu * nu
    my = mean * y
    x = mean + mean * my / (2.0 * shape) - mean / (2.0 * shape) * np.sqrt(
        4.0 * mean * shape * y + my * my
    )
    u = rng.random(size)
    return np.where(u <= mean / (mean + x), x, mean * mean / x)


def sample_levy_increment(model: LevyTriplet, dt: float, rng: np.random.Generator, size=None, z=None):
    """Increments ``L_{t+dt} - L_t``, exact in law.

    ``z`` optionally supplies the standard normals of the Gaussian part (used
    for antithetic pairs); otherwise they are drawn from ``rng``.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    shape = () if size is None else size
    out = np.full(shape, model.pathwise_drift * dt)
    if model.A > 0.0:
        if z is None:
            z = rng.standard_normal(shape)
        out = out + math.sqrt(model.A * dt) * z
    for comp in model.jumps:
        if isinstance(comp, DiscreteAtoms):
            for h, lam in comp.atoms:
                out = out + h * rng.poisson(lam * dt, shape)
        elif isinstance(comp, NormalInverseGaussian):
            s = inverse_gaussian(dt, dt * dt / comp.kappa, rng, shape)
            out = out + comp.vartheta * s + np.sqrt(comp.s2 * s) * rng.standard_normal(shape)
    return float(out) if size is None else out


# --------------------------------------------------------------------------
# horizon and bounds


def discount_rate(fx: LevyTriplet, delta: float) -> float:
    """Decay rate of ``E[exp(-delta t - L_t)]``."""
    psi = laplace_exponent(fx, -1.0)
    return -math.inf if math.isinf(psi) else delta - psi


def _tail_scale(problem: ProblemSpec, strat: StrategySpec, rate: float) -> float:
    """Bound on the discounted dividends still to come, per unit of ``exp(-rate T)``."""
    if isinstance(strat, ReflectionBarrier):
        # surplus after the first lump is <= barrier; E[int e^{-rt} dD] <= x + mu/r
        return strat.barrier + problem.mu / rate
    return strat.rate / rate


def horizon(scale: float, rate: float, tail_tol: float, dt: float) -> float:
    """Smallest ``T`` with ``scale * exp(-rate T) <= tail_tol``, at least ``100 dt``."""
    t = math.log(scale / tail_tol) / rate if scale > tail_tol else 0.0
    return max(t, 100.0 * dt)


def _delta_for(problem: ProblemSpec, fx: LevyTriplet) -> float:
    if problem.delta is not None:
        return problem.delta
    return problem.beta + laplace_exponent(fx, -1.0)


# --------------------------------------------------------------------------
# simulation kernel


@dataclass
class _Block:
    values: np.ndarray
    ruined: np.ndarray


def _block_streams(seed: int, block: int):
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    w_ss, l_ss, b_ss = ss.spawn(3)
    return (
        np.random.Generator(np.random.PCG64(w_ss)),
        np.random.Generator(np.random.PCG64(l_ss)),
        np.random.Generator(np.random.PCG64(b_ss)),
    )


def _normals(rng, m, active, antithetic):
    if not antithetic:
        return rng.standard_normal(active.size)
    half = rng.standard_normal(m // 2)
    return np.concatenate([half, -half])[active]


def _simulate_block(
    mu, sigma, delta, fx, strat, dt, n_steps, x0, m, streams, antithetic, bridge, record=None
) -> _Block:
    """Simulate ``m`` paths; ``values`` are discounted payouts at ``L_0 = 0``.

    With ``record`` (a dict of preallocated ``(n_steps + 1, m)`` arrays) the
    surplus, ``L`` and undiscounted cumulative dividends are stored per step.
    """
    w_rng, l_rng, b_rng = streams
    values = np.zeros(m)
    ruined = np.zeros(m, dtype=bool)
    ids = np.arange(m)
    b = getattr(strat, "barrier", math.inf)
    reflect = isinstance(strat, ReflectionBarrier)
    x = np.full(m, float(x0))
    if reflect and x0 > b:
        values += x0 - b
        x[:] = b
    if record is not None:
        record["surplus"][0] = x if x0 > 0.0 else 0.0
        record["cum"][0] = values
    if x0 <= 0.0:
        ruined[:] = True
        if record is not None:
            record["ruin_time"][:] = 0.0
        return _Block(values, ruined)

    log_fx = np.zeros(m)
    has_fx = fx.A > 0.0 or bool(fx.jumps) or fx.pathwise_drift != 0.0
    split_fx = antithetic and has_fx
    if split_fx:
        jump_part = LevyTriplet.driftless(0.0, fx.jumps)
        gauss_part = LevyTriplet(fx.A, (), fx.pathwise_drift)
    sig_sqdt = sigma * math.sqrt(dt)
    two_var = 2.0 / (sigma * sigma * dt)

    last = 0
    for k in range(1, n_steps + 1):
        if ids.size == 0:
            break
        last = k
        t = k * dt
        if isinstance(strat, ThresholdRate):
            u = np.where(x > strat.barrier, strat.rate, 0.0)
        elif isinstance(strat, ConstantRate):
            u = strat.rate
        else:
            u = 0.0
        z = _normals(w_rng, m, ids, antithetic)
        x_new = x + (mu - u) * dt + sig_sqdt * z
        if split_fx:
            # Gaussian draws mirrored, jump draws shared within each pair
            zl = _normals(l_rng, m, ids, True) if fx.A > 0.0 else None
            gauss = sample_levy_increment(gauss_part, dt, l_rng, ids.size, z=zl)
            jumps = sample_levy_increment(jump_part, dt, l_rng, m // 2)
            log_fx = log_fx + gauss + np.concatenate([jumps, jumps])[ids]
        elif has_fx:
            log_fx = log_fx + sample_levy_increment(fx, dt, l_rng, ids.size)
        disc = np.exp(-delta * t - log_fx)

        dead = x_new <= 0.0
        if bridge:
            pos = ~dead
            p_cross = np.exp(-two_var * x[pos] * x_new[pos])
            dead[pos] = b_rng.random(p_cross.size) < p_cross
        if reflect:
            paid = np.where(dead, 0.0, np.maximum(x_new - b, 0.0))
            x_new = np.minimum(x_new, b)
        else:
            # rate paid up to the interpolated crossing; nothing if only the
            # bridge test detected the crossing
            frac = np.where(x_new <= 0.0, x / np.maximum(x - x_new, 1e-300), 0.0)
            paid = u * dt * np.where(dead, frac, 1.0)
        values[ids] += paid * disc

        if record is not None:
            record["log_fx"][k] = record["log_fx"][k - 1]
            record["cum"][k] = record["cum"][k - 1]
            record["surplus"][k, ids] = np.where(dead, 0.0, x_new)
            record["log_fx"][k, ids] = log_fx
            record["cum"][k, ids] += paid
            record["ruin_time"][ids[dead]] = t

        if dead.any():
            ruined[ids[dead]] = True
            keep = ~dead
            ids, x_new, log_fx = ids[keep], x_new[keep], log_fx[keep]
        x = x_new

    if record is not None and last < n_steps:
        record["log_fx"][last + 1:] = record["log_fx"][last]
        record["cum"][last + 1:] = record["cum"][last]
    return _Block(values, ruined)


def _blocks(n: int, size: int):
    out, start = [], 0
    while start < n:
        out.append(min(size, n - start))
        start += size
    return out


def _combine(stats, other):
    n_a, mean_a, m2_a = stats
    n_b, mean_b, m2_b = other
    n = n_a + n_b
    if n == 0:
        return stats
    d = mean_b - mean_a
    return n, mean_a + d * n_b / n, m2_a + m2_b + d * d * n_a * n_b / n


def _block_stats(samples: np.ndarray):
    n = samples.size
    mean = float(samples.mean())
    m2 = float(((samples - mean) ** 2).sum())
    return n, mean, m2


def _run(fn, cfg: SimConfig):
    sizes = _blocks(cfg.n_paths, cfg.block_size)
    jobs = list(enumerate(sizes))
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            return list(pool.map(lambda j: fn(*j), jobs))
    return [fn(*j) for j in jobs]


def _estimate(samples_per_block, scale=1.0):
    stats = (0, 0.0, 0.0)
    for s in samples_per_block:
        stats = _combine(stats, _block_stats(s))
    n, mean, m2 = stats
    sd = math.sqrt(m2 / (n - 1)) if n > 1 else 0.0
    return n, scale * mean, scale * sd / math.sqrt(n)


def _pair_means(values: np.ndarray, antithetic: bool) -> np.ndarray:
    if not antithetic:
        return values
    half = values.size // 2
    return 0.5 * (values[:half] + values[half:])


def simulate_value(
    problem: ProblemSpec,
    fx: LevyTriplet,
    strat: StrategySpec,
    cfg: SimConfig,
    x0: float,
    l0: float = 0.0,
) -> MCEstimate:
    """Estimate ``E[int_0^tau exp(-delta t - L_t) dD_t]`` with ``L_0 = l0``.

    ``problem.delta`` is the raw preference rate; when it is ``None`` it is
    backed out of ``problem.beta`` and the exchange-rate model.
    """
    if x0 < 0.0:
        raise ValueError("x0 must be >= 0")
    if isinstance(strat, ThresholdRate) and problem.xi is not None and strat.rate > problem.xi:
        raise ValueError("threshold rate exceeds the rate cap xi")
    delta = _delta_for(problem, fx)
    rate = discount_rate(fx, delta)
    if not rate > 0.0:
        raise IllPosedError(f"discount factor does not decay (rate {rate}); problem is ill posed")
    if isinstance(strat, ConstantRate) and strat.rate == 0.0:
        return MCEstimate(0.0, 0.0, cfg.n_paths, 0.0, 0.0, cfg.dt)

    scale = _tail_scale(problem, strat, rate)
    T = horizon(scale, rate, cfg.tail_tol, cfg.dt)
    n_steps = int(math.ceil(T / cfg.dt))
    T = n_steps * cfg.dt
    bound = scale * math.exp(-rate * T)

    def run_block(k, m):
        blk = _simulate_block(
            problem.mu, problem.sigma, delta, fx, strat, cfg.dt, n_steps, x0, m,
            _block_streams(cfg.seed, k), cfg.antithetic, cfg.bridge,
        )
        return _pair_means(blk.values, cfg.antithetic)

    samples = _run(run_block, cfg)
    _, mean, se = _estimate(samples, scale=math.exp(-l0))
    return MCEstimate(mean, se, cfg.n_paths, math.exp(-l0) * bound, T, cfg.dt)


def ruin_horizon(drift: float, sigma: float, x0: float, tail_tol: float, dt: float) -> float:
    """Horizon after which the chance of a first ruin is below ``tail_tol``.

    Uses ``P[T < tau < inf] <= E[exp(-m X_T / sigma^2)]`` evaluated for the
    free Brownian motion, ``= exp(-m x0/sigma^2 - m^2 T/(2 sigma^2))``.
    """
    s2 = sigma * sigma
    log_bound0 = -drift * x0 / s2
    t = 2.0 * s2 * (log_bound0 - math.log(tail_tol)) / (drift * drift)
    return max(t, 100.0 * dt)


def ruin_probability_constant_rate(mu: float, sigma: float, u: float, x0: float, cfg: SimConfig):
    """Analytic and simulated ruin probability when paying at constant rate ``u``.

    Returns ``(exp(-2 (mu - u) x0 / sigma^2), MCEstimate)``; the estimate is the
    ruin frequency before the horizon from :func:`ruin_horizon`.
    """
    if not 0.0 <= u < mu:
        raise ValueError("need 0 <= u < mu for a nontrivial ruin probability")
    if x0 < 0.0:
        raise ValueError("x0 must be >= 0")
    m = mu - u
    analytic = math.exp(-2.0 * m * x0 / sigma**2)
    T = ruin_horizon(m, sigma, x0, cfg.tail_tol, cfg.dt)
    n_steps = int(math.ceil(T / cfg.dt))
    strat = ConstantRate(u)
    zero = LevyTriplet()

    def run_block(k, size):
        blk = _simulate_block(
            mu, sigma, 0.0, zero, strat, cfg.dt, n_steps, x0, size,
            _block_streams(cfg.seed, k), cfg.antithetic, cfg.bridge,
        )
        return _pair_means(blk.ruined.astype(float), cfg.antithetic)

    samples = _run(run_block, cfg)
    _, mean, se = _estimate(samples)
    residual = 0.0 if x0 == 0.0 else math.exp(-m * x0 / sigma**2 - m * m * n_steps * cfg.dt / (2 * sigma**2))
    return analytic, MCEstimate(mean, se, cfg.n_paths, residual, n_steps * cfg.dt, cfg.dt)


def simulate_paths(
    problem: ProblemSpec,
    fx: LevyTriplet,
    strat: StrategySpec,
    cfg: SimConfig,
    x0: float,
    horizon_T: float,
    n: int = 1,
    l0: float = 0.0,
) -> list[PathRecord]:
    """Full trajectories of ``n`` paths on ``[0, horizon_T]`` (block 0 streams)."""
    delta = _delta_for(problem, fx)
    n_steps = int(math.ceil(horizon_T / cfg.dt))
    rec = {
        "surplus": np.zeros((n_steps + 1, n)),
        "log_fx": np.zeros((n_steps + 1, n)),
        "cum": np.zeros((n_steps + 1, n)),
        "ruin_time": np.full(n, math.nan),
    }
    _simulate_block(
        problem.mu, problem.sigma, delta, fx, strat, cfg.dt, n_steps, x0, n,
        _block_streams(cfg.seed, 0), False, cfg.bridge, record=rec,
    )
    times = np.arange(n_steps + 1) * cfg.dt
    out = []
    for i in range(n):
        rt = rec["ruin_time"][i]
        out.append(PathRecord(
            times,
            rec["surplus"][:, i].copy(),
            l0 + rec["log_fx"][:, i],
            rec["cum"][:, i].copy(),
            None if math.isnan(rt) else float(rt),
        ))
    return out


# --------------------------------------------------------------------------
# exchange-rate path export


def export_discounted_fx_paths(fx: LevyTriplet, delta: float, T: float, dt: float, n: int, seed: int):
    """Seeded sample paths of ``L_t + delta t`` with ``L_0 = 0``.

    Returns ``(times, values)`` with ``values`` of shape ``(n, len(times))``.
    """
    if not (T > 0.0 and dt > 0.0 and n > 0):
        raise ValueError("T, dt and n must be positive")
    n_steps = int(round(T / dt))
    if not math.isclose(n_steps * dt, T, rel_tol=1e-9):
        n_steps = int(math.ceil(T / dt))
    times = np.arange(n_steps + 1) * dt
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    incr = np.empty((n, n_steps))
    for k in range(n_steps):
        incr[:, k] = sample_levy_increment(fx, dt, rng, n)
    values = np.zeros((n, n_steps + 1))
    values[:, 1:] = np.cumsum(incr, axis=1)
    values += delta * times
    return times, values


PATHS_HEADER = ["t", "path_id", "value"]
ESTIMATES_HEADER = ["strategy", "b", "r", "mean", "stderr", "truncation_bound", "n", "dt", "seed"]


def write_paths_csv(path, times, values) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PATHS_HEADER)
        for k, t in enumerate(times):
            for pid in range(values.shape[0]):
                w.writerow([repr(float(t)), pid, repr(float(values[pid, k]))])


def strategy_row(strat: StrategySpec) -> tuple[str, str, str]:
    if isinstance(strat, ThresholdRate):
        return "threshold", repr(strat.barrier), repr(strat.rate)
    if isinstance(strat, ReflectionBarrier):
        return "reflection", repr(strat.barrier), ""
    return "constant", "", repr(strat.rate)


def append_estimates_csv(path, rows) -> None:
    """Append ``(strategy, MCEstimate, seed)`` rows, writing the header once."""
    import os

    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(ESTIMATES_HEADER)
        for strat, est, seed in rows:
            name, b, r = strategy_row(strat)
            w.writerow([name, b, r, repr(est.mean), repr(est.stderr), repr(est.truncation_bound),
                        est.n, repr(est.dt), seed])
