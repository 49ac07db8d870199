"""Multinomial No-U-Turn sampler with windowed warmup adaptation.

Trajectories are built by repeated doubling in a random direction until the
generalised U-turn criterion fires (also checked across the seams of merged
subtrees) or the maximum depth is reached; the returned state is drawn
multinomially with biased progressive sampling between subtrees. Warmup tunes
the step size by dual averaging toward a target acceptance statistic and a
diagonal inverse metric from the sample variance over doubling windows
(75 / 25-doubling / 50 iteration buffers).
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LOG_08 = math.log(0.8)


@dataclass
class SamplerConfig:
    chains: int = 12
    iterations: int = 20000
    warmup: int = 2000
    thinning: int = 50
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    jobs: int = 1
    max_energy_error: float = 1000.0

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("warmup must be non-negative and smaller than iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be at least 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 0:
            raise ValueError("max_tree_depth must be non-negative")

    @property
    def retained_per_chain(self) -> int:
        return (self.iterations - self.warmup) // self.thinning


@dataclass
class PosteriorDraws:
    """Retained draws, shape ``(chains, draws, dim)``, plus sampler statistics.

    ``individual`` optionally carries per-customer effects (same leading
    shape) that are kept out of the main parameter table.
    """

    names: tuple[str, ...]
    draws: np.ndarray
    accept_stat: np.ndarray
    divergences: np.ndarray
    step_size: np.ndarray
    mean_leapfrog: np.ndarray
    post_warmup_iterations: int
    individual_names: tuple[str, ...] = ()
    individual: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def column(self, name: str) -> np.ndarray:
        """``(chains, draws)`` array for one parameter."""
        if name in self.names:
            return self.draws[:, :, self.names.index(name)]
        if name in self.individual_names:
            return self.individual[:, :, self.individual_names.index(name)]
        raise KeyError(name)

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])


# ---------------------------------------------------------------------------
# Adaptation


class DualAveraging:
    """Step-size adaptation of Hoffman & Gelman with Stan's constants."""

    def __init__(self, target_accept: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.delta = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(1.0)

    def restart(self, step_size: float):
        self.mu = math.log(10 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.delta - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** -self.kappa
        self.x_bar = (1 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.x_bar)


class WindowedMetricAdaptation:
    """Doubling variance windows between a fast initial and terminal buffer."""

    def __init__(self, warmup: int, dim: int, init_buffer=75, term_buffer=50, base_window=25):
        self.warmup = warmup
        self.enabled = warmup >= 20
        if init_buffer + base_window + term_buffer > warmup:
            init_buffer = int(0.15 * warmup)
            term_buffer = int(0.1 * warmup)
            base_window = warmup - (init_buffer + term_buffer)
        self.init_buffer = init_buffer
        self.term_buffer = term_buffer
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self.counter = 0
        self._reset(dim)

    def _reset(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def _in_window(self) -> bool:
        return (self.init_buffer <= self.counter < self.warmup - self.term_buffer
                and self.counter != self.warmup)

    def _end_window(self) -> bool:
        return self.counter == self.next_window and self.counter != self.warmup

    def _compute_next_window(self):
        last = self.warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window == last:
            return
        if self.next_window + 2 * self.window_size >= self.warmup - self.term_buffer:
            self.next_window = last

    def update(self, theta: np.ndarray) -> np.ndarray | None:
        """Feed one warmup draw; returns a new inverse metric at window ends."""
        if not self.enabled:
            return None
        if self._in_window():
            self.n += 1
            delta = theta - self.mean
            self.mean += delta / self.n
            self.m2 += delta * (theta - self.mean)
        if self._end_window():
            self._compute_next_window()
            n = self.n
            var = self.m2 / max(n - 1, 1)
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset(len(theta))
            self.counter += 1
            return var
        self.counter += 1
        return None


# ---------------------------------------------------------------------------
# Trajectory


class _Point(NamedTuple):
    theta: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray


class _Subtree(NamedTuple):
    edge: _Point
    sample: _Point
    log_weight: float
    rho: np.ndarray
    p_beg: np.ndarray
    p_end: np.ndarray
    ps_beg: np.ndarray
    ps_end: np.ndarray


def _no_u_turn(ps_a, ps_b, rho) -> bool:
    return float(np.dot(ps_a, rho)) > 0 and float(np.dot(ps_b, rho)) > 0


def _safe_eval(target, theta):
    try:
        logp, grad = target(theta)
    except (ValueError, FloatingPointError, OverflowError, ZeroDivisionError):
        return -math.inf, np.zeros_like(theta)
    logp = float(logp)
    grad = np.asarray(grad, dtype=float)
    if not math.isfinite(logp) or not np.isfinite(grad).all():
        return -math.inf, np.zeros_like(theta)
    return logp, grad


def leapfrog(target, point: _Point, step: float, inv_metric: np.ndarray) -> _Point:
    """One velocity-Verlet step; ``step`` may be negative."""
    p_half = point.p + 0.5 * step * point.grad
    theta = point.theta + step * inv_metric * p_half
    if not np.isfinite(theta).all():
        return _Point(theta, p_half, -math.inf, np.zeros_like(theta))
    logp, grad = _safe_eval(target, theta)
    return _Point(theta, p_half + 0.5 * step * grad, logp, grad)


def hamiltonian(point: _Point, inv_metric: np.ndarray) -> float:
    h = -point.logp + 0.5 * float(np.dot(inv_metric * point.p, point.p))
    return math.inf if math.isnan(h) else h


class _TreeBuilder:
    def __init__(self, target, inv_metric, h0, rng, max_energy_error):
        self.target = target
        self.inv_metric = inv_metric
        self.h0 = h0
        self.rng = rng
        self.max_energy_error = max_energy_error
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False

    def build(self, start: _Point, depth: int, step: float) -> _Subtree | None:
        if depth == 0:
            new = leapfrog(self.target, start, step, self.inv_metric)
            self.n_leapfrog += 1
            log_w = self.h0 - hamiltonian(new, self.inv_metric)
            self.sum_metro += 1.0 if log_w > 0 else math.exp(log_w)
            if -log_w > self.max_energy_error:
                self.divergent = True
                return None
            ps = self.inv_metric * new.p
            return _Subtree(new, new, log_w, new.p.copy(), new.p, new.p, ps, ps)

        init = self.build(start, depth - 1, step)
        if init is None:
            return None
        final = self.build(init.edge, depth - 1, step)
        if final is None:
            return None
        log_w = np.logaddexp(init.log_weight, final.log_weight)
        sample = init.sample
        if self.rng.uniform() < math.exp(final.log_weight - log_w):
            sample = final.sample
        rho = init.rho + final.rho
        persist = (_no_u_turn(init.ps_beg, final.ps_end, rho)
                   and _no_u_turn(init.ps_beg, final.ps_beg, init.rho + final.p_beg)
                   and _no_u_turn(init.ps_end, final.ps_end, final.rho + init.p_end))
        if not persist:
            return None
        return _Subtree(final.edge, sample, float(log_w), rho, init.p_beg, final.p_end,
                        init.ps_beg, final.ps_end)


class _TransitionStats(NamedTuple):
    accept_stat: float
    n_leapfrog: int
    depth: int
    divergent: bool
    energy: float


def nuts_transition(target, point: _Point, step_size: float, inv_metric: np.ndarray,
                    rng: np.random.Generator, max_tree_depth: int = 10,
                    max_energy_error: float = 1000.0) -> tuple[_Point, _TransitionStats]:
    """One NUTS transition from ``point`` (its momentum is ignored)."""
    dim = len(point.theta)
    p0 = rng.standard_normal(dim) / np.sqrt(inv_metric)
    start = point._replace(p=p0)
    h0 = hamiltonian(start, inv_metric)
    builder = _TreeBuilder(target, inv_metric, h0, rng, max_energy_error)

    ps0 = inv_metric * p0
    fwd = bck = start
    p_left = p_right = p0
    ps_left = ps_right = ps0
    rho = p0.copy()
    sample = start
    log_w = 0.0
    depth = 0
    while depth < max(max_tree_depth, 1):
        forward = rng.uniform() > 0.5
        sub = builder.build(fwd if forward else bck, depth, step_size if forward else -step_size)
        if sub is None:
            break
        depth += 1
        if sub.log_weight > log_w or rng.uniform() < math.exp(sub.log_weight - log_w):
            sample = sub.sample
        log_w = float(np.logaddexp(log_w, sub.log_weight))
        rho_old = rho
        rho = rho_old + sub.rho
        if forward:
            fwd = sub.edge
            persist = (_no_u_turn(ps_left, sub.ps_end, rho)
                       and _no_u_turn(ps_left, sub.ps_beg, rho_old + sub.p_beg)
                       and _no_u_turn(ps_right, sub.ps_end, sub.rho + p_right))
            p_right, ps_right = sub.p_end, sub.ps_end
        else:
            bck = sub.edge
            persist = (_no_u_turn(sub.ps_end, ps_right, rho)
                       and _no_u_turn(sub.ps_beg, ps_right, rho_old + sub.p_beg)
                       and _no_u_turn(sub.ps_end, ps_left, sub.rho + p_left))
            p_left, ps_left = sub.p_end, sub.ps_end
        if not persist:
            break
    accept = builder.sum_metro / builder.n_leapfrog
    stats = _TransitionStats(accept, builder.n_leapfrog, depth, builder.divergent,
                             hamiltonian(sample, inv_metric))
    return sample, stats


def find_initial_step_size(target, point: _Point, step_size: float, inv_metric: np.ndarray,
                           rng: np.random.Generator) -> float:
    """Double or halve until one leapfrog step's acceptance crosses 0.8."""

    def log_accept():
        p = rng.standard_normal(len(point.theta)) / np.sqrt(inv_metric)
        start = point._replace(p=p)
        h0 = hamiltonian(start, inv_metric)
        return h0 - hamiltonian(leapfrog(target, start, step_size, inv_metric), inv_metric)

    direction = 1 if log_accept() > LOG_08 else -1
    while True:
        delta_h = log_accept()
        if direction == 1 and not delta_h > LOG_08:
            break
        if direction == -1 and not delta_h < LOG_08:
            break
        step_size = step_size * 2 if direction == 1 else step_size * 0.5
        if step_size > 1e7:
            raise RuntimeError("step size search diverged; the posterior may be improper")
        if step_size == 0:
            raise RuntimeError("step size underflowed to zero; check the gradient")
    return step_size


# ---------------------------------------------------------------------------
# Chains


def _initial_point(target, dim, init, rng, attempts=100) -> _Point:
    for _ in range(attempts):
        if init is None:
            theta = rng.uniform(-2, 2, size=dim)
        elif callable(init):
            theta = np.asarray(init(rng), dtype=float)
        else:
            theta = np.asarray(init, dtype=float).copy()
        if theta.shape != (dim,):
            raise ValueError(f"initial point has shape {theta.shape}, expected ({dim},)")
        logp, grad = _safe_eval(target, theta)
        if math.isfinite(logp):
            return _Point(theta, np.zeros(dim), logp, grad)
        if init is not None and not callable(init):
            break
    raise RuntimeError(f"could not find a finite initial point in {attempts} attempts")


def run_chain(target, dim: int, cfg: SamplerConfig, chain: int = 0, init=None, keep=None) -> dict:
    """Run one chain; returns retained draws and post-warmup statistics.

    ``keep`` selects the coordinates stored for retained draws (all by default).
    """
    rng = np.random.default_rng([cfg.seed, chain])
    point = _initial_point(target, dim, init, rng)
    inv_metric = np.ones(dim)
    step = find_initial_step_size(target, point, 1.0, inv_metric, rng)
    averager = DualAveraging(cfg.target_accept)
    averager.restart(step)
    metric = WindowedMetricAdaptation(cfg.warmup, dim)

    keep = np.arange(dim) if keep is None else np.asarray(keep, dtype=np.intp)
    n_keep = cfg.retained_per_chain
    draws = np.empty((n_keep, len(keep)))
    kept = 0
    accept_sum = 0.0
    leapfrog_sum = 0
    divergences = 0
    report_every = max(cfg.iterations // 10, 1)
    for it in range(cfg.iterations):
        point, stats = nuts_transition(target, point, step, inv_metric, rng,
                                       cfg.max_tree_depth, cfg.max_energy_error)
        if it < cfg.warmup:
            step = averager.update(stats.accept_stat)
            new_inv = metric.update(point.theta)
            if new_inv is not None:
                inv_metric = new_inv
                step = find_initial_step_size(target, point, step, inv_metric, rng)
                averager.restart(step)
            if it == cfg.warmup - 1:
                step = averager.final_step_size
        else:
            accept_sum += stats.accept_stat
            leapfrog_sum += stats.n_leapfrog
            divergences += stats.divergent
            j = it - cfg.warmup
            if (j + 1) % cfg.thinning == 0 and kept < n_keep:
                draws[kept] = point.theta[keep]
                kept += 1
        if (it + 1) % report_every == 0:
            logger.info("chain %d: iteration %d/%d step=%.3g depth=%d", chain, it + 1,
                        cfg.iterations, step, stats.depth)
    n_post = cfg.iterations - cfg.warmup
    return {
        "draws": draws,
        "accept_stat": accept_sum / n_post,
        "divergences": divergences,
        "step_size": step,
        "mean_leapfrog": leapfrog_sum / n_post,
        "inv_metric": inv_metric,
    }


def _run_chain_star(args):
    return run_chain(*args)


def nuts_sample(target: Callable[[np.ndarray], tuple[float, np.ndarray]], dim: int,
                cfg: SamplerConfig, init=None, names: Sequence[str] | None = None,
                keep: Sequence[int] | None = None) -> PosteriorDraws:
    """Sample ``cfg.chains`` independent chains from ``exp(target)``.

    ``init`` is ``None`` (uniform(-2, 2) in every coordinate), a fixed start
    vector, or a callable drawing a start vector from a numpy Generator.
    Chain ``c`` uses the random stream seeded by ``(cfg.seed, c)``, so results
    do not depend on ``cfg.jobs``. ``keep`` restricts which coordinates are
    stored; ``names`` then labels the kept coordinates.
    """
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    jobs = [(target, dim, cfg, c, init, keep) for c in range(cfg.chains)]
    if cfg.jobs > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, cfg.chains)) as pool:
            results = list(pool.map(_run_chain_star, jobs))
    else:
        results = [run_chain(*job) for job in jobs]
    n_stored = dim if keep is None else len(keep)
    names = tuple(names) if names is not None else tuple(f"x[{i}]" for i in range(n_stored))
    return PosteriorDraws(
        names=names,
        draws=np.stack([r["draws"] for r in results]),
        accept_stat=np.array([r["accept_stat"] for r in results]),
        divergences=np.array([r["divergences"] for r in results]),
        step_size=np.array([r["step_size"] for r in results]),
        mean_leapfrog=np.array([r["mean_leapfrog"] for r in results]),
        post_warmup_iterations=cfg.iterations - cfg.warmup,
    )
