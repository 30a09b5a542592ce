"""Chaotic bat algorithm (Lorenz-perturbed) for tri-level Kapur thresholding.

Also holds the exhaustive search used to check it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .entropy import DEFAULT_KAPUR_SEGMENTS, KapurTable, ThresholdTriple, kapur_objective
from .imageio import N_LEVELS

LORENZ_SIGMA = 10.0
LORENZ_RHO = 28.0
LORENZ_BETA = 8.0 / 3.0
LORENZ_BURN_IN = 100
LORENZ_REFERENCE_STEPS = 20_000

LOWER, UPPER = 1.0, float(N_LEVELS - 1)


class OptimizationError(RuntimeError):
    pass


# --- Lorenz attractor --------------------------------------------------------

def lorenz_derivative(state: np.ndarray) -> np.ndarray:
    """Right-hand side of the Lorenz system; works row-wise on (..., 3) arrays."""
    state = np.asarray(state, dtype=float)
    x, y, z = state[..., 0], state[..., 1], state[..., 2]
    return np.stack(
        [LORENZ_SIGMA * (y - x), x * (LORENZ_RHO - z) - y, x * y - LORENZ_BETA * z], axis=-1
    )


def _rk4_orbit(start: np.ndarray, n: int, dt: float) -> np.ndarray:
    """Integrate ``n`` RK4 steps from each row of ``start``; returns (n, k, 3)."""
    s = np.array(start, dtype=float)
    out = np.empty((n,) + s.shape)
    for i in range(n):
        k1 = lorenz_derivative(s)
        k2 = lorenz_derivative(s + 0.5 * dt * k1)
        k3 = lorenz_derivative(s + 0.5 * dt * k2)
        k4 = lorenz_derivative(s + dt * k3)
        s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i] = s
    return out


@lru_cache(maxsize=8)
def _reference_bounds(dt: float) -> tuple[np.ndarray, np.ndarray]:
    orbit = _rk4_orbit(np.ones((1, 3)), LORENZ_BURN_IN + LORENZ_REFERENCE_STEPS, dt)
    orbit = orbit[LORENZ_BURN_IN:, 0, :]
    return orbit.min(axis=0), orbit.max(axis=0)


def _lorenz_starts(seeds) -> np.ndarray:
    starts = []
    for seed in seeds:
        jitter = np.random.default_rng(seed).uniform(-0.5, 0.5, size=3)
        starts.append(np.ones(3) + jitter)
    return np.array(starts)


def _normalized_orbits(starts: np.ndarray, n: int, dt: float) -> np.ndarray:
    orbit = _rk4_orbit(starts, LORENZ_BURN_IN + n, dt)[LORENZ_BURN_IN:]
    lo, hi = _reference_bounds(dt)
    return np.clip(2.0 * (orbit - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def lorenz_sequence(seed, n: int, dt: float = 0.01) -> np.ndarray:
    """``n`` Lorenz states scaled to [-1, 1]^3, as an (n, 3) array.

    The start point is (1, 1, 1) jittered by ``seed``; the first 100 RK4
    steps are discarded. Scaling uses the coordinate range of a long
    reference orbit, so values are comparable across seeds.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _normalized_orbits(_lorenz_starts([seed]), n, dt)[:, 0, :]


# --- bat algorithm -----------------------------------------------------------

@dataclass(frozen=True)
class CbaConfig:
    n_bats: int = 25
    dim: int = 3
    max_iter: int = 3000
    f_min: float = 0.0
    f_max: float = 50.0
    freq_step: float = 0.05
    alpha: float = 0.9
    sigma0: float = 1.0
    seed: int = 0
    lorenz_dt: float = 0.01
    velocity_sign: str = "attract"
    chaos_scale: float = 127.0
    v_max: float | None = 25.0
    sigma_restart: float = 0.01
    kapur_segments: int = DEFAULT_KAPUR_SEGMENTS

    def __post_init__(self):
        if self.n_bats < 1:
            raise ValueError("n_bats must be >= 1")
        if self.dim != 3:
            raise ValueError("only dim=3 (tri-level thresholding) is supported")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.f_min < self.f_max:
            raise ValueError("f_min must be < f_max")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.sigma0 <= 0 or self.lorenz_dt <= 0 or self.freq_step < 0:
            raise ValueError("sigma0 and lorenz_dt must be positive, freq_step non-negative")
        if self.velocity_sign not in ("repel", "attract"):
            raise ValueError("velocity_sign must be 'repel' or 'attract'")
        if self.kapur_segments not in (3, 4):
            raise ValueError("kapur_segments must be 3 or 4")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OptResult:
    best_thresholds: ThresholdTriple
    best_score: float
    trace: np.ndarray = field(repr=False)
    n_evaluations: int = 0

    def write_trace(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "best_score"])
            for i, s in enumerate(self.trace):
                w.writerow([i, repr(float(s))])
        return path


def to_thresholds(positions: np.ndarray) -> np.ndarray:
    """Map continuous positions (k, 3) to valid integer triples.

    Clamp to [1, 255], sort, round, then push collisions apart so that
    ``1 <= t1 < t2 < t3 <= 255`` always holds.
    """
    t = np.floor(np.sort(np.clip(positions, LOWER, UPPER), axis=-1) + 0.5).astype(int)
    t1 = np.minimum(t[..., 0], N_LEVELS - 3)
    t2 = np.clip(np.maximum(t[..., 1], t1 + 1), None, N_LEVELS - 2)
    t3 = np.maximum(t[..., 2], t2 + 1)
    return np.stack([t1, t2, t3], axis=-1)


class KapurObjective:
    """Vectorized Kapur score over integer triples for one distribution."""

    def __init__(self, prob, segments: int = DEFAULT_KAPUR_SEGMENTS):
        self.prob = np.asarray(prob, dtype=float)
        self.segments = segments
        self._table = KapurTable(self.prob, segments)

    def __call__(self, triples: np.ndarray) -> np.ndarray:
        t = np.asarray(triples)
        return self._table.score(t[..., 0], t[..., 1], t[..., 2])

    def exact(self, triple) -> float:
        return kapur_objective(self.prob, triple, self.segments)


def _as_batch_objective(objective) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(objective, KapurObjective):
        return objective

    def batch(triples):
        return np.array([float(objective(ThresholdTriple(*map(int, t)))) for t in triples])

    return batch


def _quantize_frequency(f: np.ndarray, cfg: CbaConfig) -> np.ndarray:
    if cfg.freq_step <= 0:
        return f
    q = cfg.f_min + np.round((f - cfg.f_min) / cfg.freq_step) * cfg.freq_step
    return np.clip(q, cfg.f_min, cfg.f_max)


def cba_optimize(objective, cfg: CbaConfig = CbaConfig()) -> OptResult:
    """Maximize ``objective`` over threshold triples with the chaotic bat algorithm.

    ``objective`` is either a :class:`KapurObjective` (evaluated for all bats
    at once) or any callable taking a :class:`ThresholdTriple` and returning
    a float.

    Each iteration, every bat draws a frequency, updates velocity and
    position, and then tries a chaotic local move scaled by its loudness;
    the move is kept only if it improves that bat's score, in which case
    its loudness decays by ``alpha``.
    """
    evaluate = _as_batch_objective(objective)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_bats
    bat_seeds = np.random.SeedSequence(cfg.seed).spawn(n)
    psi = _normalized_orbits(
        _lorenz_starts([s.generate_state(1)[0] for s in bat_seeds]), cfg.max_iter, cfg.lorenz_dt
    )
    sign = 1.0 if cfg.velocity_sign == "repel" else -1.0

    def score_of(pos):
        triples = to_thresholds(pos)
        s = np.asarray(evaluate(triples), dtype=float)
        if np.any(np.isnan(s)):
            bad = triples[np.isnan(s)][0]
            raise OptimizationError(f"objective returned NaN at thresholds {tuple(int(v) for v in bad)}")
        return triples, s

    pos = rng.uniform(LOWER, UPPER, size=(n, cfg.dim))
    vel = np.zeros_like(pos)
    loud = np.full(n, cfg.sigma0)
    triples, fit = score_of(pos)
    n_eval = n

    i_best = int(np.argmax(fit))
    best_pos = pos[i_best].copy()
    best_triple = triples[i_best].copy()
    best_score = float(fit[i_best])
    trace = np.empty(cfg.max_iter)

    for it in range(cfg.max_iter):
        fresh = rng.uniform(LOWER, UPPER, size=(n, cfg.dim))
        spent = loud < cfg.sigma_restart
        if spent.any():
            pos = np.where(spent[:, None], fresh, pos)
            vel = np.where(spent[:, None], 0.0, vel)
            loud = np.where(spent, cfg.sigma0, loud)
        freq = _quantize_frequency(cfg.f_min + (cfg.f_max - cfg.f_min) * rng.random(n), cfg)
        vel = vel + sign * (pos - best_pos) * freq[:, None]
        if cfg.v_max is not None:
            vel = np.clip(vel, -cfg.v_max, cfg.v_max)
        pos = np.clip(pos + vel, LOWER, UPPER)
        triples, fit = score_of(pos)

        trial = np.clip(pos + cfg.chaos_scale * loud[:, None] * psi[it], LOWER, UPPER)
        t_triples, t_fit = score_of(trial)
        n_eval += 2 * n

        accept = t_fit > fit
        pos = np.where(accept[:, None], trial, pos)
        triples = np.where(accept[:, None], t_triples, triples)
        fit = np.where(accept, t_fit, fit)
        loud = np.where(accept, cfg.alpha * loud, loud)

        i_best = int(np.argmax(fit))
        if fit[i_best] > best_score:
            best_score = float(fit[i_best])
            best_pos = pos[i_best].copy()
            best_triple = triples[i_best].copy()
        trace[it] = best_score

    th = ThresholdTriple(*(int(v) for v in best_triple))
    if isinstance(objective, KapurObjective):
        best_score = objective.exact(th)
    return OptResult(best_thresholds=th, best_score=best_score, trace=trace, n_evaluations=n_eval)


def cba_threshold(prob, cfg: CbaConfig = CbaConfig()) -> OptResult:
    """Convenience wrapper: CBA on the Kapur objective of ``prob``."""
    return cba_optimize(KapurObjective(prob, cfg.kapur_segments), cfg)


# --- exhaustive oracle -------------------------------------------------------

def exhaustive_tri_threshold(
    prob, segments: int = DEFAULT_KAPUR_SEGMENTS, tie_tol: float = 1e-12
) -> tuple[ThresholdTriple, float]:
    """Best triple over all ``1 <= t1 < t2 < t3 <= 255``.

    Segment entropies come from prefix sums. Scores within ``tie_tol`` of the
    maximum count as ties and go to the lexicographically smallest triple;
    the returned score is re-evaluated directly.
    """
    table = KapurTable(prob, segments)
    L = table.n_levels
    idx = np.arange(L + 1)
    # seg[a, b] = entropy of [a, b); only a < b entries are used
    seg = table.segment(idx[:, None], idx[None, :])
    valid = idx[:, None] < idx[None, :]
    tail = seg[:, L] if segments == 4 else np.zeros(L + 1)

    def row(t1):
        block = seg[t1 + 1 : L - 1, t1 + 2 : L] + seg[t1, t1 + 1 : L - 1][:, None]
        block = block + (seg[0, t1] + tail[t1 + 2 : L])[None, :]
        return np.where(valid[t1 + 1 : L - 1, t1 + 2 : L], block, -np.inf)

    row_max = np.array([row(t1).max() for t1 in range(1, L - 2)])
    top = float(row_max.max())
    for t1 in range(1, L - 2):
        if row_max[t1 - 1] < top - tie_tol:
            continue
        # first hit in row-major order is the smallest (t2, t3)
        r, c = divmod(int(np.argmax(row(t1) >= top - tie_tol)), L - t1 - 2)
        th = ThresholdTriple(t1, t1 + 1 + r, t1 + 2 + c)
        return th, kapur_objective(prob, th, segments)
    raise AssertionError("unreachable: the maximum is attained in some row")
