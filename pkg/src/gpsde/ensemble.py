"""Euler-Maruyama ensemble simulation with reproducible per-path noise streams.

Each path's noise comes from its own counter-based (Philox) stream keyed by
(seed, path index), so results do not depend on execution order or worker
count. Paths are advanced vectorized in chunks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .moments import MomentState, sqrt_psd
from .odeint import TimeGrid

_DEFAULT_CHUNK = 4096


@dataclass
class Ensemble:
    times: np.ndarray   # (n_times,)
    paths: np.ndarray   # (n, n_times, d)
    seed: int

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]


def _path_rng(seed: int, path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, path]))


def em_step(model, z, t, dt, noise):
    """One Euler-Maruyama update z + f dt + L sqrt(dt) sqrt(Q) noise."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = np.asarray(z, dtype=float)
    f = np.asarray(model.drift(z, t), dtype=float)
    L = np.atleast_2d(np.asarray(model.diffusion(z, t), dtype=float))
    Q = model.spectral_density
    sqQ = np.eye(Q.shape[0]) if np.allclose(Q, np.eye(Q.shape[0])) else sqrt_psd(Q)
    return z + f * dt + L @ (sqQ @ np.asarray(noise)) * np.sqrt(dt)


def simulate(model, initial, n: int, grid: TimeGrid, seed: int,
             record_times=None, threads: int = 1) -> Ensemble:
    """Simulate n Euler-Maruyama paths over the grid.

    ``initial`` is either a fixed start point (all paths share it) or a
    ``MomentState`` from which each path draws its own Gaussian start.
    ``record_times`` restricts which grid times are stored (default: all);
    the endpoint times must be members of the grid.
    """
    if n < 1:
        raise ValueError("need n >= 1 paths")
    times = grid.times()
    steps = len(times) - 1
    d = model.dim
    q = np.atleast_2d(np.asarray(model.diffusion(
        _initial_point(initial, d), times[0]), dtype=float)).shape[1]

    if record_times is None:
        rec_idx = np.arange(len(times))
    else:
        rec_idx = np.array([_grid_index(times, t) for t in record_times])
    rec_times = times[rec_idx]

    Q = model.spectral_density
    sqQ = None if np.allclose(Q, np.eye(q)) else sqrt_psd(Q)

    paths = np.empty((n, len(rec_idx), d))

    def run_chunk(p0, p1):
        c = p1 - p0
        rngs = [_path_rng(seed, p) for p in range(p0, p1)]
        if isinstance(initial, MomentState):
            S0 = sqrt_psd(initial.cov)
            Z = np.array([initial.mean + S0 @ r.standard_normal(d) for r in rngs])
        else:
            Z = np.tile(np.atleast_1d(np.asarray(initial, dtype=float)), (c, 1))
        noise = np.empty((c, steps, q))
        for i, r in enumerate(rngs):
            noise[i] = r.standard_normal((steps, q))
        if sqQ is not None:
            noise = noise @ sqQ.T
        rec_pos = {idx: j for j, idx in enumerate(rec_idx)}
        if 0 in rec_pos:
            paths[p0:p1, rec_pos[0]] = Z
        const_L = None
        if model.diffusion_constant:
            const_L = np.atleast_2d(np.asarray(model.diffusion(Z[0], times[0]), dtype=float))
        for k in range(steps):
            t, dt = times[k], times[k + 1] - times[k]
            F = model.drift_batch(Z, t)
            if const_L is not None:
                Z = Z + F * dt + np.sqrt(dt) * (noise[:, k] @ const_L.T)
            else:
                step_noise = np.empty_like(Z)
                for i in range(c):
                    L = np.atleast_2d(np.asarray(model.diffusion(Z[i], t), dtype=float))
                    step_noise[i] = L @ noise[i, k]
                Z = Z + F * dt + np.sqrt(dt) * step_noise
            if not np.all(np.isfinite(Z)):
                bad = int(np.argwhere(~np.isfinite(Z))[0, 0]) + p0
                raise DivergenceError(
                    f"path {bad} diverged at step {k}", step=k, path=bad)
            if k + 1 in rec_pos:
                paths[p0:p1, rec_pos[k + 1]] = Z

    bounds = list(range(0, n, _DEFAULT_CHUNK)) + [n]
    chunks = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda ab: run_chunk(*ab), chunks))
    else:
        for a, b in chunks:
            run_chunk(a, b)
    return Ensemble(times=rec_times, paths=paths, seed=seed)


def empirical_moments(ensemble: Ensemble, time_index: int) -> MomentState:
    """Sample mean and unbiased sample covariance across paths at one time."""
    if ensemble.n < 2:
        raise ValueError("need at least 2 paths for empirical moments")
    X = ensemble.paths[:, time_index, :]
    m = X.mean(axis=0)
    dev = X - m
    P = dev.T @ dev / (ensemble.n - 1)
    return MomentState(mean=m, cov=P)


def _initial_point(initial, d):
    if isinstance(initial, MomentState):
        return initial.mean
    return np.atleast_1d(np.asarray(initial, dtype=float))


def _grid_index(times, t, atol=1e-9):
    idx = int(np.argmin(np.abs(times - t)))
    if abs(times[idx] - t) > atol:
        raise ValueError(f"time {t} is not on the simulation grid")
    return idx
