"""Closed-form ground truth for the tanh-drift benchmark SDE, Gaussian KL
metrics, and the KL-matched trajectory-count search used by the benchmark."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import CapacityError
from .ensemble import empirical_moments, simulate
from .moments import MomentState, MomentTrajectory
from .odeint import TimeGrid


@dataclass(frozen=True)
class BenesSpec:
    """d independent tanh-drift SDEs with per-dimension start points."""
    dim: int
    z0: np.ndarray

    @classmethod
    def linspaced(cls, d: int) -> "BenesSpec":
        # start points linearly spaced over [0, 1] with step 1/d
        return cls(dim=d, z0=np.arange(d) / d if d > 1 else np.array([0.0]))


def benes_density(z, t: float, z0: float):
    """Transition density of dz = tanh(z) dt + dbeta from z0 at time t > 0."""
    if t <= 0:
        raise ValueError("density requires t > 0")
    z = np.asarray(z, dtype=float)
    return (1.0 / np.sqrt(2 * np.pi * t)
            * np.cosh(z) / np.cosh(z0)
            * np.exp(-0.5 * t)
            * np.exp(-(z - z0)**2 / (2 * t)))


def benes_moments(t: float, z0: float):
    """Closed-form first two moments of the scalar tanh-drift SDE."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    m = z0 + math.tanh(z0) * t
    P = z0**2 + 2 * z0 * math.tanh(z0) * t + t + t**2 - m**2
    return m, P


def benes_truth(spec: BenesSpec):
    """Vector-valued truth t -> (m, P) for the independent product model."""

    def truth(t):
        ms = np.array([benes_moments(t, z) for z in spec.z0])
        return ms[:, 0], np.diag(ms[:, 1])

    return truth


def gauss_kl(m1, P1, m2, P2) -> float:
    """KL( N(m1,P1) || N(m2,P2) ). Returns inf for singular P1; raises for
    singular P2."""
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    P1 = np.atleast_2d(np.asarray(P1, dtype=float))
    P2 = np.atleast_2d(np.asarray(P2, dtype=float))
    d = m1.shape[0]
    try:
        chol2 = scipy.linalg.cho_factor(P2, lower=True)
    except scipy.linalg.LinAlgError:
        raise ValueError("second covariance must be positive definite") from None
    sign1, logdet1 = np.linalg.slogdet(P1)
    if sign1 <= 0:
        return float("inf")
    logdet2 = 2.0 * np.sum(np.log(np.diag(chol2[0])))
    diff = m2 - m1
    tr = np.trace(scipy.linalg.cho_solve(chol2, P1))
    quad = diff @ scipy.linalg.cho_solve(chol2, diff)
    return 0.5 * (tr + quad - d + logdet2 - logdet1)


def total_kl(trajectory, truth, times) -> float:
    """Sum of Gaussian KL divergences (approx || truth) over the given times.

    ``trajectory`` is either a MomentTrajectory or a callable t -> (m, P).
    """
    if isinstance(trajectory, MomentTrajectory):
        def approx(t):
            st = trajectory.at_time(t)
            return st.mean, st.cov
    else:
        approx = trajectory
    total = 0.0
    for t in times:
        m1, P1 = approx(t)
        m2, P2 = truth(t)
        total += gauss_kl(m1, P1, m2, P2)
    return total


def em_moment_kl(model, z0, n: int, grid: TimeGrid, seed: int, truth, times) -> float:
    """Total KL of Euler-Maruyama empirical moments against the truth."""
    ens = simulate(model, z0, n=n, grid=grid, seed=seed, record_times=times)

    def approx(t):
        idx = int(np.argmin(np.abs(ens.times - t)))
        st = empirical_moments(ens, idx)
        return st.mean, st.cov

    return total_kl(approx, truth, times)


def match_trajectories(model, truth, grid: TimeGrid, target_kl: float,
                       repeats: int = 10, seeds=None, z0=None,
                       n_floor: int = 4, n_cap: int = 10**6):
    """Smallest trajectory count whose mean EM total-KL beats the target.

    Doubles n from the floor until the mean KL over ``repeats`` independent
    ensembles is <= target_kl, then bisects down to the smallest passing n.
    Returns (n, kl_mean, kl_std) for the matched n.
    """
    if target_kl <= 0:
        raise ValueError("target_kl must be positive")
    if seeds is None:
        seeds = list(range(repeats))
    if z0 is None:
        z0 = model.z0
    times = grid.times()[1:]

    stats = {}

    def mean_kl(n):
        if n not in stats:
            kls = np.array([em_moment_kl(model, z0, n, grid, s, truth, times)
                            for s in seeds])
            stats[n] = (float(np.mean(kls)), float(np.std(kls)))
        return stats[n][0]

    n = n_floor
    best = None
    while mean_kl(n) > target_kl:
        if n >= n_cap:
            raise CapacityError(
                f"trajectory count exceeded cap {n_cap}; best mean KL "
                f"{stats[n][0]:.4g} vs target {target_kl:.4g}")
        n = min(2 * n, n_cap)
    best = n
    lo = max(n_floor, n // 2)
    hi = n
    # invariant: hi passes; lo is either the floor or a failing count
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mean_kl(mid) <= target_kl:
            hi = mid
            best = mid
        else:
            lo = mid
    if lo == n_floor and mean_kl(n_floor) <= target_kl:
        best = n_floor
    return best, stats[best][0], stats[best][1]
