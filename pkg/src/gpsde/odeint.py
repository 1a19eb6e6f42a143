"""Deterministic fixed-step ODE integration (Euler and classical RK4).

Grids land exactly on the requested end time: the step count is
ceil((t1 - t0)/dt) and the final step is shortened if needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError


class Method:
    EULER = "euler"
    RK4 = "rk4"


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    dt: float

    def __post_init__(self):
        if self.t1 <= self.t0:
            raise ValueError(f"need t1 > t0, got [{self.t0}, {self.t1}]")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def n_steps(self) -> int:
        span = self.t1 - self.t0
        n = math.ceil(span / self.dt - 1e-12)
        return max(n, 1)

    def times(self) -> np.ndarray:
        t = self.t0 + self.dt * np.arange(self.n_steps + 1)
        t[-1] = self.t1
        return t


def step_euler(rhs, x, t, dt):
    return x + dt * np.asarray(rhs(t, x))


def step_rk4(rhs, x, t, dt):
    k1 = np.asarray(rhs(t, x))
    k2 = np.asarray(rhs(t + dt / 2, x + dt / 2 * k1))
    k3 = np.asarray(rhs(t + dt / 2, x + dt / 2 * k2))
    k4 = np.asarray(rhs(t + dt, x + dt * k3))
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


_STEPPERS = {Method.EULER: step_euler, Method.RK4: step_rk4}


def integrate(rhs, x0, grid: TimeGrid, method: str = Method.RK4, observer=None):
    """Integrate ``dx/dt = rhs(t, x)`` over the grid.

    Returns a list of ``(t, x)`` at every grid time including both endpoints.
    ``observer(t, x)`` is invoked once per accepted step. Raises
    ``DivergenceError`` if the state goes non-finite.
    """
    try:
        stepper = _STEPPERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}") from None
    times = grid.times()
    x = np.array(x0, dtype=float)
    out = [(times[0], x.copy())]
    for k in range(len(times) - 1):
        x = stepper(rhs, x, times[k], times[k + 1] - times[k])
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state after step {k}", step=k)
        if observer is not None:
            observer(times[k + 1], x)
        out.append((times[k + 1], x.copy()))
    return out
