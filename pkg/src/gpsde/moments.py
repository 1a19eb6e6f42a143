"""Gaussian assumed-density moment propagation.

Propagates a mean/covariance pair (m, P) through an Ito SDE by integrating
moment ODEs, either linearized around the mean (drift Jacobian form) or
moment-matched with sigma-point quadrature. Also home to the PSD
square-root used everywhere a Cholesky-like factor is needed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from scipy.linalg.lapack import dpotrf as _dpotrf

from .errors import CapacityError, DivergenceError, StabilityError
from .odeint import Method, TimeGrid

_SYM_TOL = 1e-10
_EIG_FLOOR = -1e-8


@dataclass
class MomentState:
    """Mean vector and symmetric PSD covariance at one time point."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"cov must be ({d},{d}), got {self.cov.shape}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def validate(self):
        if np.max(np.abs(self.cov - self.cov.T)) > _SYM_TOL:
            raise ValueError("covariance is not symmetric within tolerance")
        if np.min(np.linalg.eigvalsh(self.cov)) < _EIG_FLOOR:
            raise ValueError("covariance has eigenvalue below the PSD floor")


@dataclass(frozen=True)
class QuadratureRule:
    """Unit-space sigma points and weights (zero mean, identity covariance)."""

    points: np.ndarray  # (n_points, d)
    weights: np.ndarray  # (n_points,)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class EvalCounts:
    """Tallies of model-function evaluation points."""

    drift: int = 0
    diffusion: int = 0
    jacobian: int = 0

    def as_tuple(self):
        return (self.drift, self.diffusion, self.jacobian)


@dataclass
class MomentTrajectory:
    times: np.ndarray
    states: list  # list[MomentState]
    eval_counts: list  # list[EvalCounts], one per accepted step

    def totals(self) -> EvalCounts:
        tot = EvalCounts()
        for c in self.eval_counts:
            tot.drift += c.drift
            tot.diffusion += c.diffusion
            tot.jacobian += c.jacobian
        return tot

    def at_time(self, t: float, atol: float = 1e-9) -> MomentState:
        idx = np.argmin(np.abs(self.times - t))
        if abs(self.times[idx] - t) > atol:
            raise ValueError(f"trajectory has no state at t={t}")
        return self.states[idx]


def sqrt_psd(P: np.ndarray, jitter: float = 1e-10) -> np.ndarray:
    """Lower-triangular S with S @ S.T = P for symmetric PSD P.

    Tries Cholesky directly, then up to 3 retries with a jitter ladder
    (jitter * trace(P)/d on the diagonal, growing 10x), and finally falls
    back to an eigendecomposition with negative eigenvalues clamped to zero,
    re-triangularized via LQ so the factor is always lower-triangular.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if np.max(np.abs(P - P.T)) > max(_SYM_TOL, 1e-10 * np.max(np.abs(P), initial=1.0)):
        raise ValueError("sqrt_psd requires a symmetric matrix")
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    d = P.shape[0]
    scale = np.trace(P) / d
    level = jitter * scale
    for attempt in range(4):
        bump = 0.0 if attempt == 0 else level
        try:
            return np.linalg.cholesky(P + bump * np.eye(d))
        except np.linalg.LinAlgError:
            if attempt > 0:
                level *= 10.0
    w, V = np.linalg.eigh((P + P.T) / 2.0)
    w = np.clip(w, 0.0, None)
    B = V * np.sqrt(w)
    # LQ: B = L Q with Q orthogonal, so L L^T = B B^T = P (clamped)
    q, r = np.linalg.qr(B.T)
    L = r.T
    sign = np.sign(np.diag(L))
    sign[sign == 0] = 1.0
    return L * sign


def cubature_rule(d: int) -> QuadratureRule:
    """Symmetric 3rd-order cubature: 2d points +-sqrt(d)*e_i, weights 1/(2d)."""
    if d < 1:
        raise ValueError("d must be positive")
    eye = np.eye(d)
    pts = np.vstack([math.sqrt(d) * eye, -math.sqrt(d) * eye])
    w = np.full(2 * d, 1.0 / (2 * d))
    rule = QuadratureRule(points=pts, weights=w)
    # the +-sqrt(d) e_i structure admits gemm-free sigma points
    object.__setattr__(rule, "coordinate_scaled", math.sqrt(d))
    object.__setattr__(rule, "weight_sum", float(w.sum()))
    return rule


def gauss_hermite_rule(d: int, order: int) -> QuadratureRule:
    """Tensor-product Gauss-Hermite rule with p^d points in unit-variance form."""
    if order < 1 or order > 10:
        raise ValueError("order must be in [1, 10]")
    n_pts = order**d
    if n_pts > 10**6:
        raise CapacityError(
            f"Gauss-Hermite tensor grid has {order}^{d} points; "
            "use cubature_rule for this dimensionality"
        )
    x1, w1 = np.polynomial.hermite_e.hermegauss(order)
    w1 = w1 / w1.sum()
    pts = np.array(list(itertools.product(x1, repeat=d)))
    w = np.prod(np.array(list(itertools.product(w1, repeat=d))), axis=1)
    rule = QuadratureRule(points=pts, weights=w)
    object.__setattr__(rule, "weight_sum", float(w.sum()))
    return rule


def _fd_jacobian(drift, z, t):
    """Central-difference drift Jacobian fallback."""
    d = z.shape[0]
    h = 1e-5 * max(1.0, float(np.linalg.norm(z)))
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (np.asarray(drift(z + e, t)) - np.asarray(drift(z - e, t))) / (2 * h)
    return J


def linearized_rhs(model, state: MomentState, t: float, counts: EvalCounts | None = None):
    """Moment derivatives under local linearization around the mean.

    dm = f(m, t); dP = P F^T + F P + L Q L^T with F the drift Jacobian at m.
    Tallies one drift, one diffusion and one Jacobian evaluation.
    """
    m, P = state.mean, state.cov
    dm = np.asarray(model.drift(m, t), dtype=float)
    if model.jacobian is not None:
        F = np.asarray(model.jacobian(m, t), dtype=float)
    else:
        F = _fd_jacobian(model.drift, m, t)
    if model.diffusion_constant:
        noise_cov = model.constant_noise_cov(t)
    else:
        L = np.atleast_2d(np.asarray(model.diffusion(m, t), dtype=float))
        noise_cov = L @ model.spectral_density @ L.T
    B = F @ P  # P F^T + F P = B^T + B for symmetric P
    dP = B + B.T + noise_cov
    if counts is not None:
        counts.drift += 1
        counts.diffusion += 1
        counts.jacobian += 1
    return dm, (dP + dP.T) / 2.0


def matched_rhs(model, state: MomentState, t: float, rule: QuadratureRule,
                counts: EvalCounts | None = None):
    """Moment derivatives by sigma-point moment matching.

    Sigma points are m + S xi_i with S = sqrt_psd(P). Tallies one drift and
    one diffusion evaluation per sigma point (2d each for the cubature rule),
    and no Jacobian evaluations.
    """
    m, P = state.mean, state.cov
    d = m.shape[0]
    c, info = _dpotrf(P, lower=1, clean=1)
    S = c if info == 0 else sqrt_psd(P)
    scale = getattr(rule, "coordinate_scaled", None)
    if scale is not None:
        # sigma deviations are +-scale * columns of S; no gemm needed
        half = scale * S.T
        dev = np.concatenate([half, -half])
    else:
        dev = rule.points @ S.T  # (n_pts, d), rows S @ xi_i
    sigma = m + dev
    w = rule.weights
    if model.drift_vectorized:
        F = model.drift(sigma, t)  # (n_pts, d)
    else:
        F = model.drift_batch(sigma, t)
    dm = w @ F
    if scale is not None:
        # sum_i w_i f_i (S xi_i)^T collapses to one (d, d) product
        G = F[:d] - F[d:]
        cross = (scale * w[0]) * (G.T @ S.T)
        dP = cross + cross.T  # exactly symmetric elementwise
        if model.diffusion_constant:
            ws = getattr(rule, "weight_sum", None)
            if ws is None:
                ws = float(np.sum(w))
            dP += ws * model.constant_noise_cov(t)
        else:
            dP = dP + model.diffusion_quad(sigma, t, w)
            dP = (dP + dP.T) / 2.0
    else:
        cross = F.T @ (w[:, None] * dev)
        dP = cross + cross.T + model.diffusion_quad(sigma, t, w)
        dP = (dP + dP.T) / 2.0
    if counts is not None:
        counts.drift += rule.points.shape[0]
        counts.diffusion += rule.points.shape[0]
    return dm, dP


class Scheme:
    """Moment-ODE right-hand-side selector."""

    LINEARIZED = "linearized"
    MATCHED = "matched"


def _pack(m, P):
    return np.concatenate([m, P.ravel()])


def _unpack(x, d):
    return x[:d], x[d:].reshape(d, d)


def propagate(model, m0, P0, grid: TimeGrid, scheme: str = Scheme.MATCHED,
              method: str = Method.RK4, rule: QuadratureRule | None = None) -> MomentTrajectory:
    """Integrate the moment ODEs over a time grid.

    The (m, P) pair is flattened into a (d + d^2)-vector; P is re-symmetrized
    after every accepted step and checked against the PSD floor. Evaluation
    tallies are recorded per step.
    """
    state0 = MomentState(mean=m0, cov=P0)
    d = state0.dim
    if scheme == Scheme.MATCHED and rule is None:
        rule = cubature_rule(d)

    def moment_rhs(t, st, counts):
        if scheme == Scheme.LINEARIZED:
            return linearized_rhs(model, st, t, counts)
        if scheme == Scheme.MATCHED:
            return matched_rhs(model, st, t, rule, counts)
        raise ValueError(f"unknown scheme {scheme!r}")

    def rhs_flat(t, x, counts):
        st = MomentState.__new__(MomentState)
        st.mean, st.cov = _unpack(x, d)
        st.cov = (st.cov + st.cov.T) / 2.0
        dm, dP = moment_rhs(t, st, counts)
        return _pack(dm, dP)

    times = grid.times()
    m, P = state0.mean.copy(), state0.cov.copy()
    states = [MomentState(mean=m.copy(), cov=P.copy())]
    per_step = []

    if (method == Method.EULER and scheme == Scheme.LINEARIZED
            and model.diffusion_constant and model.jacobian is not None):
        # Tight loop for the Jacobian form with constant diffusion; the
        # covariance update is symmetric to within one rounding error per
        # entry and step, so no per-step re-symmetrization is needed.
        P = (P + P.T) / 2.0
        noise = model.constant_noise_cov(times[0])
        noise = (noise + noise.T) / 2.0
        drift, jac = model.drift, model.jacobian
        # all steps share one (immutable by convention) tally record
        counts = EvalCounts(drift=1, diffusion=1, jacobian=1)
        for k in range(len(times) - 1):
            t = times[k]
            dt = times[k + 1] - times[k]
            F = jac(m, t)
            B = dt * (F @ P)  # P F^T + F P = B^T + B for symmetric P
            m = m + dt * np.asarray(drift(m, t), dtype=float)
            Pn = P + dt * noise
            Pn += B
            Pn += B.T
            P = Pn
            if not math.isfinite(m.sum() + P.sum()):
                raise DivergenceError(f"non-finite moment state after step {k}", step=k)
            _, info = _dpotrf(P, lower=1)
            if info != 0:
                lam_min = np.min(np.linalg.eigvalsh(P))
                if lam_min < -1e-6:
                    raise StabilityError(
                        f"covariance lost PSD (min eigenvalue {lam_min:.3e}) "
                        f"at t={times[k + 1]:.6g}",
                        time=times[k + 1],
                    )
            st = MomentState.__new__(MomentState)
            st.mean, st.cov = m, P
            states.append(st)
            per_step.append(counts)
        return MomentTrajectory(times=times, states=states, eval_counts=per_step)

    scale = getattr(rule, "coordinate_scaled", None) if rule is not None else None
    if (method == Method.EULER and scheme == Scheme.MATCHED
            and scale is not None and model.diffusion_constant):
        # Tight loop for the common cubature + Euler + constant-diffusion
        # case: the end-of-step PSD factorization doubles as the next
        # step's sigma-point factor, and the covariance update stays
        # symmetric to within one rounding error per entry and step, so P
        # needs no per-step re-symmetrization.
        P = (P + P.T) / 2.0
        d2 = 2 * d
        w = rule.weights
        ws = getattr(rule, "weight_sum", None)
        if ws is None:
            ws = float(np.sum(w))
        noise = ws * model.constant_noise_cov(times[0])
        noise = (noise + noise.T) / 2.0
        drift = model.drift
        vectorized = model.drift_vectorized
        c, info = _dpotrf(P, lower=1, clean=1)
        # all steps share one (immutable by convention) tally record
        counts = EvalCounts(drift=d2, diffusion=d2)
        for k in range(len(times) - 1):
            t = times[k]
            dt = times[k + 1] - times[k]
            S = c if info == 0 else sqrt_psd(P)
            half = scale * S.T
            sigma = m + np.concatenate([half, -half])
            if vectorized:
                F = drift(sigma, t)
            else:
                F = model.drift_batch(sigma, t)
            m = m + dt * (w @ F)
            G = F[:d] - F[d:]
            cross = (dt * scale * w[0]) * (G.T @ S.T)
            Pn = P + dt * noise
            Pn += cross
            Pn += cross.T
            P = Pn
            if not math.isfinite(m.sum() + P.sum()):
                raise DivergenceError(f"non-finite moment state after step {k}", step=k)
            c, info = _dpotrf(P, lower=1, clean=1)
            if info != 0:
                lam_min = np.min(np.linalg.eigvalsh(P))
                if lam_min < -1e-6:
                    raise StabilityError(
                        f"covariance lost PSD (min eigenvalue {lam_min:.3e}) "
                        f"at t={times[k + 1]:.6g}",
                        time=times[k + 1],
                    )
            st = MomentState.__new__(MomentState)
            st.mean, st.cov = m, P
            states.append(st)
            per_step.append(counts)
        return MomentTrajectory(times=times, states=states, eval_counts=per_step)

    scratch = MomentState.__new__(MomentState)
    for k in range(len(times) - 1):
        t, dt = times[k], times[k + 1] - times[k]
        counts = EvalCounts()
        if method == Method.EULER:
            scratch.mean, scratch.cov = m, P
            dm, dP = moment_rhs(t, scratch, counts)
            m = m + dt * dm
            P = P + dt * dP
        else:
            from .odeint import step_rk4
            x = step_rk4(lambda tt, xx: rhs_flat(tt, xx, counts),
                         _pack(m, P), t, dt)
            m, P = _unpack(x, d)
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(P))):
            raise DivergenceError(f"non-finite moment state after step {k}", step=k)
        P = (P + P.T) / 2.0
        # PSD floor check; Cholesky success implies PSD, so the eigenvalue
        # computation only runs on the failure path
        _, info = _dpotrf(P, lower=1)
        if info != 0:
            lam_min = np.min(np.linalg.eigvalsh(P))
            if lam_min < -1e-6:
                raise StabilityError(
                    f"covariance lost PSD (min eigenvalue {lam_min:.3e}) "
                    f"at t={times[k + 1]:.6g}",
                    time=times[k + 1],
                )
        states.append(MomentState(mean=m, cov=P))
        per_step.append(counts)
    return MomentTrajectory(times=times, states=states, eval_counts=per_step)
