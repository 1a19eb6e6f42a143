"""Uniform Ito SDE model abstraction: dz = f(z,t) dt + L(z,t) dbeta(t).

Concrete constructors cover the hyperbolic-tangent benchmark model
(``make_benes``), linear systems (``make_linear``) and GP-posterior vector
fields (``make_gp_sde``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class SdeModel:
    dim: int
    drift: Callable  # (z, t) -> (d,)
    diffusion: Callable  # (z, t) -> (d, q)
    jacobian: Optional[Callable] = None  # (z, t) -> (d, d)
    spectral_density: np.ndarray = None  # (q, q), default identity
    # drift accepts (k, d) batches and returns (k, d)
    drift_vectorized: bool = False
    # diffusion is independent of (z, t); enables batched fast paths
    diffusion_constant: bool = False
    z0: Optional[np.ndarray] = None  # initial-state metadata for oracles
    name: str = "sde"

    def __post_init__(self):
        if self.spectral_density is None:
            self.spectral_density = np.eye(self.dim)
        self.spectral_density = np.atleast_2d(np.asarray(self.spectral_density, dtype=float))

    def drift_batch(self, Z: np.ndarray, t: float) -> np.ndarray:
        """Drift at a batch of points, shape (k, d) -> (k, d)."""
        Z = np.atleast_2d(Z)
        if self.drift_vectorized:
            return np.asarray(self.drift(Z, t), dtype=float)
        return np.array([self.drift(z, t) for z in Z], dtype=float)

    def constant_noise_cov(self, t: float = 0.0) -> np.ndarray:
        """Cached L Q L^T for constant-diffusion models."""
        if not self.diffusion_constant:
            raise ValueError("model diffusion is state-dependent")
        cached = getattr(self, "_lqlt", None)
        if cached is None:
            L = np.atleast_2d(np.asarray(
                self.diffusion(np.zeros(self.dim), t), dtype=float))
            cached = L @ self.spectral_density @ L.T
            cached = (cached + cached.T) / 2.0  # exactly symmetric cache
            object.__setattr__(self, "_lqlt", cached)
        return cached

    def diffusion_quad(self, Z: np.ndarray, t: float, weights: np.ndarray) -> np.ndarray:
        """Weighted sum_i w_i L(z_i,t) Q L(z_i,t)^T over a batch of points."""
        Q = self.spectral_density
        if self.diffusion_constant:
            return float(np.sum(weights)) * self.constant_noise_cov(t)
        acc = np.zeros((self.dim, self.dim))
        for w, z in zip(weights, np.atleast_2d(Z)):
            L = np.atleast_2d(np.asarray(self.diffusion(z, t), dtype=float))
            acc += w * (L @ Q @ L.T)
        return acc


def make_benes(d: int, z0) -> SdeModel:
    """d independent scalar SDEs dz = tanh(z) dt + dbeta; Jacobian in closed form."""
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    if z0.shape != (d,):
        raise ValueError(f"z0 must have length {d}, got shape {z0.shape}")
    eye = np.eye(d)

    def drift(z, t):
        return np.tanh(z)

    def diffusion(z, t):
        return eye

    def jacobian(z, t):
        return np.diag(1.0 - np.tanh(np.asarray(z))**2)

    return SdeModel(dim=d, drift=drift, diffusion=diffusion, jacobian=jacobian,
                    drift_vectorized=True, diffusion_constant=True, z0=z0, name="benes")


def make_linear(A: np.ndarray, L: np.ndarray) -> SdeModel:
    """Linear SDE dz = A z dt + L dbeta with constant diffusion."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d):
        raise ValueError(f"A must be square, got {A.shape}")
    if L.shape[0] != d:
        raise ValueError(f"L must have {d} rows, got {L.shape}")
    q = L.shape[1]

    def drift(z, t):
        return z @ A.T  # works for (d,) and batched (k, d)

    def diffusion(z, t):
        return L

    def jacobian(z, t):
        return A

    return SdeModel(dim=d, drift=drift, diffusion=diffusion, jacobian=jacobian,
                    spectral_density=np.eye(q), drift_vectorized=True,
                    diffusion_constant=True, name="linear")


def make_gp_sde(field) -> SdeModel:
    """SDE whose drift/diffusion come from a fitted GP posterior vector field."""

    def drift(z, t):
        return field.posterior_mean(z)

    def diffusion(z, t):
        _, L = field.drift_diffusion(z)
        return L

    def jacobian(z, t):
        return field.mean_jacobian(z)

    return SdeModel(dim=field.dim, drift=drift, diffusion=diffusion,
                    jacobian=jacobian, name="gp")
