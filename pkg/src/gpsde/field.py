"""Multi-output GP posterior over a velocity field.

Conditioned on derivative observations {(z_i, dz_i)}, supplies the posterior
mean (drift), a square-root of the posterior covariance (diffusion), the mean
Jacobian, and path-consistent field samples for the random-ODE view.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import FactorizationError
from .kernels import KernelKind, KernelSpec, cross_cov, eval_kernel, gram
from .moments import sqrt_psd


@dataclass
class VectorFieldObservations:
    inputs: np.ndarray       # (n, d)
    derivatives: np.ndarray  # (n, d)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.derivatives = np.atleast_2d(np.asarray(self.derivatives, dtype=float))
        if self.inputs.shape != self.derivatives.shape:
            raise ValueError(
                f"inputs {self.inputs.shape} and derivatives "
                f"{self.derivatives.shape} must have matching shapes"
            )
        if self.inputs.shape[0] < 1:
            raise ValueError("need at least one observation")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @classmethod
    def from_csv(cls, path) -> "VectorFieldObservations":
        """Load from CSV with header columns z_1..z_d, dz_1..dz_d."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            z_cols = [i for i, h in enumerate(header) if h.strip().startswith("z_")]
            dz_cols = [i for i, h in enumerate(header) if h.strip().startswith("dz_")]
            if not z_cols or len(z_cols) != len(dz_cols):
                raise ValueError(
                    f"expected matching z_* and dz_* columns, got header {header}"
                )
            rows = [r for r in reader if r]
        data = np.array(rows, dtype=float)
        return cls(inputs=data[:, z_cols], derivatives=data[:, dz_cols])


@dataclass
class PosteriorField:
    spec: KernelSpec
    nugget: float
    observations: VectorFieldObservations
    gram_factor: np.ndarray   # lower-triangular Cholesky of K + nugget*I
    dual_weights: np.ndarray  # (K + nugget*I)^{-1} (y - prior_mean)
    prior_mean: np.ndarray    # constant mean, (d,)

    @property
    def dim(self) -> int:
        return self.spec.dim

    def posterior_mean(self, z: np.ndarray) -> np.ndarray:
        Ks = cross_cov(self.spec, np.asarray(z, dtype=float), self.observations.inputs)
        return self.prior_mean + Ks @ self.dual_weights

    def posterior_cov(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        Ks = cross_cov(self.spec, z, self.observations.inputs)
        V = scipy.linalg.solve_triangular(self.gram_factor, Ks.T, lower=True)
        C = eval_kernel(self.spec, z, z) - V.T @ V
        C = (C + C.T) / 2.0
        w, U = np.linalg.eigh(C)
        if w[0] < 0:
            w = np.clip(w, 0.0, None)
            C = (U * w) @ U.T
            C = (C + C.T) / 2.0
        return C

    def drift_diffusion(self, z: np.ndarray):
        f = self.posterior_mean(z)
        L = sqrt_psd(self.posterior_cov(z))
        return f, L

    def mean_jacobian(self, z: np.ndarray) -> np.ndarray:
        """Jacobian of the posterior mean; analytic for the RBF kernel,
        central differences otherwise."""
        z = np.asarray(z, dtype=float)
        d = self.dim
        if self.spec.kind is KernelKind.INDEPENDENT_RBF:
            ell = self.spec.hyperparams.lengthscale
            var = self.spec.hyperparams.variance
            X = self.observations.inputs
            diff = z - X  # (n, d)
            k = var * np.exp(-np.sum(diff**2, axis=1) / (2 * ell**2))  # (n,)
            alpha = self.dual_weights.reshape(self.observations.n, d)
            # mean_a(z) = sum_i k(z, x_i) alpha_{i,a}
            # d mean_a / d z_b = sum_i -(z_b - x_ib)/ell^2 k_i alpha_{i,a}
            return -(alpha.T @ (k[:, None] * diff)) / ell**2
        h = 1e-5 * max(1.0, float(np.linalg.norm(z)))
        J = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            J[:, j] = (self.posterior_mean(z + e) - self.posterior_mean(z - e)) / (2 * h)
        return J

    def sample_path_field(self, z0, dt: float, T: float, seed: int):
        """Euler path through one self-consistent sample of the velocity field.

        Each step draws a velocity from the posterior conditioned on the data
        plus all previously sampled (z, v) pairs of this path, then advances
        z <- z + v dt. Deterministic given the seed.
        """
        if dt > T:
            raise ValueError("need dt <= T")
        rng = np.random.default_rng(seed)
        z = np.atleast_1d(np.asarray(z0, dtype=float)).copy()
        d = self.dim
        aug_in = [x for x in self.observations.inputs]
        aug_y = [y for y in self.observations.derivatives]
        out = [(0.0, z.copy())]
        t = 0.0
        while t < T - 1e-12:
            step = min(dt, T - t)
            fld = _fit_points(np.array(aug_in), np.array(aug_y), self.spec,
                              self.nugget, self.prior_mean, jitter_retry=True)
            mean = fld.posterior_mean(z)
            cov = fld.posterior_cov(z)
            v = mean + sqrt_psd(cov) @ rng.standard_normal(d)
            aug_in.append(z.copy())
            aug_y.append(v.copy())
            z = z + v * step
            t += step
            out.append((t, z.copy()))
        return out


def _fit_points(X, Y, spec, nugget, prior_mean, jitter_retry=False):
    K = gram(spec, X, nugget)
    try:
        chol = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        if jitter_retry:
            try:
                chol = np.linalg.cholesky(K + 1e-8 * np.eye(K.shape[0]))
            except np.linalg.LinAlgError:
                raise FactorizationError(
                    "Gram matrix not positive definite even with 1e-8 jitter; "
                    f"smallest eigenvalue {np.min(np.linalg.eigvalsh(K)):.3e}",
                    smallest_pivot=float(np.min(np.linalg.eigvalsh(K))),
                ) from None
        else:
            piv = float(np.min(np.linalg.eigvalsh(K)))
            raise FactorizationError(
                f"Gram matrix not positive definite (smallest pivot {piv:.3e}); "
                "retry with a larger nugget",
                smallest_pivot=piv,
            ) from None
    y = (Y - prior_mean).ravel()
    alpha = scipy.linalg.cho_solve((chol, True), y)
    return PosteriorField(spec=spec, nugget=nugget,
                          observations=VectorFieldObservations(X, Y),
                          gram_factor=chol, dual_weights=alpha,
                          prior_mean=np.asarray(prior_mean, dtype=float))


def fit(obs: VectorFieldObservations, spec: KernelSpec, nugget: float,
        prior_mean=None) -> PosteriorField:
    """Condition the GP field on observations; factorizes the Gram matrix once."""
    if nugget < 0:
        raise ValueError("nugget must be nonnegative")
    if obs.dim != spec.dim:
        raise ValueError(f"observations have dim {obs.dim}, kernel expects {spec.dim}")
    if prior_mean is None:
        prior_mean = np.zeros(spec.dim)
    prior_mean = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    return _fit_points(obs.inputs, obs.derivatives, spec, nugget, prior_mean)
