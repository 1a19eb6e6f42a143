"""Finite-difference solver for the density evolution of an Ito SDE.

Discretizes the adjoint operator of the density PDE on a uniform rectangular
grid (1-D or 2-D) with central differences and Dirichlet zero boundaries,
then evolves p(t) either by a dense matrix exponential or by RK4 time
stepping of the linear system dp/dt = A p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.stats import norm

from .errors import CapacityError, DivergenceError, MassLeakageError
from .moments import MomentState
from .odeint import TimeGrid

_EXPM_MAX_NODES = 4096


@dataclass(frozen=True)
class GridSpec:
    dim: int
    lower: tuple
    upper: tuple
    n: tuple  # points per axis

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dim must be 1 or 2, got {self.dim}")
        for name in ("lower", "upper", "n"):
            if len(getattr(self, name)) != self.dim:
                raise ValueError(f"{name} must have {self.dim} entries")
        for a in range(self.dim):
            if self.n[a] < 3:
                raise ValueError("need at least 3 points per axis")
            if self.upper[a] <= self.lower[a]:
                raise ValueError("upper bound must exceed lower bound")

    @property
    def spacing(self) -> tuple:
        return tuple((self.upper[a] - self.lower[a]) / (self.n[a] - 1)
                     for a in range(self.dim))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.n))

    def axes(self):
        return [np.linspace(self.lower[a], self.upper[a], self.n[a])
                for a in range(self.dim)]

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, dim), row-major flattening."""
        if self.dim == 1:
            return self.axes()[0][:, None]
        g1, g2 = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([g1.ravel(), g2.ravel()])

    def trapezoid_weights(self) -> np.ndarray:
        ws = []
        for a in range(self.dim):
            w = np.full(self.n[a], self.spacing[a])
            w[0] *= 0.5
            w[-1] *= 0.5
            ws.append(w)
        if self.dim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1]).ravel()


@dataclass
class GridDensity:
    spec: GridSpec
    values: np.ndarray  # (n_nodes,)

    def mass(self) -> float:
        return float(self.spec.trapezoid_weights() @ self.values)


def assemble_operator(model, spec: GridSpec, t: float = 0.0) -> scipy.sparse.csr_matrix:
    """Central-difference matrix for the density evolution operator.

    Rows of boundary nodes are zero (Dirichlet: density pinned at 0 there).
    Drift enters as -sum_a d/dz_a [f_a p] and diffusion as
    (1/2) sum_ab d^2/dz_a dz_b [(L Q L^T)_ab p], both conservative (the model
    functions are evaluated at the neighbor node the stencil touches).
    """
    nodes = spec.nodes()
    d = spec.dim
    F = model.drift_batch(nodes, t)  # (n_nodes, d)
    Q = model.spectral_density
    D = np.empty((spec.n_nodes, d, d))
    for i, z in enumerate(nodes):
        L = np.atleast_2d(np.asarray(model.diffusion(z, t), dtype=float))
        D[i] = L @ Q @ L.T
        if model.diffusion_constant:
            D[:] = D[0]
            break

    h = spec.spacing
    shape = spec.n
    rows, cols, vals = [], [], []

    def flat(idx):
        if d == 1:
            return idx[0]
        return idx[0] * shape[1] + idx[1]

    if d == 1:
        interior = np.arange(1, shape[0] - 1)
        idx_sets = [(i,) for i in interior]
    else:
        ii, jj = np.meshgrid(np.arange(1, shape[0] - 1),
                             np.arange(1, shape[1] - 1), indexing="ij")
        idx_sets = list(zip(ii.ravel(), jj.ravel()))

    for idx in idx_sets:
        r = flat(idx)
        for a in range(d):
            e = [0] * d
            e[a] = 1
            plus = flat(tuple(idx[k] + e[k] for k in range(d)))
            minus = flat(tuple(idx[k] - e[k] for k in range(d)))
            # drift: -( (f_a p)(+) - (f_a p)(-) ) / (2 h_a)
            rows += [r, r]
            cols += [plus, minus]
            vals += [-F[plus, a] / (2 * h[a]), F[minus, a] / (2 * h[a])]
            # diagonal diffusion: ( (D_aa p)(+) - 2 (D_aa p)(.) + (D_aa p)(-) ) / (2 h_a^2)
            rows += [r, r, r]
            cols += [plus, r, minus]
            vals += [D[plus, a, a] / (2 * h[a]**2),
                     -2 * D[r, a, a] / (2 * h[a]**2),
                     D[minus, a, a] / (2 * h[a]**2)]
        if d == 2:
            # cross term d^2 (D_12 p) / dz1 dz2 with the 4-point stencil
            i, j = idx
            for s1, s2, sgn in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
                c = flat((i + s1, j + s2))
                rows.append(r)
                cols.append(c)
                vals.append(sgn * D[c, 0, 1] / (4 * h[0] * h[1]))

    A = scipy.sparse.coo_matrix((vals, (rows, cols)),
                                shape=(spec.n_nodes, spec.n_nodes))
    return A.tocsr()


def gaussian_init(m0, P0, spec: GridSpec) -> GridDensity:
    """Gaussian density sampled at the nodes and renormalized to unit mass.

    Errors out if more than 1e-4 of the Gaussian's mass lies outside the grid
    (checked via the axis marginals).
    """
    m0 = np.atleast_1d(np.asarray(m0, dtype=float))
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    d = spec.dim
    tail = 0.0
    for a in range(d):
        sd = np.sqrt(P0[a, a])
        if sd > 0:
            tail += norm.cdf(spec.lower[a], loc=m0[a], scale=sd)
            tail += norm.sf(spec.upper[a], loc=m0[a], scale=sd)
        elif not (spec.lower[a] <= m0[a] <= spec.upper[a]):
            tail += 1.0
    if tail > 1e-4:
        raise MassLeakageError(
            f"initial Gaussian has {tail:.2e} mass outside the grid; enlarge the grid",
            remaining_mass=1.0 - tail,
        )
    nodes = spec.nodes()
    dev = nodes - m0
    # allow degenerate (near-point-mass) covariances via a tiny floor
    P_eff = P0 + 1e-300 * np.eye(d)
    try:
        Pi = np.linalg.inv(P_eff)
        quad = np.einsum("ni,ij,nj->n", dev, Pi, dev)
        p = np.exp(-0.5 * quad)
    except np.linalg.LinAlgError:
        p = np.where(np.all(np.abs(dev) < np.min(spec.spacing) / 2, axis=1), 1.0, 0.0)
    w = spec.trapezoid_weights()
    total = p @ w
    if total <= 0:
        raise MassLeakageError("initial Gaussian vanished on the grid", remaining_mass=0.0)
    return GridDensity(spec=spec, values=p / total)


class EvolveMethod:
    MATRIX_EXP = "expm"
    RK4 = "rk4"


def evolve(A, p0: GridDensity, t: float, method: str = EvolveMethod.MATRIX_EXP,
           dt: float = None) -> GridDensity:
    """Evolve the density for duration t under dp/dt = A p."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return GridDensity(spec=p0.spec, values=p0.values.copy())
    if method == EvolveMethod.MATRIX_EXP:
        n = p0.spec.n_nodes
        if n > _EXPM_MAX_NODES:
            raise CapacityError(
                f"dense matrix exponential capped at {_EXPM_MAX_NODES} nodes "
                f"(grid has {n}); use RK4 time stepping"
            )
        dense = A.toarray() if scipy.sparse.issparse(A) else np.asarray(A)
        p = scipy.linalg.expm(dense * t) @ p0.values
    elif method == EvolveMethod.RK4:
        if dt is None or dt <= 0:
            raise ValueError("RK4 evolution needs a positive dt")
        p = p0.values.copy()
        times = TimeGrid(0.0, t, dt).times()
        for k in range(len(times) - 1):
            step = times[k + 1] - times[k]
            k1 = A @ p
            k2 = A @ (p + step / 2 * k1)
            k3 = A @ (p + step / 2 * k2)
            k4 = A @ (p + step * k3)
            p = p + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(p)):
                raise DivergenceError(
                    f"density diverged at step {k}; dt={dt} exceeds the "
                    "stencil's stability bound", step=k)
    else:
        raise ValueError(f"unknown evolution method {method!r}")
    return GridDensity(spec=p0.spec, values=np.clip(p, 0.0, None))


def grid_moments(p: GridDensity) -> MomentState:
    """Mean/covariance of the grid density by trapezoidal quadrature."""
    w = p.spec.trapezoid_weights()
    mass = float(w @ p.values)
    if mass < 0.5:
        raise MassLeakageError(
            f"only {mass:.3f} probability mass left on the grid", remaining_mass=mass)
    nodes = p.spec.nodes()
    pw = w * p.values
    mean = (pw @ nodes) / mass
    dev = nodes - mean
    cov = (dev.T * pw) @ dev / mass
    return MomentState(mean=mean, cov=(cov + cov.T) / 2.0)
