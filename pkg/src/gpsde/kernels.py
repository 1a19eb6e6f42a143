"""Matrix-valued covariance functions for multi-output GP vector fields.

Three stationary kernels are provided: independent squared-exponential (RBF)
per output dimension, a curl-free kernel and a divergence-free kernel. Every
evaluation returns a d x d block; Gram matrices stack these blocks
point-major, so row/column index ``i*d + a`` corresponds to output dimension
``a`` at input point ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class KernelKind(str, Enum):
    INDEPENDENT_RBF = "IndependentRBF"
    CURL_FREE = "CurlFree"
    DIVERGENCE_FREE = "DivergenceFree"


@dataclass(frozen=True)
class KernelHyperparams:
    lengthscale: float
    variance: float

    def __post_init__(self):
        if self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if self.variance <= 0:
            raise ValueError(f"variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind
    dim: int
    hyperparams: KernelHyperparams

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if self.kind in (KernelKind.CURL_FREE, KernelKind.DIVERGENCE_FREE) and self.dim < 2:
            raise ValueError(f"{self.kind.value} kernel requires dim >= 2, got dim={self.dim}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "dim": self.dim,
            "lengthscale": self.hyperparams.lengthscale,
            "variance": self.hyperparams.variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(
            kind=KernelKind(d["kind"]),
            dim=int(d["dim"]),
            hyperparams=KernelHyperparams(
                lengthscale=float(d["lengthscale"]), variance=float(d["variance"])
            ),
        )


def eval_kernel(spec: KernelSpec, z: np.ndarray, z2: np.ndarray) -> np.ndarray:
    """Evaluate the matrix-valued kernel at a pair of points.

    Returns a ``(d, d)`` array. Raises ``ValueError`` on dimension mismatch.
    """
    z = np.asarray(z, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    d = spec.dim
    if z.shape != (d,) or z2.shape != (d,):
        raise ValueError(
            f"points must have shape ({d},); got {z.shape} and {z2.shape}"
        )
    ell = spec.hyperparams.lengthscale
    var = spec.hyperparams.variance
    r = z - z2
    sq = float(r @ r)
    e = np.exp(-sq / (2.0 * ell**2))

    if spec.kind is KernelKind.INDEPENDENT_RBF:
        return var * e * np.eye(d)

    u = r / ell
    if spec.kind is KernelKind.CURL_FREE:
        return (var / ell**2) * e * (np.eye(d) - np.outer(u, u))
    # divergence-free
    return (var / ell**2) * e * (np.outer(u, u) + ((d - 1) - sq / ell**2) * np.eye(d))


def gram(spec: KernelSpec, points, nugget: float) -> np.ndarray:
    """Assemble the stacked (n*d) x (n*d) Gram matrix with nugget on the diagonal.

    Block (i, j) is ``eval_kernel(points[i], points[j])``; the nugget is a
    single scalar added to the full stacked diagonal.
    """
    pts = [np.asarray(p, dtype=float) for p in points]
    n = len(pts)
    if n < 1:
        raise ValueError("need at least one point")
    if nugget < 0:
        raise ValueError(f"nugget must be nonnegative, got {nugget}")
    d = spec.dim
    K = np.empty((n * d, n * d))
    for i in range(n):
        for j in range(i, n):
            block = eval_kernel(spec, pts[i], pts[j])
            K[i * d:(i + 1) * d, j * d:(j + 1) * d] = block
            if j != i:
                K[j * d:(j + 1) * d, i * d:(i + 1) * d] = block.T
    if nugget:
        K[np.diag_indices_from(K)] += nugget
    return K


def cross_cov(spec: KernelSpec, z: np.ndarray, points) -> np.ndarray:
    """Cross-covariance row block between a query point and the data points.

    Returns a ``(d, n*d)`` array whose i-th block is ``eval_kernel(z, points[i])``.
    """
    d = spec.dim
    pts = list(points)
    out = np.empty((d, len(pts) * d))
    for i, p in enumerate(pts):
        out[:, i * d:(i + 1) * d] = eval_kernel(spec, z, np.asarray(p, dtype=float))
    return out
