"""Gaussian assumed-density moment propagation for Ito SDEs.

Solves dz = f(z,t) dt + L(z,t) dbeta(t) by propagating the mean and
covariance of the state directly (linearized or sigma-point matched moment
ODEs), with GP-posterior vector-field models, an Euler-Maruyama sampling
baseline, a finite-difference density-grid solver, and closed-form oracles
for error-controlled benchmarking.
"""

__version__ = "0.1.0"

from .ensemble import Ensemble, em_step, empirical_moments, simulate
from .field import PosteriorField, VectorFieldObservations, fit
from .fpkgrid import (EvolveMethod, GridDensity, GridSpec, assemble_operator,
                      evolve, gaussian_init, grid_moments)
from .kernels import KernelHyperparams, KernelKind, KernelSpec, eval_kernel, gram
from .models import SdeModel, make_benes, make_gp_sde, make_linear
from .moments import (MomentState, MomentTrajectory, QuadratureRule, Scheme,
                      cubature_rule, gauss_hermite_rule, linearized_rhs,
                      matched_rhs, propagate, sqrt_psd)
from .odeint import Method, TimeGrid, integrate, step_euler, step_rk4
from .oracle import (BenesSpec, benes_density, benes_moments, benes_truth,
                     gauss_kl, match_trajectories, total_kl)
