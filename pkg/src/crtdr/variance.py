"""Sandwich variance estimation for cluster-level estimating equations.

Three flavors, all of the form bread^-1 meat bread^-T restricted to the
marginal mean parameters:

* ``robust_sandwich``   -- plain sandwich over the mean equation only,
* ``nuisance_adjusted`` -- stacked with the propensity and outcome-model
  scores so nuisance estimation uncertainty propagates,
* ``fay_corrected``     -- the adjusted form with Fay's per-cluster diagonal
  inflation of the meat, leverage bounded by q.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class VarianceError(ValueError):
    pass


@dataclass
class StackedSystem:
    """Per-cluster stacked estimating-function values and their derivatives.

    ``u`` has shape (M, d) with the marginal mean equation in the leading
    ``beta_dim`` coordinates, followed by nuisance score blocks.  ``du`` has
    shape (M, d, d) holding the analytic derivative of each cluster's
    contribution with respect to the full stacked parameter.
    """

    u: np.ndarray
    du: np.ndarray
    beta_dim: int = 2

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.du = np.asarray(self.du, dtype=float)
        m, d = self.u.shape
        if self.du.shape != (m, d, d):
            raise VarianceError(
                f"derivative array shape {self.du.shape} does not match values {self.u.shape}"
            )
        if not 0 < self.beta_dim <= d:
            raise VarianceError(f"beta_dim {self.beta_dim} out of range for dimension {d}")

    @property
    def n_clusters(self) -> int:
        return self.u.shape[0]

    @property
    def dim(self) -> int:
        return self.u.shape[1]


def _symmetrize(V: np.ndarray) -> np.ndarray:
    return (V + V.T) / 2.0


def _inverse(A: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise VarianceError(f"singular {what} (condition number {cond:.3e})")
    return np.linalg.inv(A)


def robust_sandwich(phi_values: np.ndarray, bread: np.ndarray) -> np.ndarray:
    """Plain sandwich bread^-1 (sum phi phi') bread^-T for the mean equation.

    ``phi_values`` is the (M, 2) array of per-cluster estimating-function
    contributions at the solution; ``bread`` the summed derivative with
    respect to the mean parameters.
    """
    phi_values = np.asarray(phi_values, dtype=float)
    if phi_values.ndim != 2:
        raise VarianceError("phi_values must be a 2-d per-cluster array")
    if phi_values.shape[0] < 2:
        raise VarianceError(
            f"need at least 2 clusters for a sandwich variance, got {phi_values.shape[0]}"
        )
    binv = _inverse(np.asarray(bread, dtype=float), "bread")
    meat = phi_values.T @ phi_values
    return _symmetrize(binv @ meat @ binv.T)


def nuisance_adjusted(stack: StackedSystem) -> np.ndarray:
    """Stacked sandwich propagating nuisance-model estimation; beta block."""
    if stack.n_clusters < 2:
        raise VarianceError(
            f"need at least 2 clusters for a sandwich variance, got {stack.n_clusters}"
        )
    gamma = stack.du.sum(axis=0)
    ginv = _inverse(gamma, "stacked bread")
    meat = stack.u.T @ stack.u
    full = ginv @ meat @ ginv.T
    return _symmetrize(full[: stack.beta_dim, : stack.beta_dim])


def fay_leverage_factors(stack: StackedSystem, q: float = 0.75) -> np.ndarray:
    """(M, d) diagonal inflation factors {1 - min(q, h_jj)}^(-1/2), each >= 1.

    h_jj is the j-th diagonal of dU_i/dOmega times the inverse summed bread;
    negative leverages are clipped at zero so no factor deflates.
    """
    if not 0.0 <= q < 1.0:
        raise VarianceError(f"q must be in [0, 1), got {q}")
    gamma = stack.du.sum(axis=0)
    ginv = _inverse(gamma, "stacked bread")
    # diag(du_i @ ginv) for every cluster at once
    h = np.einsum("ijk,kj->ij", stack.du, ginv)
    h = np.clip(h, 0.0, q)
    return 1.0 / np.sqrt(1.0 - h)


def fay_corrected(stack: StackedSystem, q: float = 0.75) -> np.ndarray:
    """Nuisance-adjusted sandwich with Fay's small-sample meat inflation."""
    if stack.n_clusters < 2:
        raise VarianceError(
            f"need at least 2 clusters for a sandwich variance, got {stack.n_clusters}"
        )
    gamma = stack.du.sum(axis=0)
    ginv = _inverse(gamma, "stacked bread")
    hu = fay_leverage_factors(stack, q) * stack.u
    meat = hu.T @ hu
    full = ginv @ meat @ ginv.T
    return _symmetrize(full[: stack.beta_dim, : stack.beta_dim])
