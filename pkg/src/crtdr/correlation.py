"""Working correlation structures and moment estimation of alpha and phi.

The dispersion phi and the exchangeable correlation alpha are estimated from
Pearson residuals of the marginal mean model.  The exchangeable inverse uses
the closed form C^-1 = (1/(1-a)) [I - a/(1+(n-1)a) J].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INDEPENDENCE = "independence"
EXCHANGEABLE = "exchangeable"

PHI_FLOOR = 1e-10
ALPHA_MARGIN = 1e-6


class CorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class WorkingCorrelation:
    kind: str = INDEPENDENCE
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in (INDEPENDENCE, EXCHANGEABLE):
            raise CorrelationError(f"unknown correlation kind {self.kind!r}")
        if self.kind == INDEPENDENCE and self.alpha != 0.0:
            raise CorrelationError("independence requires alpha = 0")

    def validate_for(self, n_max: int) -> None:
        if self.kind == EXCHANGEABLE and n_max > 1:
            lo = -1.0 / (n_max - 1)
            if not lo < self.alpha < 1.0:
                raise CorrelationError(
                    f"alpha={self.alpha} outside ({lo}, 1) for max cluster size {n_max}"
                )


@dataclass
class DispersionState:
    phi: float
    floored: bool = False
    warnings: list = field(default_factory=list)


def estimate_phi(residuals, k: int) -> DispersionState:
    """Moment estimator phi = sum(e^2) / (N - k) over contributing residuals.

    ``residuals`` is an iterable of per-cluster residual vectors.  A
    degenerate all-zero residual set floors phi at a tiny positive value (with
    a warning) so downstream inversion stays defined.
    """
    sq = 0.0
    n = 0
    for e in residuals:
        e = np.asarray(e, dtype=float)
        sq += float(e @ e)
        n += e.size
    if n <= k:
        raise CorrelationError(f"need more residuals ({n}) than mean parameters ({k})")
    phi = sq / (n - k)
    if phi < PHI_FLOOR:
        return DispersionState(
            phi=PHI_FLOOR, floored=True,
            warnings=[f"dispersion estimate {phi:.3e} floored at {PHI_FLOOR}"],
        )
    return DispersionState(phi=phi)


def estimate_alpha_exchangeable(residuals, phi: float, k: int):
    """Moment estimator of the exchangeable correlation from residual products.

    alpha = [sum over clusters of sum_{j<l} e_j e_l / phi] / [sum n_i(n_i-1)/2 - k].
    The estimate is clamped into the valid open interval for the largest
    cluster; returns ``(alpha, warnings)``.
    """
    num = 0.0
    pairs = 0
    n_max = 1
    for e in residuals:
        e = np.asarray(e, dtype=float)
        m = e.size
        n_max = max(n_max, m)
        if m < 2:
            continue
        s = e.sum()
        num += (s * s - e @ e) / 2.0
        pairs += m * (m - 1) // 2
    if pairs == 0:
        raise CorrelationError("no cluster has two or more contributing residuals")
    denom = pairs - k
    if denom <= 0:
        raise CorrelationError(
            f"too few residual pairs ({pairs}) for df correction k={k}"
        )
    alpha = num / phi / denom
    lo = -1.0 / (n_max - 1) + ALPHA_MARGIN if n_max > 1 else -1.0 + ALPHA_MARGIN
    hi = 1.0 - ALPHA_MARGIN
    warnings = []
    if not lo <= alpha <= hi:
        clamped = min(max(alpha, lo), hi)
        warnings.append(f"alpha estimate {alpha:.6g} clamped to {clamped:.6g}")
        alpha = clamped
    return alpha, warnings


def corr_inverse(n: int, corr: WorkingCorrelation) -> np.ndarray:
    """Inverse of the n x n working correlation matrix."""
    if corr.kind == INDEPENDENCE or n == 1:
        return np.eye(n)
    a = corr.alpha
    if 1.0 + (n - 1) * a <= 0 or a >= 1.0:
        raise CorrelationError(
            f"exchangeable correlation singular for n={n}, alpha={a}"
        )
    off = -a / ((1 - a) * (1 + (n - 1) * a))
    diag = 1.0 / (1 - a) + off
    out = np.full((n, n), off)
    np.fill_diagonal(out, diag)
    return out


def v_inverse(n: int, corr: WorkingCorrelation, phi: float) -> np.ndarray:
    """Inverse of V = phi * C(alpha) for one cluster."""
    if phi <= 0 or not np.isfinite(phi):
        raise CorrelationError(f"phi must be finite and positive, got {phi}")
    return corr_inverse(n, corr) / phi


def v_inv_apply(x: np.ndarray, corr: WorkingCorrelation, phi: float) -> np.ndarray:
    """Apply V^-1 to a vector without forming the matrix (O(n))."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if corr.kind == INDEPENDENCE or n == 1:
        return x / phi
    a = corr.alpha
    denom = 1.0 + (n - 1) * a
    if denom <= 0 or a >= 1.0:
        raise CorrelationError(
            f"exchangeable correlation singular for n={n}, alpha={a}"
        )
    return (x - (a / denom) * x.sum()) / ((1 - a) * phi)


def v_inv_quad_ones(n: int, corr: WorkingCorrelation, phi: float) -> float:
    """1' V^-1 1 for a cluster of size n."""
    if corr.kind == INDEPENDENCE or n == 1:
        return n / phi
    a = corr.alpha
    denom = 1.0 + (n - 1) * a
    if denom <= 0 or a >= 1.0:
        raise CorrelationError(
            f"exchangeable correlation singular for n={n}, alpha={a}"
        )
    return n / (denom * phi)
