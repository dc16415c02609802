"""Nuisance model fitting: linear / logistic regression, AIC and stepwise selection.

These are deliberately self-contained implementations: the estimating-equation
machinery needs cluster-level score contributions, explicit AIC conventions and
a separation flag rather than a hard failure, so the fits are done here with
plain least squares and IRLS instead of delegating to a modelling library.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit


class GlmError(ValueError):
    pass


class RankDeficientError(GlmError):
    def __init__(self, column: int):
        self.column = column
        super().__init__(f"design matrix is rank deficient (offending column {column})")


# ---------------------------------------------------------------------------
# linear regression

@dataclass
class LinearFit:
    coefficients: np.ndarray
    residual_variance: float
    rss: float
    n: int
    k: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.coefficients

    @property
    def aic(self) -> float:
        # n*log(RSS/n) + 2*(k+1), up to the usual additive constant.
        rss = max(self.rss, 1e-300)
        return self.n * np.log(rss / self.n) + 2 * (self.k + 1)


def fit_linear(X: np.ndarray, y: np.ndarray) -> LinearFit:
    """Least squares via pivoted QR; rank deficiency names the pivoted column."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n < k:
        raise GlmError(f"need at least as many rows ({n}) as columns ({k})")
    q, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(n, k) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    small = np.flatnonzero(diag <= tol)
    if small.size:
        raise RankDeficientError(int(piv[small[0]]))
    coef_piv = scipy.linalg.solve_triangular(r, q.T @ y)
    coef = np.empty(k)
    coef[piv] = coef_piv
    resid = y - X @ coef
    rss = float(resid @ resid)
    dof = n - k
    resid_var = rss / dof if dof > 0 else 0.0
    return LinearFit(coefficients=coef, residual_variance=resid_var, rss=rss, n=n, k=k)


# ---------------------------------------------------------------------------
# logistic regression

def _log_likelihood(lp: np.ndarray, r: np.ndarray) -> float:
    # sum r*lp - log(1+exp(lp)), numerically stable
    return float(r @ lp - np.logaddexp(0.0, lp).sum())


@dataclass
class LogisticFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    separation: bool = False

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(np.asarray(X) @ self.coefficients)

    @property
    def aic(self) -> float:
        return -2 * self.log_likelihood + 2 * len(self.coefficients)


def fit_logistic(
    X: np.ndarray, r: np.ndarray, tol: float = 1e-8, max_iter: int = 100
) -> LogisticFit:
    """Bernoulli-logit ML by IRLS with step-halving.

    Converges when the score max-norm drops below ``tol``.  Complete or
    quasi-complete separation (|linear predictor| > 30 anywhere) sets the
    ``separation`` flag but still returns coefficients.
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(r, dtype=float)
    n, k = X.shape
    if n < k:
        raise GlmError(f"need at least as many rows ({n}) as columns ({k})")
    if r.min() == r.max():
        raise GlmError("response takes a single value; both classes required")

    eta = np.zeros(k)
    lp = X @ eta
    ll = _log_likelihood(lp, r)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pi = expit(lp)
        score = X.T @ (r - pi)
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        wt = np.maximum(pi * (1 - pi), 1e-12)
        info = (X * wt[:, None]).T @ X
        try:
            delta = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise GlmError("singular information matrix in IRLS") from None
        # Step-halve if the log-likelihood would decrease.
        step = 1.0
        for _ in range(20):
            cand = eta + step * delta
            cand_lp = X @ cand
            cand_ll = _log_likelihood(cand_lp, r)
            if cand_ll >= ll - 1e-12:
                break
            step /= 2
        eta, lp, ll = cand, cand_lp, cand_ll
    else:
        it = max_iter
    separation = bool(np.max(np.abs(lp)) > 30)
    return LogisticFit(
        coefficients=eta,
        converged=converged,
        iterations=it,
        log_likelihood=ll,
        separation=separation,
    )


def logistic_aic(X: np.ndarray, r: np.ndarray) -> float:
    return fit_logistic(X, r).aic


# ---------------------------------------------------------------------------
# per-cluster score contributions (stacked into the sandwich variance)

def score_logistic(
    X: np.ndarray, r: np.ndarray, eta: np.ndarray, cluster_index: np.ndarray
) -> np.ndarray:
    """Cluster-aggregated logistic score contributions X_i'(r_i - pi_i)."""
    X = np.asarray(X, dtype=float)
    resid = np.asarray(r, dtype=float) - expit(X @ eta)
    return _aggregate(X * resid[:, None], cluster_index)


def score_linear(
    X: np.ndarray,
    y: np.ndarray,
    eta: np.ndarray,
    sigma2: float,
    cluster_index: np.ndarray,
) -> np.ndarray:
    """Cluster-aggregated Gaussian score contributions X_i'(y_i - X_i eta)/sigma^2."""
    X = np.asarray(X, dtype=float)
    resid = (np.asarray(y, dtype=float) - X @ eta) / sigma2
    return _aggregate(X * resid[:, None], cluster_index)


def _aggregate(rows: np.ndarray, cluster_index: np.ndarray) -> np.ndarray:
    cluster_index = np.asarray(cluster_index)
    m = int(cluster_index.max()) + 1
    out = np.zeros((m, rows.shape[1]))
    np.add.at(out, cluster_index, rows)
    return out


# ---------------------------------------------------------------------------
# stepwise selection

@dataclass
class StepwiseResult:
    selected: tuple[str, ...]
    aic: float
    warnings: list = field(default_factory=list)


def _fit_aic(cols, response, family) -> float:
    X = np.column_stack(cols)
    if family == "linear":
        return fit_linear(X, response).aic
    if family == "logistic":
        return fit_logistic(X, response).aic
    raise GlmError(f"unknown family {family!r}")


def stepwise_aic(
    candidates: dict,
    response: np.ndarray,
    family: str = "linear",
    forward_only: bool = False,
) -> StepwiseResult:
    """Greedy AIC selection starting from the intercept-only model.

    Forward adds (with a backward-pruning pass after each add unless
    ``forward_only``) the single move that most decreases AIC; stops when no
    move improves.  Ties break by candidate declaration order.  Candidates
    whose fit fails (rank deficiency, non-convergence errors) are skipped with
    a recorded warning.
    """
    response = np.asarray(response, dtype=float)
    n = len(response)
    names = list(candidates)
    cols = {k: np.asarray(v, dtype=float).reshape(n) for k, v in candidates.items()}
    intercept = np.ones(n)

    warnings: list[str] = []
    selected: list[str] = []
    current_aic = _fit_aic([intercept], response, family)

    def try_aic(sel):
        try:
            return _fit_aic([intercept] + [cols[s] for s in sel], response, family)
        except GlmError as exc:
            warnings.append(f"skipped candidate set {sel}: {exc}")
            return np.inf

    improved = True
    while improved:
        improved = False
        # forward step
        best_name, best_aic = None, current_aic
        for name in names:
            if name in selected:
                continue
            a = try_aic(selected + [name])
            if a < best_aic - 1e-10:
                best_name, best_aic = name, a
        if best_name is not None:
            selected.append(best_name)
            current_aic = best_aic
            improved = True
        if forward_only:
            continue
        # backward pruning pass
        pruned = True
        while pruned and len(selected) > 1:
            pruned = False
            drop_name, drop_aic = None, current_aic
            for name in selected:
                a = try_aic([s for s in selected if s != name])
                if a < drop_aic - 1e-10:
                    drop_name, drop_aic = name, a
            if drop_name is not None:
                selected.remove(drop_name)
                current_aic = drop_aic
                pruned = True
                improved = True
    return StepwiseResult(selected=tuple(selected), aic=current_aic, warnings=warnings)
