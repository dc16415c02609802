"""Marginal treatment-effect estimation for cluster-randomized trials.

Four estimating equations for the identity-link marginal model
mu = beta0 + betaA * A, solved cluster-wise:

* ``gee``  -- complete-case GEE,
* ``ipw``  -- weighted GEE, weights R/pi from a missingness propensity model,
* ``aug``  -- GEE plus a per-arm outcome-model projection term,
* ``dr``   -- the doubly robust combination of the two.

For the weighted equations the inverse working covariance can multiply the
weight matrix either as V^-1 W (the consistent choice for any working
correlation) or in the conventional symmetric form W^1/2 V^-1 W^1/2; both are
implemented so the contrast can be demonstrated.

All cluster-level algebra exploits that the design D has constant columns
(1, a) within a cluster, so no n x n matrix is ever formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from . import glm, variance
from .correlation import (
    EXCHANGEABLE,
    INDEPENDENCE,
    WorkingCorrelation,
    estimate_alpha_exchangeable,
    estimate_phi,
    v_inv_apply,
    v_inv_quad_ones,
)
from .dataset import ModelSpec, TrialDataset, ValidationError, design_matrix

KINDS = ("gee", "ipw", "aug", "dr")
PLACEMENT_VINV_W = "vinv_w"
PLACEMENT_WHALF = "whalf_vinv_whalf"


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    """Everything needed to fit one estimator on one dataset."""

    kind: str = "dr"
    correlation: str = INDEPENDENCE
    weight_placement: str = PLACEMENT_VINV_W
    ps_spec: ModelSpec | None = None
    include_arm: bool = True
    om_spec0: ModelSpec | None = None
    om_spec1: ModelSpec | None = None
    stepwise_ps: tuple[str, ...] | None = None
    stepwise_om: tuple[str, ...] | None = None
    stepwise_forward_only: bool = False
    variance_methods: tuple[str, ...] = ("robust", "nuisance_adjusted", "fay")
    fay_q: float = 0.75
    pi_floor: float = 1e-6
    truncation: float | None = None
    max_iter: int = 50
    tol: float = 1e-8
    p_treat_override: float | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EstimatorError(f"unknown estimator kind {self.kind!r}")
        if self.correlation not in (INDEPENDENCE, EXCHANGEABLE):
            raise EstimatorError(f"unknown correlation {self.correlation!r}")
        if self.weight_placement not in (PLACEMENT_VINV_W, PLACEMENT_WHALF):
            raise EstimatorError(f"unknown weight placement {self.weight_placement!r}")
        if self.kind in ("ipw", "dr") and self.ps_spec is None and self.stepwise_ps is None:
            raise EstimatorError(f"{self.kind} requires a propensity model (ps_spec or stepwise_ps)")
        if self.kind in ("aug", "dr") and (
            (self.om_spec0 is None or self.om_spec1 is None) and self.stepwise_om is None
        ):
            raise EstimatorError(f"{self.kind} requires outcome models (om_spec0/1 or stepwise_om)")
        if not 0.0 <= self.pi_floor < 0.5:
            raise EstimatorError(f"pi_floor must be in [0, 0.5), got {self.pi_floor}")

    @property
    def needs_ps(self) -> bool:
        return self.kind in ("ipw", "dr")

    @property
    def needs_om(self) -> bool:
        return self.kind in ("aug", "dr")

    def name(self) -> str:
        if self.label:
            return self.label
        suffix = "-I" if self.correlation == INDEPENDENCE else "-E"
        return self.kind.upper() + suffix


@dataclass
class FitResult:
    beta: np.ndarray
    alpha: float
    phi: float
    converged: bool
    iterations: int
    final_eq_norm: float
    vcov: dict
    se: dict
    p_value: dict
    ci95: dict
    ps_fit: glm.LogisticFit | None = None
    om_fit0: glm.LinearFit | None = None
    om_fit1: glm.LinearFit | None = None
    ps_spec_used: ModelSpec | None = None
    om_spec0_used: ModelSpec | None = None
    om_spec1_used: ModelSpec | None = None
    warnings: list = field(default_factory=list)

    @property
    def marginal_effect(self) -> float:
        return float(self.beta[1])


# ---------------------------------------------------------------------------
# assembly

@dataclass
class _Cluster:
    arm: int
    n: int
    y: np.ndarray          # zeros where missing
    robs: np.ndarray       # bool observed mask
    w: np.ndarray | None   # IPW weights, 0 on missing rows
    sqrt_w: np.ndarray | None
    w_active: np.ndarray | None  # rows where floor/cap leave d w/d eta nonzero
    pi: np.ndarray | None  # raw fitted propensities
    Xw: np.ndarray | None  # PS design rows for this cluster
    Xb0: np.ndarray | None  # OM designs for arm-0 / arm-1 predictions
    Xb1: np.ndarray | None
    B0: np.ndarray | None
    B1: np.ndarray | None

    @property
    def m_obs(self) -> int:
        return int(self.robs.sum())


@dataclass
class PreparedModel:
    config: EstimatorConfig
    clusters: list
    p_treat: float
    ps_fit: glm.LogisticFit | None
    om_fit0: glm.LinearFit | None
    om_fit1: glm.LinearFit | None
    ps_spec: ModelSpec | None
    om_spec0: ModelSpec | None
    om_spec1: ModelSpec | None
    warnings: list = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def assemble_weights(
    data: TrialDataset,
    ps_fit: glm.LogisticFit,
    ps_design: np.ndarray,
    pi_floor: float,
    truncation: float | None,
):
    """Per-subject IPW weights w = R / max(pi, floor), optionally capped.

    Returns ``(weights, pi, active, warnings)`` where ``active`` marks rows
    whose weight still responds to the propensity coefficients (floor and cap
    both inactive); missing rows get weight 0.
    """
    pi = ps_fit.predict_proba(ps_design)
    robs = data.observed().astype(bool)
    warnings = []
    floored = robs & (pi < pi_floor)
    if floored.any():
        warnings.append(
            f"{int(floored.sum())} propensity value(s) below floor {pi_floor}; floored"
        )
    w = np.where(robs, 1.0 / np.maximum(pi, pi_floor), 0.0)
    capped = np.zeros_like(robs)
    if truncation is not None:
        capped = robs & (w > truncation)
        if capped.any():
            warnings.append(f"{int(capped.sum())} weight(s) truncated at {truncation}")
        w = np.minimum(w, truncation)
    active = robs & ~floored & ~capped
    return w, pi, active, warnings


def _resolve_specs(data: TrialDataset, config: EstimatorConfig):
    """Fixed or stepwise-selected PS / OM model specs, plus warnings."""
    warnings = []
    ps_spec = config.ps_spec
    om0, om1 = config.om_spec0, config.om_spec1
    if config.needs_ps and config.stepwise_ps is not None:
        cand = {}
        for t in config.stepwise_ps:
            col, _ = design_matrix(data, ModelSpec(terms=(t,), intercept=False))
            cand[t] = col[:, 0]
        res = glm.stepwise_aic(
            cand, data.observed(), family="logistic",
            forward_only=config.stepwise_forward_only,
        )
        warnings.extend(res.warnings)
        ps_spec = ModelSpec(terms=res.selected)
    elif config.needs_ps and config.include_arm and "A" not in ps_spec.terms:
        ps_spec = ModelSpec(terms=("A",) + ps_spec.terms)

    if config.needs_om and config.stepwise_om is not None:
        specs = []
        for a in (0, 1):
            cand = {}
            y_a = None
            for t in config.stepwise_om:
                col, rows = design_matrix(
                    data, ModelSpec(terms=(t,), intercept=False),
                    arm_filter=a, observed_only=True,
                )
                cand[t] = col[:, 0]
                if y_a is None:
                    y_a = np.array(
                        [data.clusters[i].outcomes[j] for i, j in rows]
                    )
            res = glm.stepwise_aic(
                cand, y_a, family="linear",
                forward_only=config.stepwise_forward_only,
            )
            warnings.extend(res.warnings)
            specs.append(ModelSpec(terms=res.selected))
        om0, om1 = specs
    return ps_spec, om0, om1, warnings


def prepare(
    data: TrialDataset,
    config: EstimatorConfig,
    ps_fit: glm.LogisticFit | None = None,
    om_fits: tuple | None = None,
) -> PreparedModel:
    """Fit the nuisance models and assemble per-cluster working arrays.

    ``ps_fit`` / ``om_fits`` override the internally fitted nuisance models
    (coefficients evaluated on the configured fixed specs), e.g. for known
    propensities or derivative checks.
    """
    ps_spec, om0, om1, warnings = _resolve_specs(data, config)

    pi = wts = active = None
    Xw_full = None
    if config.needs_ps:
        ps_spec.validate(data.covariate_names)
        Xw_full, _ = design_matrix(data, ps_spec)
        if ps_fit is None:
            ps_fit = glm.fit_logistic(Xw_full, data.observed())
            if ps_fit.separation:
                warnings.append("propensity model shows separation; weights may be extreme")
            if not ps_fit.converged:
                warnings.append("propensity model IRLS did not converge")
        wts, pi, active, w_warn = assemble_weights(
            data, ps_fit, Xw_full, config.pi_floor, config.truncation
        )
        warnings.extend(w_warn)
    else:
        ps_fit = None

    om_fit0 = om_fit1 = None
    om_designs = {}
    if config.needs_om:
        fits = []
        for a, spec in ((0, om0), (1, om1)):
            spec.validate(data.covariate_names)
            if om_fits is not None:
                fits.append(om_fits[a])
            else:
                X, rows = design_matrix(data, spec, arm_filter=a, observed_only=True)
                y = np.array([data.clusters[i].outcomes[j] for i, j in rows])
                fits.append(glm.fit_linear(X, y))
            # full-dataset design under this spec, for predictions in both arms
            om_designs[a], _ = design_matrix(data, spec)
        om_fit0, om_fit1 = fits

    clusters = []
    offset = 0
    for c in data.clusters:
        sl = slice(offset, offset + c.n)
        offset += c.n
        robs = c.observed.astype(bool)
        y = np.where(robs, c.outcomes, 0.0)
        w = wts[sl] if wts is not None else None
        clusters.append(
            _Cluster(
                arm=c.arm,
                n=c.n,
                y=y,
                robs=robs,
                w=w,
                sqrt_w=np.sqrt(w) if w is not None else None,
                w_active=active[sl] if active is not None else None,
                pi=pi[sl] if pi is not None else None,
                Xw=Xw_full[sl] if Xw_full is not None else None,
                Xb0=om_designs[0][sl] if om_designs else None,
                Xb1=om_designs[1][sl] if om_designs else None,
                B0=om_designs[0][sl] @ om_fit0.coefficients if om_designs else None,
                B1=om_designs[1][sl] @ om_fit1.coefficients if om_designs else None,
            )
        )

    p_treat = (
        config.p_treat_override if config.p_treat_override is not None else data.p_treat
    )
    return PreparedModel(
        config=config,
        clusters=clusters,
        p_treat=p_treat,
        ps_fit=ps_fit,
        om_fit0=om_fit0,
        om_fit1=om_fit1,
        ps_spec=ps_spec,
        om_spec0=om0,
        om_spec1=om1,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# estimating function and Jacobian

def _arm_matrix(a: int) -> np.ndarray:
    return np.array([[1.0, float(a)], [float(a), float(a) * a]])


def _first_term_scalar(cl: _Cluster, res: np.ndarray, config, corr, phi) -> float:
    """1' K res for the weighted first term, K per the configured placement."""
    if config.weight_placement == PLACEMENT_VINV_W:
        return float(v_inv_apply(cl.w * res, corr, phi).sum())
    q = cl.sqrt_w
    return float(q @ v_inv_apply(q * res, corr, phi))


def augmentation_residual(
    prep: PreparedModel, beta: np.ndarray, corr: WorkingCorrelation, phi: float
) -> np.ndarray:
    """Per-cluster 2-vector projection terms, all subjects of all clusters.

    sum over a of p^a (1-p)^(1-a) D(a)' V^-1 (B(., a) - mu(beta, a)).
    """
    p = prep.p_treat
    out = np.zeros((len(prep.clusters), 2))
    for i, cl in enumerate(prep.clusters):
        for a, B in ((0, cl.B0), (1, cl.B1)):
            pw = p if a == 1 else 1.0 - p
            mu_a = beta[0] + beta[1] * a
            s = float(v_inv_apply(B - mu_a, corr, phi).sum())
            out[i, 0] += pw * s
            out[i, 1] += pw * a * s
    return out


def cluster_equation_values(
    prep: PreparedModel, beta: np.ndarray, corr: WorkingCorrelation, phi: float
) -> np.ndarray:
    """(M, 2) array of per-cluster estimating-function contributions."""
    config = prep.config
    out = np.zeros((len(prep.clusters), 2))
    for i, cl in enumerate(prep.clusters):
        mu_own = beta[0] + beta[1] * cl.arm
        if config.kind in ("gee", "aug"):
            if cl.m_obs:
                res_o = cl.y[cl.robs] - mu_own
                s = float(v_inv_apply(res_o, corr, phi).sum())
                out[i] += (s, cl.arm * s)
        else:
            res = np.where(cl.robs, cl.y - (mu_own if config.kind == "ipw" else 0.0), 0.0)
            if config.kind == "dr":
                B_own = cl.B0 if cl.arm == 0 else cl.B1
                res = np.where(cl.robs, cl.y - B_own, 0.0)
            s = _first_term_scalar(cl, res, config, corr, phi)
            out[i] += (s, cl.arm * s)
    if config.kind in ("aug", "dr"):
        out += augmentation_residual(prep, beta, corr, phi)
    return out


def estimating_function(
    prep: PreparedModel, beta: np.ndarray, corr: WorkingCorrelation, phi: float
) -> np.ndarray:
    """Total estimating equation value (2-vector)."""
    return cluster_equation_values(prep, beta, corr, phi).sum(axis=0)


def cluster_beta_jacobians(
    prep: PreparedModel, corr: WorkingCorrelation, phi: float
) -> np.ndarray:
    """(M, 2, 2) per-cluster d Phi_i / d beta (independent of beta)."""
    config = prep.config
    p = prep.p_treat
    out = np.zeros((len(prep.clusters), 2, 2))
    for i, cl in enumerate(prep.clusters):
        if config.kind in ("gee", "aug"):
            m = cl.m_obs
            if m:
                out[i] -= v_inv_quad_ones(m, corr, phi) * _arm_matrix(cl.arm)
        elif config.kind == "ipw":
            if config.weight_placement == PLACEMENT_VINV_W:
                s2 = float(v_inv_apply(cl.w, corr, phi).sum())
            else:
                s2 = float(cl.sqrt_w @ v_inv_apply(cl.sqrt_w, corr, phi))
            out[i] -= s2 * _arm_matrix(cl.arm)
        # dr first term has residual y - B, free of beta
        if config.kind in ("aug", "dr"):
            s2 = v_inv_quad_ones(cl.n, corr, phi)
            for a in (0, 1):
                pw = p if a == 1 else 1.0 - p
                out[i] -= pw * s2 * _arm_matrix(a)
    return out


def beta_jacobian(prep, corr, phi) -> np.ndarray:
    return cluster_beta_jacobians(prep, corr, phi).sum(axis=0)


# ---------------------------------------------------------------------------
# stacked system for nuisance-adjusted variance

def _stack_layout(prep: PreparedModel):
    """Block offsets (beta, eta_W, eta_B0, eta_B1) in the stacked system."""
    dims = [2]
    if prep.ps_fit is not None:
        dims.append(len(prep.ps_fit.coefficients))
    if prep.om_fit0 is not None:
        dims.append(len(prep.om_fit0.coefficients))
        dims.append(len(prep.om_fit1.coefficients))
    offs = np.concatenate([[0], np.cumsum(dims)])
    return dims, offs


def build_stack(
    prep: PreparedModel, beta: np.ndarray, corr: WorkingCorrelation, phi: float
) -> variance.StackedSystem:
    """Per-cluster stacked estimating/score values and analytic derivatives.

    Layout: [beta | eta_W (if PS) | eta_B0, eta_B1 (if OM)].  Cross-blocks of
    the scores with respect to the other nuisances are identically zero.
    """
    config = prep.config
    has_ps = prep.ps_fit is not None
    has_om = prep.om_fit0 is not None
    dims, offs = _stack_layout(prep)
    d = int(offs[-1])
    M = len(prep.clusters)

    bW = 1 if has_ps else None
    b0 = (2 if has_ps else 1) if has_om else None
    b1 = b0 + 1 if has_om else None

    def blk(k):
        return slice(int(offs[k]), int(offs[k + 1]))

    u = np.zeros((M, d))
    du = np.zeros((M, d, d))
    u[:, :2] = cluster_equation_values(prep, beta, corr, phi)
    du[:, :2, :2] = cluster_beta_jacobians(prep, corr, phi)

    p = prep.p_treat
    sig2 = (
        (max(prep.om_fit0.residual_variance, 1e-12),
         max(prep.om_fit1.residual_variance, 1e-12))
        if has_om else None
    )

    for i, cl in enumerate(prep.clusters):
        ones = np.ones(cl.n)
        vi1 = v_inv_apply(ones, corr, phi)
        arm_col = np.array([1.0, float(cl.arm)])

        if has_ps:
            pi_raw = cl.pi
            # score of the propensity logistic fit
            u[i, blk(bW)] = cl.Xw.T @ (cl.robs.astype(float) - pi_raw)
            du[i, blk(bW), blk(bW)] = -(cl.Xw * (pi_raw * (1 - pi_raw))[:, None]).T @ cl.Xw

            if config.kind in ("ipw", "dr"):
                if config.kind == "ipw":
                    mu_own = beta[0] + beta[1] * cl.arm
                    res = np.where(cl.robs, cl.y - mu_own, 0.0)
                else:
                    B_own = cl.B0 if cl.arm == 0 else cl.B1
                    res = np.where(cl.robs, cl.y - B_own, 0.0)
                if config.weight_placement == PLACEMENT_VINV_W:
                    # d w_j / d eta_W = -(1-pi) w_j x_j on active rows
                    coef = np.where(cl.w_active, -(1 - pi_raw) * cl.w, 0.0)
                    g = (vi1 * res * coef) @ cl.Xw
                else:
                    q = cl.sqrt_w
                    ds_dq = v_inv_apply(q * res, corr, phi) + res * v_inv_apply(q, corr, phi)
                    dq = np.where(cl.w_active, -0.5 * q * (1 - pi_raw), 0.0)
                    g = (ds_dq * dq) @ cl.Xw
                du[i, :2, blk(bW)] = np.outer(arm_col, g)

        if has_om:
            for a, Xb, bk in ((0, cl.Xb0, b0), (1, cl.Xb1, b1)):
                pw = p if a == 1 else 1.0 - p
                # augmentation depends on eta_B through B(., a)
                g_aug = pw * (vi1 @ Xb)
                du[i, :2, blk(bk)] += np.outer([1.0, float(a)], g_aug)
            if config.kind == "dr":
                Xb_own = cl.Xb0 if cl.arm == 0 else cl.Xb1
                bk_own = b0 if cl.arm == 0 else b1
                if config.weight_placement == PLACEMENT_VINV_W:
                    g1 = -(vi1 * cl.w) @ Xb_own
                else:
                    q = cl.sqrt_w
                    g1 = -(q * v_inv_apply(q, corr, phi)) @ Xb_own
                du[i, :2, blk(bk_own)] += np.outer(arm_col, g1)

            # per-arm least-squares scores on observed rows
            bk_own = b0 if cl.arm == 0 else b1
            fit_own = prep.om_fit0 if cl.arm == 0 else prep.om_fit1
            s2_own = sig2[cl.arm]
            Xo = (cl.Xb0 if cl.arm == 0 else cl.Xb1)[cl.robs]
            if Xo.shape[0]:
                resid = cl.y[cl.robs] - Xo @ fit_own.coefficients
                u[i, blk(bk_own)] = Xo.T @ resid / s2_own
                du[i, blk(bk_own), blk(bk_own)] = -(Xo.T @ Xo) / s2_own

    return variance.StackedSystem(u=u, du=du, beta_dim=2)


# ---------------------------------------------------------------------------
# solver

def _initial_beta(prep: PreparedModel) -> np.ndarray:
    """Weighted complete-case least squares of Y on (1, A)."""
    rows = []
    for cl in prep.clusters:
        w = cl.w if cl.w is not None else cl.robs.astype(float)
        for j in np.flatnonzero(cl.robs):
            rows.append((w[j], cl.arm, cl.y[j]))
    arr = np.array(rows)
    if not len(arr):
        raise EstimatorError("no observed outcomes")
    w, a, y = arr[:, 0], arr[:, 1], arr[:, 2]
    X = np.column_stack([np.ones(len(a)), a])
    xtwx = (X * w[:, None]).T @ X
    try:
        return np.linalg.solve(xtwx, (X * w[:, None]).T @ y)
    except np.linalg.LinAlgError:
        raise EstimatorError("cannot initialize beta: an arm has no observed outcomes") from None


def _pearson_residuals(prep: PreparedModel, beta: np.ndarray):
    """Per-cluster raw residuals y - mu(beta) on observed rows."""
    out = []
    for cl in prep.clusters:
        if cl.m_obs:
            out.append(cl.y[cl.robs] - (beta[0] + beta[1] * cl.arm))
    return out


def solve(data: TrialDataset, config: EstimatorConfig) -> FitResult:
    """Fit the configured estimator; see module docstring for the menu.

    Nuisance models are fit once and held fixed; beta alternates Newton steps
    with moment updates of phi and (for exchangeable) alpha until the
    estimating-equation max-norm drops below ``config.tol``.
    """
    prep = prepare(data, config)
    warnings = list(prep.warnings)
    if (
        config.kind in ("ipw", "dr")
        and config.weight_placement == PLACEMENT_WHALF
        and config.correlation == EXCHANGEABLE
    ):
        warnings.append(
            "W^1/2 V^-1 W^1/2 weight placement with a non-independence working "
            "correlation is not consistent in general; prefer V^-1 W"
        )

    beta = _initial_beta(prep)
    corr = WorkingCorrelation(kind=config.correlation, alpha=0.0)
    phi = 1.0
    can_estimate_alpha = (
        config.correlation == EXCHANGEABLE
        and any(cl.m_obs >= 2 for cl in prep.clusters)
    )

    converged = False
    eq_norm = np.inf
    it = 0
    for it in range(1, config.max_iter + 1):
        resids = _pearson_residuals(prep, beta)
        disp = estimate_phi(resids, k=2)
        phi = disp.phi
        warnings.extend(w for w in disp.warnings if w not in warnings)
        if can_estimate_alpha:
            alpha, a_warn = estimate_alpha_exchangeable(resids, phi, k=2)
            warnings.extend(w for w in a_warn if w not in warnings)
            corr = WorkingCorrelation(kind=EXCHANGEABLE, alpha=alpha)
        eq = estimating_function(prep, beta, corr, phi)
        eq_norm = float(np.max(np.abs(eq)))
        if eq_norm < config.tol:
            converged = True
            break
        J = beta_jacobian(prep, corr, phi)
        try:
            step = np.linalg.solve(J, eq)
        except np.linalg.LinAlgError:
            raise EstimatorError("singular Jacobian in Newton step") from None
        beta = beta - step
    if not converged:
        warnings.append(
            f"did not converge in {config.max_iter} iterations (|eq| = {eq_norm:.3e})"
        )

    stack = build_stack(prep, beta, corr, phi)
    vcov = {}
    for method in config.variance_methods:
        if method == "robust":
            vcov[method] = variance.robust_sandwich(
                stack.u[:, :2], stack.du[:, :2, :2].sum(axis=0)
            )
        elif method == "nuisance_adjusted":
            vcov[method] = variance.nuisance_adjusted(stack)
        elif method == "fay":
            vcov[method] = variance.fay_corrected(stack, q=config.fay_q)
        else:
            raise EstimatorError(f"unknown variance method {method!r}")

    se, pval, ci = {}, {}, {}
    for method, V in vcov.items():
        s = float(np.sqrt(max(V[1, 1], 0.0)))
        se[method] = s
        z = beta[1] / s if s > 0 else np.inf
        pval[method] = float(2 * norm.sf(abs(z)))
        ci[method] = (float(beta[1] - 1.959963984540054 * s),
                      float(beta[1] + 1.959963984540054 * s))

    return FitResult(
        beta=beta,
        alpha=corr.alpha,
        phi=phi,
        converged=converged,
        iterations=it,
        final_eq_norm=eq_norm,
        vcov=vcov,
        se=se,
        p_value=pval,
        ci95=ci,
        ps_fit=prep.ps_fit,
        om_fit0=prep.om_fit0,
        om_fit1=prep.om_fit1,
        ps_spec_used=prep.ps_spec,
        om_spec0_used=prep.om_spec0,
        om_spec1_used=prep.om_spec1,
        warnings=warnings,
    )
