"""End-to-end statistical acceptance checks.

Each test pins one externally stated target: Monte Carlo bias and coverage
values for the four estimators, exact small-problem equivalences, analytic
derivative verification, generator calibration, and bitwise determinism.
The Monte Carlo runs are shared through module-scoped fixtures; seeds are
fixed so every run of this file sees identical numbers.
"""
import dataclasses
import io
import os

import numpy as np
import pytest

from crtdr import glm
from crtdr.cli import main
from crtdr.correlation import EXCHANGEABLE, INDEPENDENCE, WorkingCorrelation
from crtdr.dataset import ClusterBlock, ModelSpec, TrialDataset
from crtdr.estimator import (
    KINDS,
    PLACEMENT_VINV_W,
    PLACEMENT_WHALF,
    EstimatorConfig,
    beta_jacobian,
    build_stack,
    estimating_function,
    prepare,
    solve,
)
from crtdr.simulate import (
    ScenarioEq5,
    ScenarioEq6,
    configs_table3,
    configs_table4,
    generate_eq5,
    generate_eq6,
    run_mc,
    scenario_table3,
    scenario_table4,
    scenario_table5,
    STEPWISE_OM_EQ5,
    STEPWISE_OM_EQ6,
    STEPWISE_PS_EQ5,
    STEPWISE_PS_EQ6,
)
from conftest import build_dataset

SEED = 20260823
JOBS = min(8, os.cpu_count() or 1)


def _row(summary, label):
    return next(r for r in summary.rows if r.estimator == label)


# ---------------------------------------------------------------------------
# shared Monte Carlo runs

@pytest.fixture(scope="module")
def table4_large_summary():
    result = run_mc(
        scenario_table4(),
        configs_table4(correlations=(INDEPENDENCE,)),
        replicates=300,
        seed=SEED,
        jobs=JOBS,
    )
    return result.summary()


@pytest.fixture(scope="module")
def table3_grid_summary():
    configs = (
        configs_table3(om="miss", ps="true")
        + configs_table3(om="true", ps="miss")
        + configs_table3(om="true", ps="none")
    )
    result = run_mc(
        scenario_table3(), configs, replicates=300, seed=SEED, jobs=JOBS
    )
    return result.summary()


@pytest.fixture(scope="module")
def placement_contrast_summary():
    configs = [
        dataclasses.replace(
            configs_table3(
                om="miss", ps="true", correlations=(EXCHANGEABLE,),
                weight_placement=placement,
            )[0],
            label=f"DR-E {placement}",
        )
        for placement in (PLACEMENT_WHALF, PLACEMENT_VINV_W)
    ]
    result = run_mc(
        scenario_table3(), configs, replicates=300, seed=SEED, jobs=JOBS
    )
    return result.summary()


@pytest.fixture(scope="module")
def table4_small_records():
    config = EstimatorConfig(
        kind="dr",
        correlation=INDEPENDENCE,
        stepwise_ps=STEPWISE_PS_EQ5,
        stepwise_om=STEPWISE_OM_EQ5,
    )
    return run_mc(
        scenario_table4(small=True), [config], replicates=300, seed=SEED, jobs=JOBS
    )


@pytest.fixture(scope="module")
def table5_summary():
    configs = [
        EstimatorConfig(kind="gee", correlation=INDEPENDENCE),
        EstimatorConfig(
            kind="dr",
            correlation=INDEPENDENCE,
            stepwise_ps=STEPWISE_PS_EQ6,
            stepwise_om=STEPWISE_OM_EQ6,
        ),
    ]
    return run_mc(
        scenario_table5(), configs, replicates=200, seed=SEED, jobs=JOBS
    ).summary()


# ---------------------------------------------------------------------------
# criteria

def test_01_large_sample_bias_pins(table4_large_summary):
    checks = {
        "GEE-I": (_row(table4_large_summary, "GEE-I").bias, -1.83, -1.63),
        "AUG-I": (_row(table4_large_summary, "AUG-I").bias, -1.90, -1.70),
        "IPW-I": (_row(table4_large_summary, "IPW-I").bias, -1.10, -0.90),
        "DR-I": (_row(table4_large_summary, "DR-I").bias, -0.02, 0.02),
    }
    report = {k: round(v[0], 4) for k, v in checks.items()}
    failures = [
        f"{name}: bias {bias:.4f} outside [{lo}, {hi}]"
        for name, (bias, lo, hi) in checks.items()
        if not lo <= bias <= hi
    ]
    assert not failures, f"{failures}; all biases: {report}"


def test_02_double_robustness_grid(table3_grid_summary):
    miss_om = _row(table3_grid_summary, "DR-I om=miss ps=true")
    miss_ps = _row(table3_grid_summary, "DR-I om=true ps=miss")
    both_ok = _row(table3_grid_summary, "DR-I om=true ps=none")
    assert abs(miss_om.bias) < 0.05, miss_om
    assert abs(miss_ps.bias) < 0.01, miss_ps
    assert abs(both_ok.bias) < 0.01, both_ok
    assert 0.92 <= both_ok.coverage_robust <= 0.98, both_ok


def test_03_adjusted_se_calibration(table3_grid_summary):
    row = _row(table3_grid_summary, "DR-I om=true ps=none")
    ratio = row.se_robust_mean / row.se_empirical
    assert 0.85 <= ratio <= 1.15, f"mean adjusted SE / empirical SE = {ratio:.3f}"


def test_04_weight_placement_contrast(placement_contrast_summary):
    symmetric = _row(placement_contrast_summary, f"DR-E {PLACEMENT_WHALF}")
    leading = _row(placement_contrast_summary, f"DR-E {PLACEMENT_VINV_W}")
    assert abs(symmetric.bias) > 0.3, symmetric
    assert abs(leading.bias) < 0.05, leading


def test_05_small_sample_se_ordering(table4_small_records):
    ok = [
        r
        for r in table4_small_records.records
        if not r["error"] and np.isfinite(r["se_fay"]) and np.isfinite(r["se_robust"])
    ]
    assert len(ok) > 200
    row = table4_small_records.summary().rows[0]
    assert row.coverage_fay >= row.coverage_robust, row
    frac = np.mean([r["se_fay"] >= r["se_robust"] for r in ok])
    assert frac >= 0.99, f"Fay SE >= adjusted SE on only {frac:.3f} of replicates"


def test_06_trial_like_scenario_pins(table5_summary):
    gee = _row(table5_summary, "GEE-I")
    dr = _row(table5_summary, "DR-I")
    assert abs(dr.bias) < 0.10, dr
    assert 0.91 <= dr.coverage_robust <= 0.98, dr
    assert 2.20 <= gee.bias <= 2.50, f"GEE-I bias {gee.bias:.4f} outside [2.20, 2.50]"


class TestCriterion07ExactEquivalences:
    def test_unit_propensity_matches_complete_case(self):
        data = generate_eq5(
            ScenarioEq5(n_clusters=12, size_menu=(4, 6), beta_m=None), seed=SEED
        )
        gee = solve(data, EstimatorConfig(kind="gee"))
        config = EstimatorConfig(kind="ipw", ps_spec=ModelSpec(terms=("X1",)))
        sure = glm.LogisticFit(
            coefficients=np.array([800.0, 0.0, 0.0]),
            converged=True, iterations=0, log_likelihood=0.0, separation=True,
        )
        prep = prepare(data, config, ps_fit=sure)
        corr = WorkingCorrelation(kind=INDEPENDENCE)
        eq0 = estimating_function(prep, np.zeros(2), corr, 1.0)
        beta = -np.linalg.solve(beta_jacobian(prep, corr, 1.0), eq0)
        np.testing.assert_allclose(beta, gee.beta, atol=1e-10)

    def test_placements_agree_under_independence(self):
        data = generate_eq5(ScenarioEq5(n_clusters=14, size_menu=(5, 7)), seed=SEED)
        kwargs = dict(
            kind="dr",
            ps_spec=ModelSpec(terms=("A", "X1", "mean_X1")),
            om_spec0=ModelSpec(terms=("X1", "mean_X1")),
            om_spec1=ModelSpec(terms=("X1", "mean_X1")),
        )
        fit_a = solve(data, EstimatorConfig(weight_placement=PLACEMENT_VINV_W, **kwargs))
        fit_b = solve(data, EstimatorConfig(weight_placement=PLACEMENT_WHALF, **kwargs))
        np.testing.assert_allclose(fit_a.beta, fit_b.beta, atol=1e-10)

    def test_complete_case_equals_arm_means_difference(self):
        data = generate_eq5(
            ScenarioEq5(n_clusters=10, size_menu=(6,), beta_m=None), seed=SEED
        )
        fit = solve(data, EstimatorConfig(kind="gee"))
        y, a = data.outcomes(), data.arms()
        assert fit.marginal_effect == pytest.approx(
            y[a == 1].mean() - y[a == 0].mean(), abs=1e-10
        )

    def test_three_cluster_direct_solve(self):
        clusters = (
            ClusterBlock(
                "a", 1,
                outcomes=np.array([2.0, np.nan, 3.5]),
                observed=np.array([1, 0, 1]),
                covariates=np.array([[0.5], [1.5], [-0.5]]),
            ),
            ClusterBlock(
                "b", 0,
                outcomes=np.array([1.0, 0.5, np.nan, 2.0]),
                observed=np.array([1, 1, 0, 1]),
                covariates=np.array([[0.2], [-1.0], [0.8], [1.1]]),
            ),
            ClusterBlock(
                "c", 1,
                outcomes=np.array([4.0, 2.5]),
                observed=np.array([1, 1]),
                covariates=np.array([[0.3], [0.9]]),
            ),
        )
        data = TrialDataset(clusters=clusters, covariate_names=("X1",), p_treat=0.5)
        fit = solve(
            data,
            EstimatorConfig(
                kind="dr",
                ps_spec=ModelSpec(terms=("A", "X1")),
                om_spec0=ModelSpec(terms=("X1",)),
                om_spec1=ModelSpec(terms=("X1",)),
            ),
        )
        arms, robs, x1 = data.arms(), data.observed().astype(bool), data.column("X1")
        Xps = np.column_stack([np.ones(9), arms, x1])
        ps = glm.fit_logistic(Xps, robs.astype(float))
        w = np.where(robs, 1.0 / ps.predict_proba(Xps), 0.0)
        Xom = np.column_stack([np.ones(9), x1])
        B = {}
        for a in (0, 1):
            sel = (arms == a) & robs
            coef, *_ = np.linalg.lstsq(Xom[sel], data.outcomes()[sel], rcond=None)
            B[a] = Xom @ coef
        A = np.zeros((2, 2))
        b = np.zeros(2)
        start = 0
        for c in clusters:
            sl = slice(start, start + c.n)
            start += c.n
            D_own = np.column_stack([np.ones(c.n), np.full(c.n, c.arm)])
            y = np.where(robs[sl], data.outcomes()[sl], 0.0)
            b += D_own.T @ (w[sl] * (y - np.where(robs[sl], B[c.arm][sl], 0.0)))
            for a in (0, 1):
                Da = np.column_stack([np.ones(c.n), np.full(c.n, a)])
                b += 0.5 * Da.T @ B[a][sl]
                A += 0.5 * Da.T @ Da
        np.testing.assert_allclose(fit.beta, np.linalg.solve(A, b), atol=1e-10)


def _fd_stack(seed):
    """Analytic vs central finite-difference derivatives of the stacked system."""
    kind = KINDS[seed % 4]
    placement = (PLACEMENT_VINV_W, PLACEMENT_WHALF)[(seed // 4) % 2]
    corr_kind = (INDEPENDENCE, EXCHANGEABLE)[(seed // 8) % 2]
    data = build_dataset(seed=1000 + seed, n_clusters=6, sizes=(2, 3, 4), missing_rate=0.3)
    kwargs = dict(kind=kind, correlation=corr_kind, weight_placement=placement)
    if kind in ("ipw", "dr"):
        kwargs["ps_spec"] = ModelSpec(terms=("A", "X1"))
    if kind in ("aug", "dr"):
        kwargs["om_spec0"] = ModelSpec(terms=("X1",))
        kwargs["om_spec1"] = ModelSpec(terms=("X2",))
    config = EstimatorConfig(**kwargs)
    prep0 = prepare(data, config)
    corr = WorkingCorrelation(
        kind=corr_kind, alpha=0.2 if corr_kind == EXCHANGEABLE else 0.0
    )
    phi = 1.3
    beta = np.array([0.4, 1.7])

    parts = [beta]
    if prep0.ps_fit is not None:
        parts.append(prep0.ps_fit.coefficients)
    if prep0.om_fit0 is not None:
        parts.extend([prep0.om_fit0.coefficients, prep0.om_fit1.coefficients])
    theta0 = np.concatenate(parts)
    dims = [len(p) for p in parts]
    offs = np.concatenate([[0], np.cumsum(dims)])

    def u_at(theta):
        pos = 1
        ps_fit = None
        if prep0.ps_fit is not None:
            ps_fit = dataclasses.replace(
                prep0.ps_fit, coefficients=theta[offs[pos]:offs[pos + 1]]
            )
            pos += 1
        om_fits = None
        if prep0.om_fit0 is not None:
            om_fits = tuple(
                dataclasses.replace(f, coefficients=theta[offs[pos + a]:offs[pos + a + 1]])
                for a, f in enumerate((prep0.om_fit0, prep0.om_fit1))
            )
        prep = prepare(data, config, ps_fit=ps_fit, om_fits=om_fits)
        return build_stack(prep, theta[:2], corr, phi).u

    analytic = build_stack(prep0, beta, corr, phi).du
    d = len(theta0)
    fd = np.zeros_like(analytic)
    for j in range(d):
        h = 1e-6 * max(1.0, abs(theta0[j]))
        e = np.zeros(d)
        e[j] = h
        fd[:, :, j] = (u_at(theta0 + e) - u_at(theta0 - e)) / (2 * h)
    return analytic, fd


@pytest.mark.parametrize("seed", range(20))
def test_08_analytic_derivatives_match_finite_differences(seed):
    analytic, fd = _fd_stack(seed)
    rel = np.abs(fd - analytic) / np.maximum(1.0, np.abs(analytic))
    assert rel.max() < 1e-5, f"max relative derivative error {rel.max():.2e}"


class TestCriterion09GeneratorPins:
    def test_interference_design_missing_fraction(self):
        fracs = [
            generate_eq5(ScenarioEq5(), seed=[SEED, r]).missing_fraction()
            for r in range(20)
        ]
        assert np.mean(fracs) == pytest.approx(0.26, abs=0.02)

    def test_trial_like_marginal_effect_constant(self):
        assert abs(ScenarioEq6().marginal_effect - 5.73) < 1e-12

    def test_trial_like_missing_fraction(self):
        fracs = [
            generate_eq6(ScenarioEq6(), seed=[SEED, r]).missing_fraction()
            for r in range(20)
        ]
        assert np.mean(fracs) == pytest.approx(0.21, abs=0.03)


def test_10_bitwise_determinism_across_jobs(tmp_path):
    outputs = []
    for jobs in ("1", "8"):
        prefix = str(tmp_path / f"jobs{jobs}")
        code = main(
            [
                "simulate", "--builtin", "table4",
                "--replicates", "100", "--seed", "1", "--jobs", jobs,
                "--out-prefix", prefix, "--quiet",
            ]
        )
        assert code == 0
        with open(f"{prefix}_summary.csv", "rb") as fh:
            outputs.append(fh.read())
    assert outputs[0] == outputs[1]
