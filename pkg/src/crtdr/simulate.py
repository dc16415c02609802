"""Synthetic cluster-randomized trial generators and a Monte Carlo harness.

Two data generating processes are provided: a single-covariate design with
cluster-mean interference in both the outcome and the missingness mechanism,
and a richer trial-like design with seven baseline covariates plus noise
covariates.  Both model the probability of being *missing* on the logit
scale, so the observation propensity is 1 - expit(linear predictor).

The harness runs replicated generate/fit cycles with deterministic
per-replicate seeding: replicate r uses ``np.random.default_rng([seed, r])``,
so results are bitwise identical for any degree of parallelism.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .dataset import ClusterBlock, ModelSpec, TrialDataset
from .estimator import EstimatorConfig, solve

# second parameter of every printed normal law is read as a variance
X_MEANS = (1.0, 2.0, 3.0)
X_SD = math.sqrt(5.0)


class SimulationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scenarios

@dataclass(frozen=True)
class ScenarioEq5:
    """Single-covariate design with cluster-mean interference.

    Outcome: Y = b0 + bA A + b1 X1 + bI1 mean(X1) + bA1 A X1 + eps_i + eps_ij.
    Missingness: logit P(R=0) has the same five-term structure with beta_m;
    ``beta_m=None`` switches missingness off entirely.
    """

    n_clusters: int = 100
    size_menu: tuple = (90, 100, 110)
    beta_o: tuple = (1.0, 1.0, 1.0, 1.0, 1.0)
    beta_m: tuple | None = (-3.0, 0.5, 0.5, 0.5, 0.5)
    sd_cluster: float = math.sqrt(0.05)
    sd_indiv: float = 1.0
    p_treat: float = 0.5

    @property
    def marginal_effect(self) -> float:
        # identity link: effect = bA + bA1 * E[X1]
        return self.beta_o[1] + self.beta_o[4] * X_MEANS[0]


EQ6_COVARIATE_MEANS = {
    "EMP": 0.25,
    "MARI": 0.23,
    "AGE": 27.0,
    "REL": 0.0,
    "CAGE": 2.1,
    "HIV": 14.0,
    "CDM": 3.0,
}

EQ6_OUTCOME_COEF = (
    ("1", 60.0),
    ("A", 40.0),
    ("EMP", -9.0),
    ("MARI", -8.0),
    ("CDM", 1.0),
    ("REL", 5.0),
    ("A:AGE", -2.0),
    ("A:EMP", 8.5),
    ("A:MARI", 3.5),
    ("A:HIV", 1.5),
    ("A:CAGE", -2.0),
    ("A:REL", 2.0),
    ("mean_AGE", -0.5),
    ("mean_CDM", -7.0),
    ("mean_REL", -5.0),
    ("mean_HIV", 1.0),
)

EQ6_MISSING_COEF = (
    ("1", -3.0),
    ("A", 2.0),
    ("AGE", 0.01),
    ("HIV", -0.1),
    ("A:AGE", -0.1),
    ("A:HIV", -0.2),
    ("mean_AGE", 0.02),
    ("mean_CDM", 0.2),
    ("mean_CAGE", 0.2),
)


@dataclass(frozen=True)
class ScenarioEq6:
    """Trial-like design with seven baseline covariates plus three noise ones.

    Coefficients follow the fixed outcome / missingness vectors above.  With
    ``center_missing_interactions`` (the default) the treatment interactions
    in the missingness model act on mean-centered AGE and HIV; the uncentered
    form is retained as an option.
    """

    n_clusters: int = 50
    size_menu: tuple = (20, 30, 30)
    sd_cluster: float = math.sqrt(5.0)
    sd_indiv: float = 2.0
    p_treat: float = 0.5
    missingness: bool = True
    center_missing_interactions: bool = True

    @property
    def marginal_effect(self) -> float:
        eff = 0.0
        for term, c in EQ6_OUTCOME_COEF:
            if term == "A":
                eff += c
            elif term.startswith("A:"):
                eff += c * EQ6_COVARIATE_MEANS[term[2:]]
        return eff


# ---------------------------------------------------------------------------
# generators

def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_eq5(scenario: ScenarioEq5, seed) -> TrialDataset:
    """One trial draw; cluster means of X1..X3 appended as covariates."""
    rng = _as_rng(seed)
    names = ("X1", "X2", "X3", "mean_X1", "mean_X2", "mean_X3")
    b = scenario.beta_o
    clusters = []
    for i in range(scenario.n_clusters):
        n = int(rng.choice(scenario.size_menu))
        arm = int(rng.random() < scenario.p_treat)
        X = np.column_stack(
            [rng.normal(m, X_SD, n) for m in X_MEANS]
        )
        means = X.mean(axis=0)
        x1 = X[:, 0]
        y = (
            b[0] + b[1] * arm + b[2] * x1 + b[3] * means[0] + b[4] * arm * x1
            + rng.normal(0.0, scenario.sd_cluster)
            + rng.normal(0.0, scenario.sd_indiv, n)
        )
        if scenario.beta_m is None:
            observed = np.ones(n, dtype=int)
        else:
            m = scenario.beta_m
            lp = m[0] + m[1] * arm + m[2] * x1 + m[3] * means[0] + m[4] * arm * x1
            observed = (rng.random(n) >= expit(lp)).astype(int)
        clusters.append(
            ClusterBlock(
                cluster_id=str(i + 1),
                arm=arm,
                outcomes=np.where(observed == 1, y, np.nan),
                observed=observed,
                covariates=np.column_stack([X, np.tile(means, (n, 1))]),
            )
        )
    return TrialDataset(
        clusters=tuple(clusters),
        covariate_names=names,
        p_treat=scenario.p_treat,
    )


def _mode_smallest(values: np.ndarray) -> float:
    vals, counts = np.unique(values, return_counts=True)
    return float(vals[np.argmax(counts)])


def generate_eq6(scenario: ScenarioEq6, seed) -> TrialDataset:
    """One trial-like draw with interference through cluster summaries."""
    rng = _as_rng(seed)
    names = (
        "EMP", "MARI", "AGE", "REL", "CAGE", "HIV", "CDM",
        "X1", "X2", "X3",
        "mean_AGE", "mean_REL", "mean_HIV", "mean_CDM", "mean_CAGE",
    )
    cage_p = (0.3, 0.1, 0.1, 0.2, 0.3)
    clusters = []
    for i in range(scenario.n_clusters):
        n = int(rng.choice(scenario.size_menu))
        arm = int(rng.random() < scenario.p_treat)
        cov = {
            "EMP": (rng.random(n) < 0.25).astype(float),
            "MARI": (rng.random(n) < 0.23).astype(float),
            "AGE": rng.normal(27.0, math.sqrt(7.0), n),
            "REL": rng.normal(0.0, math.sqrt(0.8), n),
            "CAGE": rng.choice(5, size=n, p=cage_p).astype(float),
            "HIV": rng.normal(14.0, 2.0, n),
            "CDM": rng.normal(3.0, 1.0, n),
        }
        for name, m in zip(("X1", "X2", "X3"), X_MEANS):
            cov[name] = rng.normal(m, X_SD, n)
        for name in ("AGE", "REL", "HIV", "CDM"):
            cov["mean_" + name] = np.full(n, cov[name].mean())
        cov["mean_CAGE"] = np.full(n, _mode_smallest(cov["CAGE"]))

        def lp_of(coef, centered=False):
            out = np.zeros(n)
            for term, c in coef:
                if term == "1":
                    out += c
                elif term == "A":
                    out += c * arm
                elif term.startswith("A:"):
                    x = cov[term[2:]]
                    if centered:
                        x = x - EQ6_COVARIATE_MEANS[term[2:]]
                    out += c * arm * x
                else:
                    out += c * cov[term]
            return out

        y = (
            lp_of(EQ6_OUTCOME_COEF)
            + rng.normal(0.0, scenario.sd_cluster)
            + rng.normal(0.0, scenario.sd_indiv, n)
        )
        if scenario.missingness:
            lp = lp_of(EQ6_MISSING_COEF, centered=scenario.center_missing_interactions)
            observed = (rng.random(n) >= expit(lp)).astype(int)
        else:
            observed = np.ones(n, dtype=int)
        clusters.append(
            ClusterBlock(
                cluster_id=str(i + 1),
                arm=arm,
                outcomes=np.where(observed == 1, y, np.nan),
                observed=observed,
                covariates=np.column_stack([cov[k] for k in names]),
            )
        )
    return TrialDataset(
        clusters=tuple(clusters),
        covariate_names=names,
        p_treat=scenario.p_treat,
        categorical=frozenset({"EMP", "MARI", "CAGE"}),
    )


def generate(scenario, seed) -> TrialDataset:
    if isinstance(scenario, ScenarioEq5):
        return generate_eq5(scenario, seed)
    if isinstance(scenario, ScenarioEq6):
        return generate_eq6(scenario, seed)
    raise SimulationError(f"unknown scenario type {type(scenario).__name__}")


def empirical_icc(data: TrialDataset) -> float:
    """One-way ANOVA intra-cluster correlation of the observed outcomes.

    Outcomes are demeaned within arm first so the treatment effect does not
    inflate the between-cluster mean square.
    """
    groups = []
    arm_means = {}
    for a in (0, 1):
        pooled = np.concatenate(
            [
                c.outcomes[c.observed.astype(bool)]
                for c in data.clusters
                if c.arm == a and c.observed.sum() > 0
            ]
            or [np.empty(0)]
        )
        arm_means[a] = pooled.mean() if pooled.size else 0.0
    groups = [
        c.outcomes[c.observed.astype(bool)] - arm_means[c.arm]
        for c in data.clusters
        if c.observed.sum() > 0
    ]
    if len(groups) < 2:
        return float("nan")
    sizes = np.array([g.size for g in groups], dtype=float)
    N = sizes.sum()
    grand = np.concatenate(groups).mean()
    ssb = float(sum(g.size * (g.mean() - grand) ** 2 for g in groups))
    ssw = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    k = len(groups)
    msb = ssb / (k - 1)
    msw = ssw / max(N - k, 1.0)
    n0 = (N - (sizes ** 2).sum() / N) / (k - 1)
    return (msb - msw) / (msb + (n0 - 1) * msw)


# ---------------------------------------------------------------------------
# Monte Carlo harness

ESTIMATE_FIELDS = (
    "rep", "estimator", "m_e_star", "beta0", "beta_a",
    "se_robust", "se_fay", "alpha", "phi", "converged",
    "missing_fraction", "icc", "error",
)


@dataclass
class SummaryRow:
    estimator: str
    n_reps: int
    n_failed: int
    m_e_star: float
    bias: float
    se_empirical: float
    se_robust_mean: float
    se_fay_mean: float
    coverage_robust: float
    coverage_fay: float
    missing_fraction_mean: float
    icc_mean: float


@dataclass
class McSummary:
    rows: list
    level: float = 0.95

    @property
    def excess_failures(self) -> bool:
        return any(
            r.n_failed > 0.05 * (r.n_reps + r.n_failed) for r in self.rows
        )


@dataclass
class McResult:
    records: list
    m_e_star: float
    seed: int
    replicates: int
    estimator_order: list

    def summary(self, level: float = 0.95) -> McSummary:
        return summarize_records(self.records, level=level)


def _replicate(scenario, configs, seed, rep):
    rng = np.random.default_rng([seed, rep])
    try:
        data = generate(scenario, rng)
        gen_error = ""
        mf = data.missing_fraction()
        icc = empirical_icc(data)
    except Exception as exc:  # noqa: BLE001 - e.g. all clusters drew one arm
        data = None
        gen_error = f"generation failed: {type(exc).__name__}: {exc}"
        mf = icc = float("nan")
    m_e = scenario.marginal_effect
    rows = []
    for cfg in configs:
        row = {
            "rep": rep, "estimator": cfg.name(), "m_e_star": m_e,
            "beta0": float("nan"), "beta_a": float("nan"),
            "se_robust": float("nan"), "se_fay": float("nan"),
            "alpha": float("nan"), "phi": float("nan"),
            "converged": 0, "missing_fraction": mf, "icc": icc, "error": gen_error,
        }
        if data is None:
            rows.append(row)
            continue
        try:
            fit = solve(data, cfg)
            row.update(
                beta0=float(fit.beta[0]),
                beta_a=float(fit.beta[1]),
                se_robust=fit.se.get("nuisance_adjusted", float("nan")),
                se_fay=fit.se.get("fay", float("nan")),
                alpha=fit.alpha,
                phi=fit.phi,
                converged=int(fit.converged),
            )
            if not fit.converged:
                row["error"] = "did not converge"
        except Exception as exc:  # noqa: BLE001 - replicate failures are data
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def run_mc(scenario, configs, replicates: int, seed: int, jobs: int = 1) -> McResult:
    """Replicated generate/fit cycles; deterministic for any ``jobs``."""
    if replicates < 2:
        raise SimulationError("need at least 2 replicates")
    configs = list(configs)
    names = [c.name() for c in configs]
    if len(set(names)) != len(names):
        raise SimulationError(f"estimator labels must be unique, got {names}")
    if jobs <= 1:
        chunks = [_replicate(scenario, configs, seed, r) for r in range(replicates)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(
                pool.map(
                    _replicate,
                    [scenario] * replicates,
                    [configs] * replicates,
                    [seed] * replicates,
                    range(replicates),
                    chunksize=max(1, replicates // (4 * jobs)),
                )
            )
    records = [row for chunk in chunks for row in chunk]
    return McResult(
        records=records,
        m_e_star=scenario.marginal_effect,
        seed=seed,
        replicates=replicates,
        estimator_order=names,
    )


def summarize_records(records, level: float = 0.95) -> McSummary:
    """Bias / SE / coverage rows per estimator, in first-appearance order."""
    z = float(norm.ppf(0.5 + level / 2.0))
    order = []
    by_est = {}
    for row in records:
        name = row["estimator"]
        if name not in by_est:
            by_est[name] = []
            order.append(name)
        by_est[name].append(row)
    out = []
    for name in order:
        rows = by_est[name]
        ok = [r for r in rows if not r["error"] and np.isfinite(r["beta_a"])]
        n_failed = len(rows) - len(ok)
        if not ok:
            raise SimulationError(f"all replicates failed for {name}")
        m_e = ok[0]["m_e_star"]
        bah = np.array([r["beta_a"] for r in ok])
        ser = np.array([r["se_robust"] for r in ok])
        sef = np.array([r["se_fay"] for r in ok])
        cover_r = np.abs(bah - m_e) <= z * ser
        cover_f = np.abs(bah - m_e) <= z * sef
        out.append(
            SummaryRow(
                estimator=name,
                n_reps=len(ok),
                n_failed=n_failed,
                m_e_star=float(m_e),
                bias=float(bah.mean() - m_e),
                se_empirical=float(bah.std(ddof=1)) if len(ok) > 1 else float("nan"),
                se_robust_mean=float(ser.mean()),
                se_fay_mean=float(sef.mean()),
                coverage_robust=float(cover_r.mean()),
                coverage_fay=float(cover_f.mean()),
                missing_fraction_mean=float(np.mean([r["missing_fraction"] for r in ok])),
                icc_mean=float(np.mean([r["icc"] for r in ok])),
            )
        )
    return McSummary(rows=out, level=level)


# ---------------------------------------------------------------------------
# serialization

SUMMARY_COLUMNS = (
    "estimator", "n_reps", "n_failed", "m_e_star", "bias", "se_empirical",
    "se_robust_mean", "se_fay_mean", "coverage_robust", "coverage_fay",
    "missing_fraction_mean", "icc_mean",
)


def _cell(value) -> str:
    if isinstance(value, float):
        return "NA" if not np.isfinite(value) else repr(float(value))
    return str(value)


def write_estimates_csv(records, stream) -> None:
    writer = csv.DictWriter(stream, fieldnames=ESTIMATE_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in records:
        writer.writerow({k: _cell(row[k]) for k in ESTIMATE_FIELDS})


def read_estimates_csv(stream) -> list:
    int_fields = {"rep", "converged"}
    str_fields = {"estimator", "error"}
    out = []
    for row in csv.DictReader(stream):
        missing = set(ESTIMATE_FIELDS) - set(row)
        if missing:
            raise SimulationError(
                f"estimates file lacks columns: {sorted(missing)}"
            )
        parsed = {}
        for k in ESTIMATE_FIELDS:
            v = row[k]
            if k in str_fields:
                parsed[k] = v
            elif k in int_fields:
                parsed[k] = int(v)
            else:
                parsed[k] = float("nan") if v == "NA" else float(v)
        out.append(parsed)
    return out


def summarize_to_table(summary: McSummary, fmt: str = "csv") -> str:
    """Render summary rows as csv, json, or a markdown pipe table."""
    if fmt == "json":
        payload = [
            {c: getattr(r, c) for c in SUMMARY_COLUMNS} for r in summary.rows
        ]
        for row in payload:
            for k, v in row.items():
                if isinstance(v, float) and not np.isfinite(v):
                    row[k] = None
        return json.dumps(
            {"level": summary.level, "rows": payload}, indent=2
        ) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for r in summary.rows:
            writer.writerow([_cell(getattr(r, c)) for c in SUMMARY_COLUMNS])
        return buf.getvalue()
    if fmt == "markdown":
        lines = [
            "| " + " | ".join(SUMMARY_COLUMNS) + " |",
            "|" + "|".join(["---"] * len(SUMMARY_COLUMNS)) + "|",
        ]
        for r in summary.rows:
            lines.append(
                "| " + " | ".join(_cell(getattr(r, c)) for c in SUMMARY_COLUMNS) + " |"
            )
        return "\n".join(lines) + "\n"
    raise SimulationError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# builtin study configurations

OM_TRUE = ModelSpec(terms=("X1", "mean_X1"))
OM_MISS = ModelSpec(terms=("X2",))
PS_TRUE = ModelSpec(terms=("A", "X1", "mean_X1", "A:X1"))
PS_MISS = ModelSpec(terms=("A", "X2"))
PS_NONE = ModelSpec(terms=("A", "X1", "mean_X1"))

STEPWISE_OM_EQ5 = ("X1", "X2", "X3", "mean_X1", "mean_X2", "mean_X3")
STEPWISE_PS_EQ5 = ("A",) + STEPWISE_OM_EQ5
STEPWISE_OM_EQ6 = (
    "EMP", "MARI", "AGE", "REL", "CAGE", "HIV", "CDM", "X1", "X2", "X3",
)
STEPWISE_PS_EQ6 = ("A",) + STEPWISE_OM_EQ6

_CORR_SUFFIX = {"independence": "I", "exchangeable": "E"}


def scenario_table3(small: bool = False) -> ScenarioEq5:
    if small:
        return ScenarioEq5(n_clusters=10, size_menu=(10, 20, 30))
    return ScenarioEq5()


def scenario_table4(small: bool = False, high_correlation: bool = False) -> ScenarioEq5:
    sc = scenario_table3(small=small)
    if high_correlation:
        return ScenarioEq5(
            n_clusters=sc.n_clusters,
            size_menu=sc.size_menu,
            sd_cluster=math.sqrt(0.25),
        )
    return sc


def scenario_table5(small: bool = False) -> ScenarioEq6:
    if small:
        return ScenarioEq6(n_clusters=10, size_menu=(10, 20, 30))
    return ScenarioEq6()


def configs_table3(
    om: str = "true",
    ps: str = "true",
    correlations=("independence",),
    weight_placement: str = "vinv_w",
) -> list:
    """DR variants for the double-robustness grid (om/ps in true, miss, none)."""
    om_spec = {"true": OM_TRUE, "miss": OM_MISS}[om]
    ps_spec = {"true": PS_TRUE, "miss": PS_MISS, "none": PS_NONE}[ps]
    out = []
    for corr in correlations:
        out.append(
            EstimatorConfig(
                kind="dr",
                correlation=corr,
                weight_placement=weight_placement,
                ps_spec=ps_spec,
                om_spec0=om_spec,
                om_spec1=om_spec,
                label=f"DR-{_CORR_SUFFIX[corr]} om={om} ps={ps}",
            )
        )
    return out


def configs_table4(correlations=("independence", "exchangeable")) -> list:
    out = []
    for corr in correlations:
        out.append(EstimatorConfig(kind="gee", correlation=corr))
        out.append(
            EstimatorConfig(kind="ipw", correlation=corr, stepwise_ps=STEPWISE_PS_EQ5)
        )
        out.append(
            EstimatorConfig(kind="aug", correlation=corr, stepwise_om=STEPWISE_OM_EQ5)
        )
        out.append(
            EstimatorConfig(
                kind="dr",
                correlation=corr,
                stepwise_ps=STEPWISE_PS_EQ5,
                stepwise_om=STEPWISE_OM_EQ5,
            )
        )
    return out


def configs_table5(correlations=("independence", "exchangeable")) -> list:
    out = []
    for corr in correlations:
        out.append(EstimatorConfig(kind="gee", correlation=corr))
        out.append(
            EstimatorConfig(kind="ipw", correlation=corr, stepwise_ps=STEPWISE_PS_EQ6)
        )
        out.append(
            EstimatorConfig(kind="aug", correlation=corr, stepwise_om=STEPWISE_OM_EQ6)
        )
        out.append(
            EstimatorConfig(
                kind="dr",
                correlation=corr,
                stepwise_ps=STEPWISE_PS_EQ6,
                stepwise_om=STEPWISE_OM_EQ6,
            )
        )
    return out


BUILTIN_STUDIES = {
    "table3": (scenario_table3, lambda: configs_table3(om="true", ps="true")),
    "table4": (scenario_table4, configs_table4),
    "table5": (scenario_table5, configs_table5),
}
