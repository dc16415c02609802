"""Cluster-structured trial data: ingestion, validation and design matrices.

Data are held as one immutable block per cluster.  Outcomes may be missing
(NaN, mirrored by a 0/1 observed indicator); covariates must be complete.
Cluster-level summary covariates (means, or modes for categorical columns)
can be appended to capture covariate interference.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

#: Tokens in an outcome cell that denote a missing value (case-sensitive).
MISSING_TOKENS = ("", "NA")


class DatasetError(ValueError):
    """Base class for dataset construction failures."""


class ParseError(DatasetError):
    """A cell could not be parsed as a number."""


class ValidationError(DatasetError):
    """Structural invariant of the dataset is violated."""


@dataclass(frozen=True)
class ClusterBlock:
    """All subjects of one cluster.

    ``outcomes`` holds NaN where the outcome is missing; ``observed`` is the
    matching 0/1 indicator.  ``covariates`` is an (n, P) matrix aligned with
    the dataset-level covariate names.
    """

    cluster_id: str
    arm: int
    outcomes: np.ndarray
    observed: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "outcomes", np.asarray(self.outcomes, dtype=float))
        object.__setattr__(self, "observed", np.asarray(self.observed, dtype=int))
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim != 2:
            cov = cov.reshape(len(self.outcomes), -1)
        object.__setattr__(self, "covariates", cov)
        n = len(self.outcomes)
        if n < 1:
            raise ValidationError(f"cluster {self.cluster_id}: empty cluster")
        if self.arm not in (0, 1):
            raise ValidationError(
                f"cluster {self.cluster_id}: arm must be 0 or 1, got {self.arm}"
            )
        if len(self.observed) != n or cov.shape[0] != n:
            raise ValidationError(
                f"cluster {self.cluster_id}: outcomes/observed/covariates "
                f"lengths disagree ({n}, {len(self.observed)}, {cov.shape[0]})"
            )
        if not set(np.unique(self.observed)) <= {0, 1}:
            raise ValidationError(f"cluster {self.cluster_id}: observed must be 0/1")
        if np.any((self.observed == 1) & ~np.isfinite(self.outcomes)):
            raise ValidationError(
                f"cluster {self.cluster_id}: observed outcome is not finite"
            )
        if np.any((self.observed == 0) & ~np.isnan(self.outcomes)):
            raise ValidationError(
                f"cluster {self.cluster_id}: outcome value present where observed=0"
            )
        if not np.all(np.isfinite(cov)):
            raise ValidationError(
                f"cluster {self.cluster_id}: covariates contain missing/non-finite values"
            )

    @property
    def n(self) -> int:
        return len(self.outcomes)


@dataclass(frozen=True)
class ModelSpec:
    """Ordered covariate terms (plus an always-present intercept).

    Besides plain covariate names, a term may be ``"A"`` (the treatment
    indicator) or ``"A:<name>"`` (treatment-by-covariate interaction); these
    are only meaningful for propensity-score designs.
    """

    terms: tuple[str, ...] = ()
    intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(set(self.terms)) != len(self.terms):
            raise ValidationError(f"duplicate terms in model spec: {self.terms}")

    def validate(self, covariate_names) -> None:
        names = set(covariate_names)
        for t in self.terms:
            base = t[2:] if t.startswith("A:") else t
            if base != "A" and base not in names:
                raise ValidationError(f"unknown covariate in model spec: {t!r}")


@dataclass(frozen=True)
class TrialDataset:
    """A validated cluster-randomized trial dataset."""

    clusters: tuple[ClusterBlock, ...]
    covariate_names: tuple[str, ...]
    p_treat: float | None = None
    categorical: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "categorical", frozenset(self.categorical))
        if not self.clusters:
            raise ValidationError("dataset has no clusters")
        seen = set()
        for c in self.clusters:
            if c.cluster_id in seen:
                raise ValidationError(f"duplicate cluster id {c.cluster_id!r}")
            seen.add(c.cluster_id)
            if c.covariates.shape[1] != len(self.covariate_names):
                raise ValidationError(
                    f"cluster {c.cluster_id}: covariate width "
                    f"{c.covariates.shape[1]} != {len(self.covariate_names)} names"
                )
        arms = {c.arm for c in self.clusters}
        if arms != {0, 1}:
            raise ValidationError(
                f"dataset must contain both arms, found arms {sorted(arms)}"
            )
        if self.p_treat is None:
            treated = sum(c.arm for c in self.clusters)
            object.__setattr__(self, "p_treat", treated / len(self.clusters))
        if not 0.0 < self.p_treat < 1.0:
            raise ValidationError(f"p_treat must be in (0,1), got {self.p_treat}")
        unknown = self.categorical - set(self.covariate_names)
        if unknown:
            raise ValidationError(f"categorical flags name unknown covariates: {sorted(unknown)}")

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_total(self) -> int:
        return sum(c.n for c in self.clusters)

    def column_index(self, name: str) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise ValidationError(f"unknown covariate {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        """Concatenated values of one covariate, in cluster order."""
        k = self.column_index(name)
        return np.concatenate([c.covariates[:, k] for c in self.clusters])

    def outcomes(self) -> np.ndarray:
        return np.concatenate([c.outcomes for c in self.clusters])

    def observed(self) -> np.ndarray:
        return np.concatenate([c.observed for c in self.clusters])

    def arms(self) -> np.ndarray:
        """Per-subject treatment indicator."""
        return np.concatenate([np.full(c.n, c.arm) for c in self.clusters])

    def cluster_index(self) -> np.ndarray:
        """Per-subject index of the containing cluster."""
        return np.concatenate(
            [np.full(c.n, i) for i, c in enumerate(self.clusters)]
        )

    def missing_fraction(self) -> float:
        return 1.0 - self.observed().mean()


def _mode(values: np.ndarray) -> float:
    # Ties broken by the smallest value.
    vals, counts = np.unique(values, return_counts=True)
    return float(vals[np.argmax(counts)])


def load_csv(
    path,
    cluster: str,
    arm: str,
    outcome: str,
    covariates=None,
    p_treat: float | None = None,
    max_categorical_levels: int = 2,
) -> TrialDataset:
    """Load a one-row-per-subject CSV into a :class:`TrialDataset`.

    ``covariates`` defaults to every column other than the three role
    columns.  Rows are grouped by cluster id preserving file order within a
    cluster.  The outcome column may contain a missing token (empty or
    ``"NA"``); any other non-numeric cell is a :class:`ParseError`.
    Covariates with at most ``max_categorical_levels`` distinct values are
    flagged categorical (mode-based cluster summaries).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = list(reader)

    for col in (cluster, arm, outcome):
        if col not in header:
            raise ValidationError(f"{path}: required column {col!r} not in header")
    if covariates is None:
        covariates = [h for h in header if h not in (cluster, arm, outcome)]
    for col in covariates:
        if col not in header:
            raise ValidationError(f"{path}: covariate column {col!r} not in header")

    ci = header.index(cluster)
    ai = header.index(arm)
    oi = header.index(outcome)
    xi = [header.index(c) for c in covariates]

    order: list[str] = []
    groups: dict[str, dict] = {}
    for rownum, row in enumerate(rows, start=2):  # header is line 1
        if len(row) != len(header):
            raise ParseError(f"{path}: row {rownum}: expected {len(header)} cells, got {len(row)}")
        cid = row[ci]
        raw_arm = row[ai].strip()
        if raw_arm not in ("0", "1"):
            raise ValidationError(f"{path}: row {rownum}: arm must be 0 or 1, got {raw_arm!r}")
        a = int(raw_arm)
        tok = row[oi].strip()
        if tok in MISSING_TOKENS:
            y, r = np.nan, 0
        else:
            try:
                y, r = float(tok), 1
            except ValueError:
                raise ParseError(f"{path}: row {rownum}: bad outcome cell {tok!r}") from None
        x = np.empty(len(xi))
        for k, col_idx in enumerate(xi):
            cell = row[col_idx].strip()
            if cell in MISSING_TOKENS:
                raise ValidationError(
                    f"{path}: row {rownum}: missing covariate {covariates[k]!r}"
                )
            try:
                x[k] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {rownum}: bad covariate cell {cell!r} in {covariates[k]!r}"
                ) from None
        if cid not in groups:
            order.append(cid)
            groups[cid] = {"arm": a, "y": [], "r": [], "x": []}
        elif groups[cid]["arm"] != a:
            raise ValidationError(f"{path}: arm varies within cluster {cid!r}")
        g = groups[cid]
        g["y"].append(y)
        g["r"].append(r)
        g["x"].append(x)

    blocks = [
        ClusterBlock(
            cluster_id=cid,
            arm=groups[cid]["arm"],
            outcomes=np.array(groups[cid]["y"]),
            observed=np.array(groups[cid]["r"]),
            covariates=np.array(groups[cid]["x"]).reshape(len(groups[cid]["y"]), len(xi)),
        )
        for cid in order
    ]
    categorical = frozenset(
        name
        for k, name in enumerate(covariates)
        if len(np.unique(np.concatenate([b.covariates[:, k] for b in blocks])))
        <= max_categorical_levels
    )
    return TrialDataset(
        clusters=tuple(blocks),
        covariate_names=tuple(covariates),
        p_treat=p_treat,
        categorical=categorical,
    )


def to_csv(data: TrialDataset, path) -> None:
    """Write a dataset back to CSV (round-trips bit-exactly via ``repr``)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "arm", "outcome", *data.covariate_names])
        for c in data.clusters:
            for j in range(c.n):
                y = "NA" if c.observed[j] == 0 else repr(float(c.outcomes[j]))
                w.writerow(
                    [c.cluster_id, c.arm, y, *[repr(float(v)) for v in c.covariates[j]]]
                )


def append_cluster_means(data: TrialDataset, names) -> TrialDataset:
    """Append cluster-summary columns ``mean_<name>`` for each given covariate.

    The summary is the within-cluster arithmetic mean, or the mode (smallest
    value on ties) for covariates flagged categorical.  Recomputing with the
    same names on the augmented dataset yields identical columns.
    """
    names = list(names)
    idx = [data.column_index(n) for n in names]
    new_names = [f"mean_{n}" for n in names]
    blocks = []
    for c in data.clusters:
        cols = []
        for n, k in zip(names, idx):
            vals = c.covariates[:, k]
            s = _mode(vals) if n in data.categorical else float(vals.mean())
            cols.append(np.full(c.n, s))
        keep = [j for j, nn in enumerate(new_names) if nn not in data.covariate_names]
        extra = np.column_stack([cols[j] for j in keep]) if keep else np.empty((c.n, 0))
        # Overwrite any summary column that already exists.
        cov = c.covariates.copy()
        for j, nn in enumerate(new_names):
            if nn in data.covariate_names:
                cov[:, data.column_index(nn)] = cols[j]
        blocks.append(replace(c, covariates=np.hstack([cov, extra])))
    keep_names = [nn for nn in new_names if nn not in data.covariate_names]
    return replace(
        data,
        clusters=tuple(blocks),
        covariate_names=data.covariate_names + tuple(keep_names),
    )


def design_matrix(
    data: TrialDataset,
    spec: ModelSpec,
    arm_filter: int | None = None,
    observed_only: bool = False,
):
    """Build the intercept-prepended design matrix for a model spec.

    Returns ``(X, rows)`` where ``rows`` maps each matrix row back to its
    ``(cluster_index, subject_index)`` position.
    """
    spec.validate(data.covariate_names)
    rows = []
    chunks = []
    for i, c in enumerate(data.clusters):
        if arm_filter is not None and c.arm != arm_filter:
            continue
        mask = c.observed.astype(bool) if observed_only else np.ones(c.n, dtype=bool)
        if not mask.any():
            continue
        sel = np.flatnonzero(mask)
        cols = [np.ones(len(sel))] if spec.intercept else []
        for t in spec.terms:
            if t == "A":
                cols.append(np.full(len(sel), float(c.arm)))
            elif t.startswith("A:"):
                cols.append(c.arm * c.covariates[sel, data.column_index(t[2:])])
            else:
                cols.append(c.covariates[sel, data.column_index(t)])
        chunks.append(np.column_stack(cols))
        rows.extend((i, int(j)) for j in sel)
    if not chunks:
        raise ValidationError("design_matrix: selection matches no rows")
    return np.vstack(chunks), rows
