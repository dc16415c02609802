"""Shared builders for small deterministic test datasets."""
import numpy as np
import pytest

from crtdr.dataset import ClusterBlock, TrialDataset


def build_dataset(
    seed=0,
    n_clusters=8,
    sizes=(3, 4, 5),
    missing_rate=0.25,
    covariate_names=("X1", "X2"),
    p_treat=None,
):
    """Random small dataset with both arms and some missing outcomes."""
    rng = np.random.default_rng(seed)
    clusters = []
    arms = ([0, 1] * n_clusters)[:n_clusters]
    for i in range(n_clusters):
        n = int(rng.choice(sizes))
        arm = arms[i]
        X = rng.normal(size=(n, len(covariate_names)))
        y = 1.0 + 2.0 * arm + X[:, 0] + rng.normal(size=n)
        observed = (rng.random(n) >= missing_rate).astype(int)
        if observed.sum() == 0:
            observed[0] = 1
        clusters.append(
            ClusterBlock(
                cluster_id=f"c{i}",
                arm=arm,
                outcomes=np.where(observed == 1, y, np.nan),
                observed=observed,
                covariates=X,
            )
        )
    return TrialDataset(
        clusters=tuple(clusters),
        covariate_names=tuple(covariate_names),
        p_treat=p_treat,
    )


def build_complete_dataset(seed=0, n_clusters=6, sizes=(3, 4)):
    return build_dataset(seed=seed, n_clusters=n_clusters, sizes=sizes, missing_rate=0.0)


@pytest.fixture
def small_data():
    return build_dataset(seed=42)


@pytest.fixture
def complete_data():
    return build_complete_dataset(seed=7)
