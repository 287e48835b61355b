"""Shared fixtures: corpus datasets and randomized connected networks."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from nmacompare import (
    ContrastObservation,
    EffectMeasure,
    NetworkDataset,
    build_design_matrix,
    fit_fe,
    load_dataset,
    q_decompose,
)

CORPUS_DIR = Path(__file__).resolve().parent.parent / "corpus"

NSAID_PATH = CORPUS_DIR / "nsaid_pain_relief.json"
SMOKE_PATH = CORPUS_DIR / "smoke_alarm_interventions.json"
BIOLOGICS_PATH = CORPUS_DIR / "biologics_acr70.json"

# Reference per-study heterogeneity contributions for the NSAID network, in
# file order (3-significant-figure inputs, so recomputed values are checked
# to max(0.05, 2%) each).
NSAID_PER_STUDY = [
    0.908, 0.0528, 2.76,
    6.00, 2.03, 1.52, 5.12, 4.55,
    0.0225, 0.512, 3.06,
    0.321, 2.58, 0.0999, 4.33, 9.25, 0.0218,
    1.48, 1.24, 0.103, 3.36, 1.57, 23.3, 2.79, 0.00983, 0.815,
    0.0690, 3.50, 0.922,
]


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return CORPUS_DIR


@pytest.fixture(scope="session")
def nsaid() -> NetworkDataset:
    return load_dataset(NSAID_PATH)


@pytest.fixture(scope="session")
def smoke() -> NetworkDataset:
    return load_dataset(SMOKE_PATH)


@pytest.fixture(scope="session")
def biologics() -> NetworkDataset:
    return load_dataset(BIOLOGICS_PATH)


def make_dataset(rows, measure=EffectMeasure.MD, name="test", reference=""):
    """Dataset from (treat_a, treat_b, effect, se) tuples with row ids s1, s2, ..."""
    studies = tuple(
        ContrastObservation(f"s{i + 1}", a, b, y, s) for i, (a, b, y, s) in enumerate(rows)
    )
    return NetworkDataset(name, measure, studies, reference)


def single_pair(effects, ses, measure=EffectMeasure.MD):
    """All studies compare the same two treatments P (baseline) and A."""
    return make_dataset(
        [("P", "A", y, s) for y, s in zip(effects, ses)], measure, reference="P"
    )


def random_network(
    rng: np.random.Generator,
    max_treatments: int = 8,
    max_studies: int = 40,
    se_range: tuple[float, float] = (0.3, 1.5),
    random_orientation: bool = True,
) -> NetworkDataset:
    """Random connected two-arm network with at least one residual degree of freedom.

    A spanning tree guarantees connectivity; extra studies over random pairs
    add repeated designs and loops.
    """
    n = int(rng.integers(2, max_treatments + 1))
    treatments = [f"T{j}" for j in range(n)]
    edges = []
    for j in range(1, n):
        k = int(rng.integers(0, j))
        edges.append((treatments[k], treatments[j]))
    m = int(rng.integers(n, max_studies + 1))
    while len(edges) < m:
        a, b = rng.choice(n, size=2, replace=False)
        edges.append((treatments[int(a)], treatments[int(b)]))

    d_true = rng.normal(0.0, 1.0, size=n)
    d_true[0] = 0.0
    index = {t: j for j, t in enumerate(treatments)}
    tau = float(rng.uniform(0.0, 0.8))
    studies = []
    for i, (a, b) in enumerate(edges):
        se = float(rng.uniform(*se_range))
        mean = d_true[index[b]] - d_true[index[a]]
        y = float(rng.normal(mean, math.hypot(se, tau)))
        if random_orientation and rng.random() < 0.5:
            a, b, y = b, a, -y
        studies.append(ContrastObservation(f"s{i + 1}", a, b, y, se))
    measure = (EffectMeasure.MD, EffectMeasure.LOG_OR, EffectMeasure.LOG_RR)[
        int(rng.integers(0, 3))
    ]
    return NetworkDataset("sim", measure, tuple(studies))


def decompose(ds: NetworkDataset):
    """Convenience: (design matrix, FE fit, Q decomposition) for a dataset."""
    x = build_design_matrix(ds)
    fe = fit_fe(ds, x)
    return x, fe, q_decompose(ds, x, fe)


def reml_restricted_loglik_grid(ds, x, grid):
    """Independent batched restricted log-likelihood over tau^2 values.

    Test oracle: recomputes -1/2 [log det(Sigma) + log det(X' Sigma^-1 X)
    + r' Sigma^-1 r] from scratch with stacked linear algebra, without
    touching the production objective code.
    """
    y = ds.effects()
    v = ds.variances()
    mat = x.matrix
    grid = np.asarray(grid, dtype=float)
    out = np.empty(grid.size)
    for start in range(0, grid.size, 2048):
        chunk = grid[start : start + 2048]
        sig = v[None, :] + chunk[:, None]
        xs = mat[None, :, :] / sig[:, :, None]
        gram = np.einsum("mp,gmq->gpq", mat, xs)
        rhs = np.einsum("gmp,m->gp", xs, y)
        # numpy >= 2 treats 2-D b as a matrix, so solve one explicit column
        d = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
        resid = y[None, :] - np.einsum("mp,gp->gm", mat, d)
        quad = np.sum(resid * resid / sig, axis=1)
        _, logdet = np.linalg.slogdet(gram)
        out[start : start + chunk.size] = -0.5 * (
            np.sum(np.log(sig), axis=1) + logdet + quad
        )
    return out


def reml_grid_argmax(ds, x, hi, points=100_001, refinements=2):
    """Grid-search oracle for the REML maximizer: dense scan plus refinement."""
    grid = np.linspace(0.0, hi, points)
    values = reml_restricted_loglik_grid(ds, x, grid)
    best = float(grid[int(np.argmax(values))])
    spacing = float(grid[1] - grid[0])
    for _ in range(refinements):
        grid = np.linspace(max(0.0, best - spacing), best + spacing, 10_001)
        values = reml_restricted_loglik_grid(ds, x, grid)
        best = float(grid[int(np.argmax(values))])
        spacing = float(grid[1] - grid[0])
    return best


def enumerate_small_connected_networks(max_m: int = 6, seed: int = 31):
    """Every connected multigraph on up to four treatments with m <= max_m studies.

    Yields (rows, dataset) pairs; effects and standard errors come from a
    fixed-seed stream so the enumeration is reproducible. Rows are generated
    in canonical orientation.
    """
    from itertools import combinations, combinations_with_replacement

    from nmacompare import connected_components

    labels = ("A", "B", "C", "D")
    pairs = [(labels[i], labels[j]) for i, j in combinations(range(4), 2)]
    rng = np.random.default_rng(seed)
    for m in range(1, max_m + 1):
        for combo in combinations_with_replacement(pairs, m):
            nodes = sorted({t for pair in combo for t in pair})
            if len(connected_components(nodes, combo)) > 1:
                continue
            rows = [
                (a, b, float(rng.normal()), float(rng.uniform(0.3, 1.5)))
                for a, b in combo
            ]
            yield rows, make_dataset(rows, measure=EffectMeasure.MD)


def classical_cochran_q(rows) -> float:
    """Textbook per-design Cochran Q, summed over designs.

    Uses the uncentered identity Q = sum(w y^2) - (sum(w y))^2 / sum(w), a
    different algebraic route than the centered implementation formula, so it
    serves as an independent oracle.
    """
    groups: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for a, b, y, s in rows:
        groups.setdefault((a, b), []).append((y, s))
    total = 0.0
    for members in groups.values():
        w = np.array([1.0 / s**2 for _, s in members])
        y = np.array([y for y, _ in members])
        total += float(np.sum(w * y**2) - np.sum(w * y) ** 2 / np.sum(w))
    return total
