import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gust.exceptions import DegenerateVariance, PerplexityTooLarge, TooFewRealPoints
from gust.metrics import (GENERATED, REAL, CellEmbedding, MetricConfig, coverage, density,
                          embed, embed_points, kde_curve, knn_radii, pca_embed,
                          silverman_bandwidth, tsne_embed, wasserstein1, welch_p_value,
                          write_kde_csv, write_metric_csv)

from conftest import random_cell


def brute_density_coverage(real, gen, k):
    """O(N*M) loops over Python floats."""
    real, gen = np.atleast_2d(real).tolist(), np.atleast_2d(gen).tolist()

    def dist(p, q):
        s = 0.0
        for a, b in zip(p, q):
            s += (a - b) ** 2
        return math.sqrt(s)

    radii = []
    for i, p in enumerate(real):
        ds = sorted(dist(p, q) for j, q in enumerate(real) if j != i)
        radii.append(ds[k - 1])
    count, covered = 0, 0
    for p, r in zip(real, radii):
        hits = sum(1 for g in gen if dist(p, g) <= r)
        count += hits
        covered += hits > 0
    return count / (k * len(gen)), covered / len(real)


def test_hand_case():
    real = np.array([[0.0], [1.0]])
    gen = np.array([[0.5], [2.0]])
    assert density(real, gen, k=1) == 1.5
    assert coverage(real, gen, k=1) == 1.0
    assert brute_density_coverage(real, gen, 1) == (1.5, 1.0)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(12):
        k = int(rng.integers(1, 6))
        n, m = int(rng.integers(k + 1, 60)), int(rng.integers(1, 60))
        d = int(rng.integers(1, 4))
        real = rng.standard_normal((n, d))
        gen = rng.standard_normal((m, d)) * rng.uniform(0.5, 2)
        assert (density(real, gen, k), coverage(real, gen, k)) == \
            brute_density_coverage(real, gen, k)


def test_lattice_ties_follow_closed_balls():
    # integer points make many distances tie exactly with the radii
    real = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    gen = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 0.5]])
    assert (density(real, gen, 2), coverage(real, gen, 2)) == \
        brute_density_coverage(real, gen, 2)


def test_isometry_invariance(rng):
    real = rng.standard_normal((80, 3))
    gen = rng.standard_normal((60, 3)) * 1.3
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    shift = rng.standard_normal(3)
    base = (density(real, gen), coverage(real, gen))
    moved = (density(real @ q + shift, gen @ q + shift), coverage(real @ q + shift, gen @ q + shift))
    assert moved == pytest.approx(base, abs=1e-12)


def test_self_comparison_and_far_away(rng):
    real = rng.standard_normal((50, 2))
    assert coverage(real, real) == 1.0
    assert density(real, real + 1e3) == 0.0
    assert coverage(real, real + 1e3) == 0.0


def test_knn_radii_and_errors(rng):
    real = np.array([[0.0], [1.0], [3.0]])
    np.testing.assert_array_equal(knn_radii(real, 1), [1.0, 1.0, 2.0])
    np.testing.assert_array_equal(knn_radii(real, 2), [3.0, 2.0, 3.0])
    with pytest.raises(TooFewRealPoints):
        density(real, real, k=3)
    with pytest.raises(ValueError):
        density(real, np.zeros((2, 2)), k=1)
    with pytest.raises(ValueError):
        coverage(np.array([[np.nan], [0.0], [1.0]]), real, k=1)


def test_accepts_embedded_sets(rng):
    cells = np.stack([random_cell(rng, (6, 6)) for _ in range(24)])
    r, g = embed(cells[:12], cells[12:], MetricConfig(embedding="pca"))
    assert (r.source, g.source) == (REAL, GENERATED) and len(r) == len(g) == 12
    assert density(r, g, 2) == density(r.points, g.points, 2)


# -- Wasserstein-1 --------------------------------------------------------------

def test_w1_known_values():
    assert wasserstein1([0, 2], [1, 3]) == 1.0
    assert wasserstein1([0.0], [5.0]) == 5.0
    assert wasserstein1([1, 1, 1], [1]) == 0.0
    assert wasserstein1([0, 1], [0, 0, 1, 1]) == 0.0


samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=30)


@settings(max_examples=200, deadline=None)
@given(samples, samples, samples)
def test_w1_metric_axioms(a, b, c):
    ab, ba = wasserstein1(a, b), wasserstein1(b, a)
    assert wasserstein1(a, a) == 0.0
    assert ab >= 0
    assert abs(ab - ba) <= 1e-12 * max(1.0, ab)
    assert wasserstein1(a, c) <= ab + wasserstein1(b, c) + 1e-12 * max(1.0, ab)
    assert ab == pytest.approx(stats.wasserstein_distance(a, b), rel=1e-9, abs=1e-9)


def test_w1_shift():
    rng = np.random.default_rng(3)
    a = rng.standard_normal(500)
    assert wasserstein1(a, a + 0.25) == pytest.approx(0.25, rel=1e-12)
    with pytest.raises(ValueError):
        wasserstein1([], [1.0])
    with pytest.raises(ValueError):
        wasserstein1([np.inf], [1.0])


# -- KDE and Welch ---------------------------------------------------------------

def test_silverman_rule():
    x = np.random.default_rng(0).standard_normal(400)
    iqr = np.percentile(x, 75) - np.percentile(x, 25)
    expect = 0.9 * min(np.std(x, ddof=1), iqr / 1.349) * 400 ** -0.2
    assert silverman_bandwidth(x) == pytest.approx(expect, rel=1e-14)


def test_kde_normalization_and_grid():
    x = np.random.default_rng(1).standard_normal(5000)
    grid, dens = kde_curve(x)
    h = silverman_bandwidth(x)
    assert len(grid) == 256
    assert grid[0] == pytest.approx(x.min() - 3 * h) and grid[-1] == pytest.approx(x.max() + 3 * h)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=2e-3)


def test_kde_pointwise_formula():
    x = np.array([0.0, 1.0, 4.0])
    grid, dens = kde_curve(x, bandwidth=0.7, n_grid=11)
    for g, d in zip(grid, dens):
        expect = sum(math.exp(-0.5 * ((g - xi) / 0.7) ** 2) for xi in x) / (3 * 0.7 * math.sqrt(2 * math.pi))
        assert d == pytest.approx(expect, rel=1e-12)


def test_kde_zero_spread():
    grid, dens = kde_curve([2.0, 2.0, 2.0])
    h = 1e-3 * 2.0 + 1e-9
    assert grid[0] == pytest.approx(2.0 - 3 * h)
    assert np.all(np.isfinite(dens)) and dens.max() > 0
    with pytest.raises(ValueError):
        kde_curve([1.0])


def test_welch_against_hand_formula():
    rng = np.random.default_rng(2)
    a, b = rng.normal(0, 1, 30), rng.normal(0.5, 2, 45)
    va, vb = a.var(ddof=1) / 30, b.var(ddof=1) / 45
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va**2 / 29 + vb**2 / 44)
    assert welch_p_value(a, b) == pytest.approx(2 * stats.t.sf(abs(t), dof), rel=1e-10)


def test_welch_degenerate():
    with pytest.raises(DegenerateVariance):
        welch_p_value([1.0, 1.0, 1.0], [0.0, 1.0])
    with pytest.raises(DegenerateVariance):
        welch_p_value([1.0], [0.0, 1.0])


def test_csv_writers(tmp_path):
    rows = [{"design": 0, "method": "gust", "metric": "density", "value": 1 / 3,
             "config_hash": "abc"}]
    write_metric_csv(rows, tmp_path / "m.csv")
    got = list(csv.reader(open(tmp_path / "m.csv")))
    assert got == [["design", "method", "metric", "value", "config_hash"],
                   ["0", "gust", "density", "0.333333333", "abc"]]
    write_kde_csv([0.0, 1.5], [0.25, 0.125], tmp_path / "k.csv")
    assert (tmp_path / "k.csv").read_text() == "x,density\n0,0.25\n1.5,0.125\n"


# -- embeddings ---------------------------------------------------------------------

def test_pca_preserves_distances_in_subspace(rng):
    basis, _ = np.linalg.qr(rng.standard_normal((20, 3)))
    X = rng.standard_normal((40, 3)) @ basis.T + 5.0
    Y = pca_embed(X)
    dX = np.linalg.norm(X[:, None] - X[None], axis=-1)
    dY = np.linalg.norm(Y[:, None] - Y[None], axis=-1)
    np.testing.assert_allclose(dY, dX, atol=1e-10)
    # axis signs are pinned, so negating the data negates the coordinates
    np.testing.assert_allclose(pca_embed(-X), -Y, atol=1e-10)


def test_pca_pads_low_rank(rng):
    X = np.outer(rng.standard_normal(12), [1.0, 2.0])
    Y = pca_embed(X)
    assert Y.shape == (12, 3)
    np.testing.assert_allclose(Y[:, 1:], 0.0, atol=1e-12)


def _clusters(rng, n_per=40, d=30):
    centers = rng.standard_normal((3, d)) * 10
    X = np.vstack([c + rng.standard_normal((n_per, d)) for c in centers])
    return X, np.repeat(np.arange(3), n_per)


def test_tsne_separates_clusters_deterministically(rng):
    X, labels = _clusters(rng)
    cfg = MetricConfig(max_iter=500)
    Y = tsne_embed(X, cfg)
    assert Y.shape == (120, 3)
    np.testing.assert_array_equal(Y, tsne_embed(X, cfg))
    cent = np.stack([Y[labels == c].mean(0) for c in range(3)])
    spread = max(np.linalg.norm(Y[labels == c] - cent[c], axis=1).max() for c in range(3))
    gaps = [np.linalg.norm(cent[a] - cent[b]) for a in range(3) for b in range(a + 1, 3)]
    assert min(gaps) > 2 * spread


def test_tsne_perplexity_limit(rng):
    X = rng.standard_normal((30, 4))
    with pytest.raises(PerplexityTooLarge):
        tsne_embed(X, MetricConfig(perplexity=10))
    assert tsne_embed(X, MetricConfig(perplexity=5, max_iter=50)).shape == (30, 3)
    with pytest.raises(ValueError):
        embed_points(X[:9], MetricConfig(embedding="pca"))


def test_embedding_estimator(rng):
    cells = np.stack([random_cell(rng, (6, 6)) for _ in range(40)])
    est = CellEmbedding(method="tsne", perplexity=5)
    Y = est.fit_transform(cells)
    assert Y.shape == (40, 3) and est.get_params()["perplexity"] == 5
    with pytest.raises(ValueError):
        MetricConfig(embedding="umap")
    assert MetricConfig().hash() == MetricConfig().hash() != MetricConfig(k=3).hash()
