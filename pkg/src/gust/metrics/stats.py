"""One-dimensional distribution comparisons used for property reporting."""

import csv

import numpy as np
from scipy import stats

from ..exceptions import DegenerateVariance


def _sample(a, name):
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def wasserstein1(a, b):
    """Exact W1 between two empirical distributions via the merged-CDF integral."""
    a, b = np.sort(_sample(a, "a")), np.sort(_sample(b, "b"))
    support = np.sort(np.concatenate([a, b]))
    widths = np.diff(support)
    fa = np.searchsorted(a, support[:-1], side="right") / a.size
    fb = np.searchsorted(b, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * widths))


def silverman_bandwidth(x):
    x = np.asarray(x, dtype=np.float64)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(x.std(ddof=1), iqr / 1.349) if iqr > 0 else x.std(ddof=1)
    return 0.9 * spread * x.size ** (-0.2)


def kde_curve(samples, bandwidth="silverman", n_grid=256, span=3.0):
    """Gaussian KDE on ``n_grid`` points covering ``[min - span*h, max + span*h]``.

    A zero-spread sample falls back to ``h = 1e-3 * |mean| + 1e-9``.
    """
    x = _sample(samples, "samples")
    if x.size < 2:
        raise ValueError("kde_curve needs at least 2 samples")
    if bandwidth == "silverman":
        h = silverman_bandwidth(x)
    else:
        h = float(bandwidth)
    if not h > 0:
        h = 1e-3 * abs(x.mean()) + 1e-9
    grid = np.linspace(x.min() - span * h, x.max() + span * h, n_grid)
    dens = np.zeros(n_grid)
    # chunk over samples to bound memory for large inputs
    for start in range(0, x.size, 4096):
        z = (grid[:, None] - x[None, start:start + 4096]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * np.sqrt(2.0 * np.pi)
    return grid, dens


def welch_p_value(a, b):
    """Two-sided Welch t-test p-value."""
    a, b = _sample(a, "a"), _sample(b, "b")
    if a.size < 2 or b.size < 2:
        raise DegenerateVariance("each sample needs at least 2 values")
    if np.var(a) == 0 or np.var(b) == 0:
        raise DegenerateVariance("a sample has zero variance")
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


def write_metric_csv(rows, path):
    """Rows of ``(metric, value, config_hash)`` plus any extra leading keys."""
    rows = list(rows)
    keys = [k for k in rows[0] if k not in ("metric", "value", "config_hash")] if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ["metric", "value", "config_hash"])
        for r in rows:
            w.writerow([r[k] for k in keys] + [r["metric"], f"{r['value']:.9g}", r["config_hash"]])


def write_kde_csv(grid, dens, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "density"])
        for x, d in zip(grid, dens):
            w.writerow([f"{x:.9g}", f"{d:.9g}"])
