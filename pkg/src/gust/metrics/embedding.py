"""Joint low-dimensional embedding of real and generated cells."""

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .._validation import check_cells
from ..exceptions import PerplexityTooLarge

REAL = "real"
GENERATED = "generated"


@dataclass(frozen=True)
class MetricConfig:
    """Settings shared by the embedding and the kNN-ball metrics.

    ``k = 5`` is the usual choice for density/coverage; perplexity 10 and the
    t-SNE optimizer constants below follow common exact t-SNE practice.
    """

    k: int = 5
    perplexity: float = 10.0
    embedding: str = "tsne"
    seed: int = 0
    early_exaggeration: float = 12.0
    learning_rate: float = 200.0
    max_iter: int = 1000

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.embedding not in ("tsne", "pca"):
            raise ValueError(f"unknown embedding {self.embedding!r}")
        if not self.perplexity > 0:
            raise ValueError("perplexity must be > 0")

    def hash(self):
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class EmbeddedSet:
    points: np.ndarray
    source: str
    provenance: str = ""

    def __len__(self):
        return len(self.points)


def _flatten(cells):
    cells = check_cells(cells)
    return cells.reshape(len(cells), -1).astype(np.float64)


def pca_embed(X, dim=3):
    """Coordinates of ``X`` on the top ``dim`` principal axes (deterministic signs)."""
    X = np.asarray(X, dtype=np.float64)
    centered = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    vt = vt[:dim]
    # fix the sign of each axis so that its largest-magnitude loading is positive
    flip = np.sign(vt[np.arange(len(vt)), np.abs(vt).argmax(axis=1)])
    vt = vt * np.where(flip == 0, 1.0, flip)[:, None]
    out = centered @ vt.T
    if out.shape[1] < dim:
        out = np.hstack([out, np.zeros((len(out), dim - out.shape[1]))])
    return out


def _conditional_p(d2, perplexity, tol=1e-5, max_steps=100):
    """Row-wise Gaussian affinities whose entropy matches ``log(perplexity)``."""
    n = len(d2)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d2[i], i)
        row = row - row.min()
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_steps):
            w = np.exp(-row * beta)
            sw = w.sum()
            H = np.log(sw) + beta * np.dot(row, w) / sw
            if abs(H - target) < tol:
                break
            if H > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = w / sw
    return P


def tsne_embed(X, cfg, dim=3):
    """Exact t-SNE with the Cauchy (one degree of freedom) output kernel.

    Optimizer: gradient descent with delta-bar-delta gains, momentum 0.5 for
    the first 250 iterations (under early exaggeration) and 0.8 afterwards.
    Initialization is the PCA projection scaled to standard deviation 1e-4.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if cfg.perplexity >= (n - 1) / 3:
        raise PerplexityTooLarge(
            f"perplexity {cfg.perplexity} needs more than {3 * cfg.perplexity + 1:g} points, got {n}")
    sq = (X * X).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    P = _conditional_p(d2, cfg.perplexity)
    P = np.maximum((P + P.T) / (2.0 * n), 1e-12)
    Y = pca_embed(X, dim)
    std = Y[:, 0].std()
    Y = Y / std * 1e-4 if std > 0 else np.random.default_rng(cfg.seed).normal(0, 1e-4, Y.shape)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    switch = 250
    for it in range(cfg.max_iter):
        exag = cfg.early_exaggeration if it < switch else 1.0
        momentum = 0.5 if it < switch else 0.8
        ys = (Y * Y).sum(axis=1)
        num = 1.0 / (1.0 + np.maximum(ys[:, None] + ys[None, :] - 2.0 * Y @ Y.T, 0.0))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (exag * P - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
    return Y


def embed_points(X, cfg=MetricConfig()):
    """Embed raw feature rows into three dimensions according to ``cfg.embedding``."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) < 10:
        raise ValueError(f"need at least 10 points to embed, got {len(X)}")
    if cfg.embedding == "pca":
        return pca_embed(X)
    return tsne_embed(X, cfg)


def embed(real_cells, gen_cells, cfg=MetricConfig()):
    """Fit one embedding on the union of both sets and split it back."""
    real, gen = _flatten(real_cells), _flatten(gen_cells)
    if real.shape[1] != gen.shape[1]:
        raise ValueError("real and generated cells differ in resolution")
    pts = embed_points(np.vstack([real, gen]), cfg)
    tag = cfg.hash()
    return (EmbeddedSet(pts[:len(real)], REAL, tag),
            EmbeddedSet(pts[len(real):], GENERATED, tag))


class CellEmbedding(TransformerMixin, BaseEstimator):
    """Embed a stack of cells in 3-D (t-SNE or PCA); ``fit_transform`` only for t-SNE."""

    def __init__(self, method="tsne", perplexity=10.0, random_state=0):
        self.method = method
        self.perplexity = perplexity
        self.random_state = random_state

    def _cfg(self):
        return MetricConfig(perplexity=self.perplexity, embedding=self.method,
                            seed=self.random_state)

    def fit(self, X, y=None):
        self.embedding_ = embed_points(_flatten(X), self._cfg())
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_
