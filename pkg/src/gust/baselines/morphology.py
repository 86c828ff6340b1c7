"""Dilation/erosion baseline with scales chosen by kernel-density maximum likelihood."""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_cells
from ..geometry import dilate, erode
from .de import differential_evolution


def _flat(cells):
    cells = check_cells(cells)
    return cells.reshape(len(cells), -1).astype(np.float64)


def squared_distances(a, b):
    """Exact squared Euclidean distances between rows of two binary matrices."""
    # integer-valued terms, exact in float64 for any realistic cell size
    na = a.sum(axis=1)[:, None]
    nb = b.sum(axis=1)[None, :]
    return np.maximum(na + nb - 2.0 * (a @ b.T), 0.0)


def scott_bandwidth(refs):
    """Scott's rule for an isotropic Gaussian kernel on flattened cells.

    ``h = s * n ** (-1 / (d + 4))`` where ``s`` is the root mean per-pixel
    standard deviation of the references (ddof 1).  Falls back to 1 when the
    references are all identical or there is only one.
    """
    x = _flat(refs)
    n, d = x.shape
    if n < 2:
        return 1.0
    s = float(np.sqrt(np.mean(x.var(axis=0, ddof=1))))
    return s * n ** (-1.0 / (d + 4)) if s > 0 else 1.0


def kde_neg_loglik(candidates, refs, h):
    """Negative log-likelihood of ``candidates`` under a Gaussian KDE on ``refs``.

    Cells are flattened to vectors in {0, 1}^d; the kernel is isotropic with
    bandwidth ``h``.  Uses log-sum-exp so distant candidates never underflow.
    """
    if not h > 0:
        raise ValueError(f"bandwidth must be > 0, got {h}")
    x, r = _flat(candidates), _flat(refs)
    if x.shape[1] != r.shape[1]:
        raise ValueError("candidates and references differ in resolution")
    d = x.shape[1]
    log_kernel = -squared_distances(x, r) / (2.0 * h * h)
    log_p = logsumexp(log_kernel, axis=1) - np.log(len(r)) - 0.5 * d * np.log(2.0 * np.pi * h * h)
    return float(-np.sum(log_p))


def nearest_odd(value, low=1, high=101):
    """Round a continuous scale to the nearest odd integer inside ``[low, high]``."""
    k = int(np.floor((float(value) - 1.0) / 2.0 + 0.5)) * 2 + 1
    return int(min(max(k, low), high))


@dataclass
class MorphFit:
    alpha_hat: int
    beta_hat: int
    neg_loglik_dilate: float
    neg_loglik_erode: float
    bandwidth: float
    stalled: bool = False
    evaluations: dict = None


def _fit_one(op, nominals, fabs, h, bounds, pop_size, max_gen, seed):
    cache = {}

    def objective_at(scale):
        if scale not in cache:
            cands = np.stack([op(n, scale) for n in nominals])
            cache[scale] = kde_neg_loglik(cands, fabs, h)
        return cache[scale]

    res = differential_evolution(lambda v: objective_at(nearest_odd(v[0], *bounds)),
                                 [bounds], pop_size=pop_size, max_gen=max_gen, seed=seed,
                                 x0=[bounds[0]])
    scale = nearest_odd(res.x[0], *bounds)
    return scale, objective_at(scale), res.stalled, dict(sorted(cache.items()))


def fit_morph_scales(nominals, fabs, bounds=(1, 101), h=None, pop_size=15, max_gen=100,
                     seed=0):
    """Maximum-likelihood dilation and erosion kernel sizes.

    The dilation scale minimizes the KDE negative log-likelihood of the
    dilated nominals under the fabricated references; the erosion scale is
    fitted independently in the same way.  Continuous DE variables are
    rounded to the nearest odd kernel size inside the objective.
    """
    nominals = check_cells(nominals, "nominals")
    fabs = check_cells(fabs, "fabs")
    if nominals.shape[1:] != fabs.shape[1:]:
        raise ValueError("nominals and fabs differ in resolution")
    h = scott_bandwidth(fabs) if h is None else float(h)
    bounds = (int(bounds[0]), int(bounds[1]))
    a, nll_a, stall_a, ev_a = _fit_one(dilate, nominals, fabs, h, bounds, pop_size, max_gen, seed)
    b, nll_b, stall_b, ev_b = _fit_one(erode, nominals, fabs, h, bounds, pop_size, max_gen, seed + 1)
    return MorphFit(a, b, nll_a, nll_b, h, stall_a or stall_b,
                    {"dilate": ev_a, "erode": ev_b})


class MorphologyMLE(TransformerMixin, BaseEstimator):
    """Dilation-erosion uncertainty model fitted by maximum likelihood.

    Parameters
    ----------
    bounds : (int, int)
        Range of admissible kernel sizes.
    bandwidth : float, optional
        KDE bandwidth; Scott's rule is used when omitted.
    pop_size, max_gen : int
        Differential evolution settings.
    random_state : int

    Attributes
    ----------
    alpha_, beta_ : int
        Fitted dilation and erosion kernel sizes.
    bandwidth_ : float
    fit_ : MorphFit
    """

    def __init__(self, bounds=(1, 101), bandwidth=None, pop_size=15, max_gen=100,
                 random_state=0):
        self.bounds = bounds
        self.bandwidth = bandwidth
        self.pop_size = pop_size
        self.max_gen = max_gen
        self.random_state = random_state

    def fit(self, X, y):
        self.fit_ = fit_morph_scales(X, y, bounds=self.bounds, h=self.bandwidth,
                                     pop_size=self.pop_size, max_gen=self.max_gen,
                                     seed=self.random_state)
        self.alpha_ = self.fit_.alpha_hat
        self.beta_ = self.fit_.beta_hat
        self.bandwidth_ = self.fit_.bandwidth
        return self

    def transform(self, X):
        """Stack of ``(dilated, eroded)`` predictions, shape ``(n, 2, H, W)``."""
        check_is_fitted(self, "fit_")
        X = check_cells(X)
        return np.stack([np.stack([dilate(x, self.alpha_), erode(x, self.beta_)]) for x in X])
