"""Gaussian random field perturbation of signed distance fields (KL expansion)."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_cell, check_cells, check_random_state, derived_seed
from ..exceptions import EigFailure
from ..geometry import pixel_grid, resample_bilinear, to_binary, to_sdf


@dataclass(frozen=True)
class GRFConfig:
    """Squared-exponential field on a ``grid x grid`` lattice over [0, 1]^2.

    ``ell1`` is the correlation length along the first array axis (rows),
    ``ell2`` along the second; ``sigma2`` is in squared SDF pixel units.
    """

    ell1: float = 0.1
    ell2: float = 0.1
    sigma2: float = 1.5
    modes: int = 64
    grid: int = 32

    def __post_init__(self):
        if not (self.ell1 > 0 and self.ell2 > 0 and self.sigma2 > 0):
            raise ValueError("correlation lengths and variance must be > 0")
        if self.grid < 2 or not 1 <= self.modes <= self.grid * self.grid:
            raise ValueError("need grid >= 2 and 1 <= modes <= grid**2")


@dataclass
class KLBasis:
    eigenvalues: np.ndarray  # (M,), descending
    eigenvectors: np.ndarray  # (N, M), orthonormal columns
    grid_shape: tuple = None

    @property
    def modes(self):
        return len(self.eigenvalues)

    def covariance(self):
        """Truncated covariance ``sum_k lambda_k phi_k phi_k^T``."""
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T


def lattice_points(grid):
    """``(grid**2, 2)`` lattice coordinates in [0, 1]^2, row-major."""
    axis = np.linspace(0.0, 1.0, grid)
    a, b = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([a.ravel(), b.ravel()])


def grf_covariance(cfg):
    """Squared-exponential covariance matrix on the configured lattice."""
    pts = lattice_points(cfg.grid)
    d1 = (pts[:, None, 0] - pts[None, :, 0]) ** 2 / cfg.ell1**2
    d2 = (pts[:, None, 1] - pts[None, :, 1]) ** 2 / cfg.ell2**2
    return cfg.sigma2 * np.exp(-0.5 * (d1 + d2))


def kl_decompose(C, M, grid_shape=None):
    """Top-``M`` eigenpairs of a symmetric matrix in descending order.

    Eigenvalues below zero (round-off on a PSD kernel) are clipped to 0.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("C must be square")
    if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise ValueError("C must be symmetric")
    if not 1 <= M <= len(C):
        raise ValueError(f"M must lie in [1, {len(C)}]")
    try:
        w, v = np.linalg.eigh(C)
    except np.linalg.LinAlgError as exc:
        raise EigFailure(str(exc)) from exc
    order = np.argsort(w)[::-1][:M]
    return KLBasis(np.clip(w[order], 0.0, None), v[:, order], grid_shape)


def grf_basis(cfg):
    """KL basis for ``cfg``; computed from the unit-variance kernel and rescaled."""
    unit = GRFConfig(cfg.ell1, cfg.ell2, 1.0, cfg.modes, cfg.grid)
    basis = kl_decompose(grf_covariance(unit), cfg.modes, (cfg.grid, cfg.grid))
    return KLBasis(cfg.sigma2 * basis.eigenvalues, basis.eigenvectors, basis.grid_shape)


def grf_realize(basis, rng=None, xi=None):
    """One realization ``sum_k sqrt(lambda_k) xi_k phi_k`` (lattice-shaped if known)."""
    if xi is None:
        xi = check_random_state(rng).standard_normal(basis.modes)
    xi = np.asarray(xi, dtype=np.float64)
    g = basis.eigenvectors @ (np.sqrt(basis.eigenvalues) * xi)
    return g.reshape(basis.grid_shape) if basis.grid_shape else g


def upsample_field(g, shape):
    """Bilinearly resample a lattice field over [0, 1]^2 onto pixel centers."""
    g = np.asarray(g, dtype=np.float64)
    n1, n2 = g.shape
    h, w = shape
    pts = pixel_grid(shape)
    pts[..., 0] *= (n1 - 1) / (h - 1)
    pts[..., 1] *= (n2 - 1) / (w - 1)
    return resample_bilinear(g, pts)


def perturb_with_field(nominal, g):
    """Add a lattice field to the nominal SDF and re-threshold."""
    nominal = check_cell(nominal, "nominal")
    return to_binary(to_sdf(nominal) + upsample_field(g, nominal.shape))


def grf_perturb(nominal, cfg, rng=None, basis=None):
    """Perturb a nominal cell by one GRF realization added to its SDF."""
    basis = grf_basis(cfg) if basis is None else basis
    return perturb_with_field(nominal, grf_realize(basis, rng))


class GRFPerturber(BaseEstimator):
    """GRF uncertainty model with a cached KL basis.

    ``fit`` only builds the basis, since the field hyperparameters are set by
    hand rather than estimated; :meth:`sample` draws realizations for one nominal.
    """

    def __init__(self, ell1=0.1, ell2=0.1, sigma2=1.5, modes=64, grid=32, random_state=None):
        self.ell1 = ell1
        self.ell2 = ell2
        self.sigma2 = sigma2
        self.modes = modes
        self.grid = grid
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.config_ = GRFConfig(self.ell1, self.ell2, self.sigma2, self.modes, self.grid)
        self.basis_ = grf_basis(self.config_)
        return self

    def sample(self, nominal, n, random_state=None):
        check_is_fitted(self, "basis_")
        seed = self.random_state if random_state is None else random_state
        seed = 0 if seed is None else seed
        return np.stack([perturb_with_field(nominal, grf_realize(
            self.basis_, np.random.default_rng(derived_seed(seed, i)))) for i in range(n)])
