"""Stochastic perturbation operators and synthetic dataset construction.

Two stochastic operators act on nominal cells: a free-form deformation driven
by a Gaussian-perturbed Bernstein control lattice, and hole nucleation, which
subtracts an anisotropic Gaussian bump from the signed distance field.  A
:class:`PerturbPipeline` composes randomly drawn sequences of operators
(optionally including dilation and erosion), and :func:`build_dataset` turns a
list of nominal designs into a :class:`PairedDataset` of (nominal, fabricated)
geometries.
"""

import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_cell, check_cells, check_random_state, check_scale, derived_seed
from .exceptions import DatasetDegenerate, DegenerateCovariance, NoInteriorMaterial
from .geometry import dilate, erode, pixel_grid, resample_bilinear, to_binary, to_sdf

logger = logging.getLogger(__name__)

NOMINAL = 0
FABRICATED = 1


# ---------------------------------------------------------------------------
# free-form deformation


@dataclass(frozen=True)
class FFDConfig:
    m: int = 4
    sigma: float = 6.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"lattice size m must be an integer >= 2, got {self.m}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def bernstein(n, t):
    """All degree-``n`` Bernstein polynomials at ``t``; shape ``t.shape + (n + 1,)``."""
    t = np.asarray(t, dtype=np.float64)[..., None]
    i = np.arange(n + 1)
    coef = np.array([comb(n, k) for k in range(n + 1)], dtype=np.float64)
    return coef * t**i * (1.0 - t) ** (n - i)


def ffd_displacement(shape, xi):
    """Displacement field of a perturbed control lattice.

    ``xi`` has shape ``(m, m, 2)``: entry ``[i, j]`` is the (x, y) offset in
    pixels of the control point at lattice column ``i`` and row ``j``.  The
    lattice spans the whole cell, so pixel ``(r, c)`` has parametric
    coordinates ``u = c / (W - 1)``, ``v = r / (H - 1)``.  Returns an
    ``(H, W, 2)`` array of ``(d_row, d_col)``.
    """
    xi = np.asarray(xi, dtype=np.float64)
    m = xi.shape[0]
    if xi.shape != (m, m, 2):
        raise ValueError(f"xi must have shape (m, m, 2), got {xi.shape}")
    h, w = shape
    bu = bernstein(m - 1, np.arange(w) / (w - 1))  # (W, m) indexed by i
    bv = bernstein(m - 1, np.arange(h) / (h - 1))  # (H, m) indexed by j
    dx = np.einsum("ci,rj,ij->rc", bu, bv, xi[..., 0])
    dy = np.einsum("ci,rj,ij->rc", bu, bv, xi[..., 1])
    return np.stack([dy, dx], axis=-1)


def warp_field(sdf, displacement):
    """Backward warp: sample ``sdf`` at ``p - d(p)`` for every pixel ``p``."""
    return resample_bilinear(sdf, pixel_grid(sdf.shape) - displacement)


def ffd_deform(cell, cfg, rng=None):
    """Free-form deformation of a cell with Gaussian control-point noise."""
    cell = check_cell(cell)
    rng = check_random_state(rng)
    xi = rng.normal(0.0, cfg.sigma, size=(cfg.m, cfg.m, 2))
    if cfg.sigma == 0:
        return cell.copy()
    return to_binary(warp_field(to_sdf(cell), ffd_displacement(cell.shape, xi)))


# ---------------------------------------------------------------------------
# hole nucleation


@dataclass(frozen=True)
class HoleConfig:
    """Hole nucleation parameters.

    ``alpha=None`` means 1.5 times the largest SDF value of the field being
    perturbed.  ``cov_mean``/``cov_std`` parametrize the normal draw of the
    square roots of the covariance diagonal.
    """

    alpha: float | None = None
    cov_mean: float = 3.0
    cov_std: float = 1.0
    offdiag_fraction_max: float = 0.8
    min_depth: float = 1.0

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.cov_std >= 0:
            raise ValueError(f"cov_std must be >= 0, got {self.cov_std}")
        if not 0 <= self.offdiag_fraction_max < 1:
            raise ValueError("offdiag_fraction_max must lie in [0, 1)")


def sample_covariance(cfg, rng=None, max_tries=100):
    """Random symmetric positive-definite 2x2 covariance for an elliptical void."""
    rng = check_random_state(rng)
    for _ in range(max_tries):
        xi_i, xi_j = rng.normal(cfg.cov_mean, cfg.cov_std, size=2)
        s11, s22 = xi_i * xi_i, xi_j * xi_j
        if s11 < 1e-6 or s22 < 1e-6:
            continue
        bound = cfg.offdiag_fraction_max * np.sqrt(s11 * s22)
        s12 = rng.uniform(-bound, bound) if bound > 0 else 0.0
        return np.array([[s11, s12], [s12, s22]])
    raise DegenerateCovariance(f"covariance diagonal underflowed in {max_tries} draws")


def hole_field(sdf, mu, cov, alpha):
    """``sdf(p) - alpha * exp(-(p - mu)^T cov^-1 (p - mu) / 2)`` on the pixel grid.

    ``mu`` is a ``(row, col)`` position; ``cov`` is expressed in the same
    (row, col) frame.
    """
    sdf = np.asarray(sdf, dtype=np.float64)
    diff = pixel_grid(sdf.shape) - np.asarray(mu, dtype=np.float64)
    prec = np.linalg.inv(np.asarray(cov, dtype=np.float64))
    quad = np.einsum("...i,ij,...j->...", diff, prec, diff)
    return sdf - alpha * np.exp(-0.5 * quad)


def nucleate_hole(sdf, cfg, rng=None):
    """Carve one random elliptical void into a signed distance field."""
    sdf = np.asarray(sdf, dtype=np.float64)
    rng = check_random_state(rng)
    if not np.any(sdf > 0):
        raise NoInteriorMaterial("field has no material pixels to seed a hole in")
    candidates = np.argwhere(sdf > cfg.min_depth)
    if len(candidates) == 0:
        # thin features: fall back to any material pixel
        candidates = np.argwhere(sdf > 0)
    mu = candidates[rng.integers(len(candidates))].astype(np.float64)
    cov = sample_covariance(cfg, rng)
    alpha = cfg.alpha if cfg.alpha is not None else 1.5 * float(sdf.max())
    return hole_field(sdf, mu, cov, alpha)


# ---------------------------------------------------------------------------
# operator composition


OPERATOR_KINDS = ("ffd", "hole", "dilate", "erode")


@dataclass(frozen=True)
class Operator:
    """One catalog entry: ``kind`` plus its config (FFDConfig, HoleConfig or a scale)."""

    kind: str
    config: object = None

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind in ("dilate", "erode"):
            check_scale(self.config)


def _normalized(p, name):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0 or np.any(p < 0):
        raise ValueError(f"{name} must be a non-empty vector of non-negative masses")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1, sums to {p.sum()}")
    return p / p.sum()


@dataclass(frozen=True)
class PerturbPipeline:
    """Random composition of perturbation operators.

    ``length_distribution[l]`` is the probability of applying ``l`` operators;
    ``operator_distribution[i]`` the probability of drawing catalog entry ``i``.
    """

    operators: tuple
    length_distribution: tuple = (0.0, 0.5, 0.5)
    operator_distribution: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if len(self.operators) == 0:
            raise ValueError("a pipeline needs at least one operator")
        object.__setattr__(self, "operators", tuple(self.operators))
        _normalized(self.length_distribution, "length_distribution")
        if self.operator_distribution is None:
            n = len(self.operators)
            object.__setattr__(self, "operator_distribution", tuple([1.0 / n] * n))
        op_p = _normalized(self.operator_distribution, "operator_distribution")
        if len(op_p) != len(self.operators):
            raise ValueError("operator_distribution must have one mass per operator")

    @classmethod
    def pretrain(cls, sigma=6.0, m=4, seed=0):
        """FFD-only pipeline applied exactly once (pretraining-style data)."""
        return cls(operators=(Operator("ffd", FFDConfig(m=m, sigma=sigma)),),
                   length_distribution=(0.0, 1.0), operator_distribution=(1.0,),
                   seed=seed)

    @classmethod
    def finetune(cls, sigma=13.0, hole=None, m=4, p_ffd=0.7, seed=0):
        """FFD plus hole nucleation, one or two operators per geometry."""
        hole = hole if hole is not None else HoleConfig()
        return cls(operators=(Operator("ffd", FFDConfig(m=m, sigma=sigma)),
                              Operator("hole", hole)),
                   length_distribution=(0.0, 0.5, 0.5),
                   operator_distribution=(p_ffd, 1.0 - p_ffd), seed=seed)

    @classmethod
    def identity(cls, seed=0):
        return cls(operators=(Operator("ffd", FFDConfig(sigma=0.0)),),
                   length_distribution=(1.0,), operator_distribution=(1.0,), seed=seed)

    def draw_sequence(self, rng):
        """Operator indices in application order (innermost first)."""
        lengths = _normalized(self.length_distribution, "length_distribution")
        ops = _normalized(self.operator_distribution, "operator_distribution")
        n = int(rng.choice(len(lengths), p=lengths))
        idx = rng.choice(len(ops), size=n, p=ops) if n else np.empty(0, dtype=int)
        # x_fab = F_{i1} o ... o F_{il}(x_nom): F_{il} acts first
        return [int(i) for i in idx[::-1]]


def apply_pipeline(nominal, pipe, rng=None):
    """Apply a randomly drawn operator sequence to one nominal cell."""
    nominal = check_cell(nominal, "nominal")
    rng = check_random_state(rng)
    cell, sdf = nominal.copy(), None
    for i in pipe.draw_sequence(rng):
        op = pipe.operators[i]
        if op.kind == "hole":
            if sdf is None:
                sdf = to_sdf(cell)
            sdf = nucleate_hole(sdf, op.config, rng)
            cell = None
            continue
        if cell is None:
            cell = to_binary(sdf)
        sdf = None
        if op.kind == "ffd":
            cell = ffd_deform(cell, op.config, rng)
        elif op.kind == "dilate":
            cell = dilate(cell, op.config)
        else:
            cell = erode(cell, op.config)
    return cell if cell is not None else to_binary(sdf)


# ---------------------------------------------------------------------------
# paired datasets


@dataclass
class PairedDataset:
    """Aligned nominal/fabricated records.

    Records are stored column-wise: ``nominal_ids[k]``, ``roles[k]``
    (0 nominal, 1 fabricated) and ``cells[k]``.  Every nominal id owns exactly
    one nominal record.
    """

    nominal_ids: np.ndarray
    roles: np.ndarray
    cells: np.ndarray
    variants_per_nominal: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nominal_ids = np.asarray(self.nominal_ids, dtype=np.uint32)
        self.roles = np.asarray(self.roles, dtype=np.uint8)
        self.cells = np.asarray(self.cells, dtype=np.uint8)
        n = len(self.nominal_ids)
        if self.roles.shape != (n,) or self.cells.ndim != 3 or len(self.cells) != n:
            raise ValueError("nominal_ids, roles and cells must describe the same records")
        if n:
            check_cells(self.cells)
        nom = self.nominal_ids[self.roles == NOMINAL]
        if len(np.unique(nom)) != len(nom):
            raise ValueError("each nominal id must have exactly one nominal record")
        fab = self.nominal_ids[self.roles == FABRICATED]
        if not np.all(np.isin(fab, nom)):
            raise ValueError("fabricated record references a missing nominal id")

    def __len__(self):
        return len(self.nominal_ids)

    def __eq__(self, other):
        if not isinstance(other, PairedDataset):
            return NotImplemented
        return (np.array_equal(self.nominal_ids, other.nominal_ids)
                and np.array_equal(self.roles, other.roles)
                and np.array_equal(self.cells, other.cells))

    @property
    def resolution(self):
        return tuple(self.cells.shape[1:])

    @property
    def ids(self):
        """Nominal ids in record order."""
        return self.nominal_ids[self.roles == NOMINAL]

    def nominal(self, nominal_id):
        mask = (self.roles == NOMINAL) & (self.nominal_ids == nominal_id)
        return self.cells[np.flatnonzero(mask)[0]]

    def fabricated(self, nominal_id=None):
        mask = self.roles == FABRICATED
        if nominal_id is not None:
            mask &= self.nominal_ids == nominal_id
        return self.cells[mask]

    @property
    def n_fabricated(self):
        return int((self.roles == FABRICATED).sum())

    def pairs(self):
        """``(x_nom, x_fab)`` arrays, one row per fabricated record."""
        fab_idx = np.flatnonzero(self.roles == FABRICATED)
        nom_rows = {int(i): k for k, i in zip(np.flatnonzero(self.roles == NOMINAL),
                                              self.ids)}
        nom_idx = np.array([nom_rows[int(i)] for i in self.nominal_ids[fab_idx]], dtype=np.intp)
        return self.cells[nom_idx], self.cells[fab_idx]

    @classmethod
    def from_groups(cls, nominals, fabricated, ids=None, **kw):
        """Build from ``nominals[g]`` and the list of its fabricated cells ``fabricated[g]``."""
        ids = list(range(len(nominals))) if ids is None else list(ids)
        nid, roles, cells = [], [], []
        for g, nom, fabs in zip(ids, nominals, fabricated):
            nid.append(g)
            roles.append(NOMINAL)
            cells.append(np.asarray(nom, dtype=np.uint8))
            for f in fabs:
                nid.append(g)
                roles.append(FABRICATED)
                cells.append(np.asarray(f, dtype=np.uint8))
        return cls(np.array(nid), np.array(roles), np.stack(cells), **kw)


def variant_rng(seed, nominal_id, variant, attempt=0):
    """Stream for one (nominal, variant, attempt), independent of iteration order."""
    return np.random.default_rng(np.random.SeedSequence(
        [int(seed), int(nominal_id), int(variant), int(attempt)]))


def _variant(nominal, pipe, seed, nominal_id, variant, max_attempts):
    for attempt in range(max_attempts):
        rng = variant_rng(seed, nominal_id, variant, attempt)
        try:
            out = apply_pipeline(nominal, pipe, rng)
        except NoInteriorMaterial:
            out = None
        if out is not None and out.any():
            return out
        logger.info("degenerate variant (nominal %d, variant %d, attempt %d); resampling",
                    nominal_id, variant, attempt)
    raise DatasetDegenerate(
        f"nominal {nominal_id} produced no valid variant after {max_attempts} attempts")


def build_dataset(nominals, pipe, variants, seed=None, ids=None, n_jobs=1, max_attempts=10):
    """Perturb every nominal ``variants`` times.

    Each variant draws from its own stream derived from
    ``(seed, nominal_id, variant)``, so the result does not depend on
    iteration order or ``n_jobs``.  ``seed`` defaults to ``pipe.seed``.
    """
    nominals = check_cells(nominals, "nominals")
    if variants < 1:
        raise ValueError("variants must be >= 1")
    seed = pipe.seed if seed is None else seed
    ids = list(range(len(nominals))) if ids is None else [int(i) for i in ids]
    jobs = [(g, v) for g in range(len(nominals)) for v in range(variants)]

    def run(g, v):
        return _variant(nominals[g], pipe, seed, ids[g], v, max_attempts)

    if n_jobs == 1:
        outs = [run(g, v) for g, v in jobs]
    else:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=n_jobs)(delayed(run)(g, v) for g, v in jobs)
    fabs = [outs[g * variants:(g + 1) * variants] for g in range(len(nominals))]
    return PairedDataset.from_groups(nominals, fabs, ids=ids, variants_per_nominal=variants)


class SyntheticFabricator(TransformerMixin, BaseEstimator):
    """Estimator wrapper producing one synthetic as-fabricated cell per nominal.

    Parameters
    ----------
    pipeline : PerturbPipeline, optional
        Defaults to the FFD-only pretraining pipeline.
    random_state : int, optional
        Seed for the per-row streams; row ``k`` of every ``transform`` call
        uses the stream derived from ``(random_state, k, call_index)``.
    """

    def __init__(self, pipeline=None, random_state=None):
        self.pipeline = pipeline
        self.random_state = random_state

    def fit(self, X, y=None):
        check_cells(X)
        self.pipeline_ = self.pipeline if self.pipeline is not None else PerturbPipeline.pretrain()
        self.n_calls_ = 0
        return self

    def transform(self, X):
        X = check_cells(X)
        pipe = getattr(self, "pipeline_", None) or self.fit(X).pipeline_
        seed = derived_seed(0 if self.random_state is None else self.random_state, self.n_calls_)
        self.n_calls_ += 1
        return np.stack([apply_pipeline(x, pipe, variant_rng(seed, k, 0)) for k, x in enumerate(X)])
