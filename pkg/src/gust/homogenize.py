"""Periodic finite-element homogenization of pixelated unit cells.

Every pixel is a unit-square bilinear plane-stress element; void pixels carry
an ersatz stiffness ``E * void_ratio``.  Opposite edges of the cell share
nodes (periodicity) and one node is pinned to remove rigid translations.
For each of the three unit macroscopic strains the periodic fluctuation is
solved for, and the effective tensor follows from the mutual strain energies

    C_ij = 1/|Y| * sum_e (u0_i - chi_i)_e^T K_e (u0_j - chi_j)_e.
"""

import csv
import functools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_cell, check_cells
from .exceptions import DegenerateCellWarning, SolveDiverged

COMPONENTS = ("C11", "C12", "C22", "C33")

# local node positions (x, y) of the unit element, x along columns, y along rows
ELEMENT_NODES = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@dataclass(frozen=True)
class Material:
    E: float = 1.0
    nu: float = 0.3

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"E must be > 0, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"nu must lie in (-1, 0.5), got {self.nu}")

    def plane_stress(self):
        """3x3 constitutive matrix in Voigt order (11, 22, 12) with engineering shear."""
        E, nu = self.E, self.nu
        return E / (1.0 - nu * nu) * np.array([[1.0, nu, 0.0],
                                               [nu, 1.0, 0.0],
                                               [0.0, 0.0, (1.0 - nu) / 2.0]])


@dataclass(frozen=True)
class ElasticTensor:
    C: np.ndarray

    @property
    def C11(self):
        return float(self.C[0, 0])

    @property
    def C12(self):
        return float(self.C[0, 1])

    @property
    def C22(self):
        return float(self.C[1, 1])

    @property
    def C33(self):
        return float(self.C[2, 2])

    def components(self):
        return np.array([self.C11, self.C12, self.C22, self.C33])

    def as_dict(self):
        return dict(zip(COMPONENTS, self.components().tolist()))


def element_stiffness(mat):
    """Closed-form 8x8 stiffness of a unit-square bilinear plane-stress element.

    DOFs are ordered ``[u0, v0, u1, v1, u2, v2, u3, v3]`` over the nodes in
    :data:`ELEMENT_NODES`.
    """
    nu = mat.nu
    k = np.array([1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
                  -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8])
    idx = np.array([[0, 1, 2, 3, 4, 5, 6, 7],
                    [1, 0, 7, 6, 5, 4, 3, 2],
                    [2, 7, 0, 5, 6, 3, 4, 1],
                    [3, 6, 5, 0, 7, 2, 1, 4],
                    [4, 5, 6, 7, 0, 1, 2, 3],
                    [5, 4, 3, 2, 1, 0, 7, 6],
                    [6, 3, 4, 1, 2, 7, 0, 5],
                    [7, 2, 1, 4, 3, 6, 5, 0]])
    return mat.E / (1.0 - nu * nu) * k[idx]


def unit_strain_displacements():
    """``(3, 8)`` nodal displacements of the three unit macroscopic strains."""
    x, y = ELEMENT_NODES[:, 0], ELEMENT_NODES[:, 1]
    out = np.zeros((3, 8))
    out[0, 0::2] = x  # eps11 = 1
    out[1, 1::2] = y  # eps22 = 1
    out[2, 0::2] = 0.5 * y  # gamma12 = 1
    out[2, 1::2] = 0.5 * x
    return out


@functools.lru_cache(maxsize=16)
def _connectivity(h, w):
    r, c = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    r, c = r.ravel(), c.ravel()
    corners = [(r, c), (r, (c + 1) % w), ((r + 1) % h, (c + 1) % w), ((r + 1) % h, c)]
    nodes = np.stack([rr * w + cc for rr, cc in corners], axis=1)  # (n_el, 4)
    edof = np.empty((h * w, 8), dtype=np.int64)
    edof[:, 0::2] = 2 * nodes
    edof[:, 1::2] = 2 * nodes + 1
    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    return edof, rows, cols


def _solve(K, F, solver, tol):
    if solver == "direct":
        lu = spla.splu(K.tocsc())
        return lu.solve(F)
    diag = K.diagonal()
    M = sp.diags(1.0 / diag)
    n = K.shape[0]
    out = np.empty_like(F)
    for j in range(F.shape[1]):
        x, info = spla.cg(K, F[:, j], rtol=tol, atol=0.0, maxiter=20 * n, M=M)
        if info != 0:
            raise SolveDiverged(f"CG did not reach relative residual {tol} in {20 * n} steps")
        out[:, j] = x
    return out


def homogenize(cell, solid=Material(), void_ratio=1e-9, solver="direct", tol=1e-8):
    """Effective plane-stress stiffness of a periodic binary cell.

    ``solver`` is ``"direct"`` (sparse LU) or ``"cg"`` (Jacobi-preconditioned
    conjugate gradient to relative residual ``tol``).
    """
    cell = check_cell(cell)
    if not 0 < void_ratio < 1:
        raise ValueError("void_ratio must lie in (0, 1)")
    if not cell.any():
        warnings.warn("cell has no material; returning the ersatz-void tensor",
                      DegenerateCellWarning)
    h, w = cell.shape
    edof, rows, cols = _connectivity(h, w)
    ke = element_stiffness(Material(1.0, solid.nu))
    modulus = np.where(cell.ravel() == 1, solid.E, solid.E * void_ratio)
    vals = (modulus[:, None, None] * ke[None]).ravel()
    ndof = 2 * h * w
    K = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsr()
    u0 = unit_strain_displacements()  # (3, 8)
    fe = np.einsum("e,ij,kj->eik", modulus, ke, u0)  # (n_el, 8, 3)
    F = np.zeros((ndof, 3))
    np.add.at(F, edof.ravel(), fe.reshape(-1, 3))
    # pin node 0 (both DOFs)
    free = np.arange(2, ndof)
    chi = np.zeros((ndof, 3))
    chi[free] = _solve(K[free][:, free], F[free], solver, tol)
    u = u0.T[None, :, :] - chi[edof]  # (n_el, 8, 3)
    C = np.einsum("e,eai,ab,ebj->ij", modulus, u, ke, u) / (h * w)
    C = 0.5 * (C + C.T)
    return ElasticTensor(C)


def property_table(cells, mat=Material(), ids=None, void_ratio=1e-9):
    """One row per cell: id, C11, C12, C22, C33, vf and an ``error`` entry.

    Rows keep input order; failures are recorded in ``error`` with NaN values.
    """
    cells = check_cells(cells)
    ids = list(range(len(cells))) if ids is None else list(ids)
    rows = []
    for i, cell in zip(ids, cells):
        row = {"id": i, "vf": float(cell.mean()), "error": None}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateCellWarning)
                row.update(homogenize(cell, mat, void_ratio).as_dict())
        except Exception as exc:  # noqa: BLE001 - per-row error record
            row.update({k: float("nan") for k in COMPONENTS})
            row["error"] = repr(exc)
        rows.append(row)
    return rows


CSV_HEADER = ("id", "C11", "C12", "C22", "C33", "vf")


def write_property_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([row["id"]] + [f"{row[k]:.9g}" for k in CSV_HEADER[1:]])


def read_property_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: (int(v) if k == "id" else float(v)) for k, v in r.items()} for r in reader]


class Homogenizer(TransformerMixin, BaseEstimator):
    """Map cells to ``(C11, C12, C22, C33)`` feature rows."""

    def __init__(self, E=1.0, nu=0.3, void_ratio=1e-9, solver="direct"):
        self.E = E
        self.nu = nu
        self.void_ratio = void_ratio
        self.solver = solver

    def fit(self, X=None, y=None):
        self.material_ = Material(self.E, self.nu)
        return self

    def transform(self, X):
        X = check_cells(X)
        mat = getattr(self, "material_", None) or Material(self.E, self.nu)
        return np.stack([homogenize(x, mat, self.void_ratio, self.solver).components() for x in X])

    def get_feature_names_out(self, input_features=None):
        return np.array(COMPONENTS, dtype=object)
