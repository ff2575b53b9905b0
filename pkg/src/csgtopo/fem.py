"""Regular-grid Q4 plane-stress finite elements.

Elements are unit squares numbered column-major (y fastest, top row first),
nodes likewise on the ``(nely+1) x (nelx+1)`` grid. All indices are 0-based;
the 1-based MATLAB numbering of the original 99-line family maps by ``-1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

E0 = 1.0
EMIN = 1e-9
NU = 0.3

# Lower triangle (column-major) of the unit-modulus element stiffness, times 24(1 - nu^2).
_C1 = np.array([12, 3, -6, -3, -6, -3, 0, 3, 12, 3, 0, -3, -6, -3, -6, 12, -3, 0,
                -3, -6, 3, 12, 3, -6, 3, -6, 12, 3, -6, -3, 12, 3, 0, 12, -3, 12], dtype=float)
_C2 = np.array([-4, 3, -2, 9, 2, -3, 4, -9, -4, -9, 4, -3, 2, 9, -2, -4, -3, 4,
                9, 2, 3, -4, -9, -2, 3, 2, -4, 3, -2, 9, -4, -9, 4, -4, -3, -4], dtype=float)

# Element DOF offsets relative to the x-DOF of the lower-left node:
# lower-left, lower-right, upper-right, upper-left (counter-clockwise).
_DOF_OFFSETS = np.array([0, 1, 2, 3, 0, 1, -2, -1])
_OFFSET_USES_NELY = np.array([0, 0, 1, 1, 1, 1, 0, 0])


class SolverError(RuntimeError):
    """Raised when the reduced stiffness matrix cannot be factorized."""


class NotPositiveDefiniteError(SolverError):
    pass


class SingularSystemError(SolverError):
    pass


@dataclass(frozen=True)
class GridMesh:
    nelx: int
    nely: int
    node_nrs: np.ndarray = field(repr=False)
    cmat: np.ndarray = field(repr=False)

    @property
    def n_el(self) -> int:
        return self.nelx * self.nely

    @property
    def n_dof(self) -> int:
        return 2 * (self.nelx + 1) * (self.nely + 1)

    def to_grid(self, v: np.ndarray) -> np.ndarray:
        """View a per-element vector as an ``(nely, nelx)`` image."""
        return np.reshape(v, (self.nely, self.nelx), order="F")

    def to_vector(self, a: np.ndarray) -> np.ndarray:
        return np.ravel(a, order="F")


def build_mesh(nelx: int, nely: int) -> GridMesh:
    if int(nelx) != nelx or int(nely) != nely or nelx < 1 or nely < 1:
        raise ValueError(f"mesh dimensions must be positive integers, got ({nelx}, {nely})")
    nelx, nely = int(nelx), int(nely)
    node_nrs = np.arange((nelx + 1) * (nely + 1)).reshape((nely + 1, nelx + 1), order="F")
    # x-DOF of the lower-left node of every element
    c_vec = 2 * np.ravel(node_nrs[1:, :-1], order="F")
    cmat = c_vec[:, None] + _DOF_OFFSETS[None, :] + 2 * nely * _OFFSET_USES_NELY[None, :]
    return GridMesh(nelx, nely, node_nrs, cmat.astype(np.int64))


@dataclass(frozen=True)
class ElementStiffness:
    ke: np.ndarray
    ke0: np.ndarray
    nu: float


def _lower_triangle_colmajor(n: int = 8) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(n)
    return cols, rows


def element_stiffness(nu: float = NU) -> ElementStiffness:
    if not 0.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {nu}")
    ke = (_C1 + nu * _C2) / (24.0 * (1.0 - nu**2))
    lower = np.zeros((8, 8))
    lower[_lower_triangle_colmajor()] = ke
    ke0 = lower + lower.T - np.diag(np.diag(lower))
    return ElementStiffness(ke, ke0, nu)


@dataclass(frozen=True)
class BoundaryConditions:
    fixed: np.ndarray
    free: np.ndarray
    pas_s: np.ndarray
    pas_v: np.ndarray
    act: np.ndarray

    @classmethod
    def from_sets(cls, mesh: GridMesh, fixed, pas_s=(), pas_v=()) -> "BoundaryConditions":
        fixed = np.unique(np.asarray(fixed, dtype=np.int64))
        if fixed.size and (fixed[0] < 0 or fixed[-1] >= mesh.n_dof):
            raise ValueError("fixed DOF index out of range")
        pas_s = np.unique(np.asarray(pas_s, dtype=np.int64))
        pas_v = np.unique(np.asarray(pas_v, dtype=np.int64))
        if np.intersect1d(pas_s, pas_v).size:
            raise ValueError("passive solid and passive void sets overlap")
        free = np.setdiff1d(np.arange(mesh.n_dof), fixed)
        act = np.setdiff1d(np.arange(mesh.n_el), np.union1d(pas_s, pas_v))
        return cls(fixed, free, pas_s, pas_v, act)


class StiffnessAssembler:
    """Scatter-add of scaled element matrices into a fixed CSC pattern.

    The sparsity pattern and the scatter map are built once; each call to
    :meth:`assemble` is then a single weighted ``bincount``. When ``keep`` is
    given only those DOFs are retained (the reduced ``K_ff`` system).
    """

    def __init__(self, mesh: GridMesh, ke: ElementStiffness, keep: np.ndarray | None = None):
        self.mesh = mesh
        self.ke = ke
        n = mesh.n_dof
        if keep is None:
            keep = np.arange(n)
        keep = np.asarray(keep, dtype=np.int64)
        self.keep = keep
        local = np.full(n, -1, dtype=np.int64)
        local[keep] = np.arange(keep.size)

        rows = np.repeat(mesh.cmat, 8, axis=1).ravel()
        cols = np.tile(mesh.cmat, (1, 8)).ravel()
        lr, lc = local[rows], local[cols]
        mask = (lr >= 0) & (lc >= 0)
        self._entry_mask = mask
        size = keep.size
        # order entries column-major to get the CSC pattern and scatter positions
        key = lc[mask] * size + lr[mask]
        uniq, self._scatter = np.unique(key, return_inverse=True)
        self._nnz = uniq.size
        indices = (uniq % size).astype(np.int32)
        counts = np.bincount(uniq // size, minlength=size)
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self._indices, self._indptr, self._shape = indices, indptr, (size, size)
        self._ke_flat = ke.ke0.ravel()

    def assemble(self, s_k: np.ndarray) -> sp.csc_matrix:
        s_k = np.asarray(s_k, dtype=float)
        if s_k.shape != (self.mesh.n_el,):
            raise ValueError(f"stiffness scale has shape {s_k.shape}, expected ({self.mesh.n_el},)")
        if np.any(s_k <= 0):
            raise ValueError("element stiffness scales must be strictly positive")
        vals = (s_k[:, None] * self._ke_flat[None, :]).ravel()[self._entry_mask]
        data = np.bincount(self._scatter, weights=vals, minlength=self._nnz)
        return sp.csc_matrix((data, self._indices.copy(), self._indptr.copy()), shape=self._shape)


def assemble_stiffness(mesh: GridMesh, ke: ElementStiffness, s_k: np.ndarray) -> sp.csc_matrix:
    """Global stiffness over all DOFs, ``K = sum_e s_k[e] * Ke0`` scattered by ``cmat``."""
    return StiffnessAssembler(mesh, ke).assemble(s_k)


class Factorization:
    """Sparse symmetric factorization of a reduced stiffness matrix.

    SuperLU in symmetric mode with diagonal pivoting is used as the
    Cholesky substitute; a non-positive pivot flags an indefinite matrix.
    Immutable after construction and reusable for any number of right-hand sides.
    """

    def __init__(self, k_ff: sp.spmatrix):
        k_ff = sp.csc_matrix(k_ff)
        try:
            self._lu = splu(k_ff, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise SingularSystemError(f"stiffness matrix is singular: {exc}") from exc
        pivots = self._lu.U.diagonal()
        if not np.all(np.isfinite(pivots)):
            raise SingularSystemError("stiffness matrix is singular (non-finite pivot)")
        tol = 1e-13 * np.max(np.abs(pivots), initial=0.0)
        if np.any(pivots < -tol):
            raise NotPositiveDefiniteError(
                "stiffness matrix is not positive definite; check Emin > 0")
        if np.any(pivots <= tol):
            raise SingularSystemError("stiffness matrix is singular; check the supports")
        self.shape = k_ff.shape

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(rhs, dtype=float))


def solve_state(k: sp.spmatrix, f: np.ndarray, bc: BoundaryConditions,
                factor: Factorization | None = None) -> np.ndarray:
    """Solve ``K U = F`` with ``U[fixed] = 0``.

    ``k`` is the full-DOF matrix; ``f`` may hold several load cases as columns.
    """
    f = np.asarray(f, dtype=float)
    if factor is None:
        k = sp.csc_matrix(k)
        factor = Factorization(k[bc.free][:, bc.free])
    u = np.zeros(f.shape)
    u[bc.free] = factor.solve(f[bc.free])
    return u


def compliance(f: np.ndarray, u: np.ndarray) -> float:
    return float(np.dot(f, u))


def element_energies(u: np.ndarray, mesh: GridMesh, ke: ElementStiffness) -> np.ndarray:
    """``U_e^T Ke0 U_e`` per element."""
    ue = u[mesh.cmat]
    return np.einsum("ei,ij,ej->e", ue, ke.ke0, ue)


def compliance_element_gradient(u: np.ndarray, mesh: GridMesh, ke: ElementStiffness,
                                ds_k: np.ndarray) -> np.ndarray:
    return ds_k * element_energies(u, mesh, ke)
