"""Periodic 1D meshes, spatial basis families, gram matrices, dual norms.

Everything lives on the unit interval identified with the 1-torus.  Two
basis families are provided: quadratic Lagrange finite elements (used by
the time stepper) and periodic cubic B-splines (used for the observation
grid).  Gram matrices carry the L2 and H1 inner products; the discrete
H^-1 dual norm is evaluated through a sparse factorization of the H1 gram.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_circulant
from scipy.sparse.linalg import splu

QUADRATIC_FE = "quadratic-fe"
PERIODIC_CUBIC_SPLINE = "periodic-cubic-spline"

_KINDS = (QUADRATIC_FE, PERIODIC_CUBIC_SPLINE)

# Monomial coefficients of the reference shape functions on u in [0, 1].
# Rows are local shape functions, columns are powers 1, u, u^2, u^3.
_FE_POLY = np.array(
    [
        [1.0, -3.0, 2.0, 0.0],   # left vertex
        [0.0, 4.0, -4.0, 0.0],   # midpoint
        [0.0, -1.0, 2.0, 0.0],   # right vertex
    ]
)

# Uniform periodic cubic B-spline restricted to one cell.  The four
# overlapping splines on cell j carry the coefficients with global
# indices j-1, j, j+1, j+2 (mod n).
_BSPLINE_POLY = np.array(
    [
        [1.0, -3.0, 3.0, -1.0],
        [4.0, 0.0, -6.0, 3.0],
        [1.0, 3.0, 3.0, -3.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
) / 6.0

_MAX_ORDER = {QUADRATIC_FE: 1, PERIODIC_CUBIC_SPLINE: 3}


class MeshError(ValueError):
    """Invalid mesh construction request."""


class BasisError(ValueError):
    """Invalid basis kind, derivative order, or evaluation request."""


class AssemblyError(RuntimeError):
    """A gram matrix failed a symmetry or positivity sanity check."""


@dataclass(frozen=True)
class PeriodicMesh:
    """Uniform partition of the unit torus into ``n_cells`` intervals."""

    n_cells: int

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    def nodes(self) -> np.ndarray:
        return np.arange(self.n_cells) * self.h

    def wrap(self, x):
        """Map points to [0, 1) by periodicity."""
        return np.mod(x, 1.0)

    def locate(self, x):
        """Return (cell index, local coordinate in [0, 1)) for each point."""
        xw = np.mod(np.asarray(x, dtype=float), 1.0)
        u = xw * self.n_cells
        cells = np.floor(u).astype(np.int64)
        # defend against xw*n rounding up to n at the right edge
        cells = np.minimum(cells, self.n_cells - 1)
        return cells, u - cells


def build_mesh(n_cells: int) -> PeriodicMesh:
    if not isinstance(n_cells, (int, np.integer)) or n_cells < 4:
        raise MeshError(f"n_cells must be an integer >= 4, got {n_cells!r}")
    return PeriodicMesh(int(n_cells))


def _shape_table(kind: str) -> np.ndarray:
    return _FE_POLY if kind == QUADRATIC_FE else _BSPLINE_POLY


def _poly_eval(table: np.ndarray, u: np.ndarray, order: int) -> np.ndarray:
    """Evaluate d^order/du^order of each shape polynomial at local points.

    Returns an array of shape (len(u), n_local).
    """
    # derivative of the monomial coefficient table
    coef = table.copy()
    for _ in range(order):
        coef = coef[:, 1:] * np.arange(1, coef.shape[1])
    if coef.shape[1] == 0:
        return np.zeros((len(u), table.shape[0]))
    # Horner in u
    vals = np.full((len(u), table.shape[0]), coef[:, -1])
    for k in range(coef.shape[1] - 2, -1, -1):
        vals = vals * u[:, None] + coef[:, k]
    return vals


@dataclass(frozen=True)
class SpatialBasis:
    """A periodic spatial basis on a uniform mesh.

    ``quadratic-fe`` has two degrees of freedom per cell (vertex value and
    midpoint value, 2 * n_cells total); ``periodic-cubic-spline`` has one
    coefficient per cell.
    """

    kind: str
    mesh: PeriodicMesh

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise BasisError(f"unknown basis kind {self.kind!r}")

    @property
    def dof_count(self) -> int:
        n = self.mesh.n_cells
        return 2 * n if self.kind == QUADRATIC_FE else n

    @property
    def dofs_per_cell(self) -> int:
        return 3 if self.kind == QUADRATIC_FE else 4

    @property
    def max_order(self) -> int:
        return _MAX_ORDER[self.kind]

    def cell_dofs(self) -> np.ndarray:
        """Global dof indices of the local shape functions, per cell."""
        n = self.mesh.n_cells
        cells = np.arange(n)[:, None]
        if self.kind == QUADRATIC_FE:
            local = 2 * cells + np.arange(3)[None, :]
            return np.mod(local, 2 * n)
        local = cells + np.arange(-1, 3)[None, :]
        return np.mod(local, n)

    def dof_nodes(self) -> np.ndarray:
        """Collocation points: FE dof locations, or spline cell nodes."""
        if self.kind == QUADRATIC_FE:
            return np.arange(self.dof_count) * (0.5 * self.mesh.h)
        return self.mesh.nodes()


def quadratic_fe(mesh: PeriodicMesh) -> SpatialBasis:
    return SpatialBasis(QUADRATIC_FE, mesh)


def cubic_spline_basis(mesh: PeriodicMesh) -> SpatialBasis:
    return SpatialBasis(PERIODIC_CUBIC_SPLINE, mesh)


def quadrature_rule(mesh: PeriodicMesh, n_points: int):
    """Gauss-Legendre points and weights on every cell of the mesh.

    Returns global points ``x`` of shape (n_cells * n_points,) ordered
    cell by cell, and matching weights that include the cell length.
    """
    g, w = np.polynomial.legendre.leggauss(n_points)
    u = 0.5 * (g + 1.0)
    h = mesh.h
    x = (np.arange(mesh.n_cells)[:, None] * h + u[None, :] * h).ravel()
    weights = np.tile(0.5 * w * h, mesh.n_cells)
    return x, weights


def basis_matrix(basis: SpatialBasis, x, order: int = 0) -> sp.csr_matrix:
    """Sparse evaluation matrix E with E[p, i] = d^order psi_i (x_p).

    The rows of ``E @ coef`` are point values of the expanded field.
    """
    if order < 0 or order > basis.max_order:
        raise BasisError(
            f"derivative order {order} out of range for {basis.kind}"
        )
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cells, u = basis.mesh.locate(x)
    vals = _poly_eval(_shape_table(basis.kind), u, order)
    vals *= float(basis.mesh.n_cells) ** order  # d/dx = n d/du
    cols = basis.cell_dofs()[cells]
    rows = np.repeat(np.arange(len(x)), basis.dofs_per_cell)
    mat = sp.csr_matrix(
        (vals.ravel(), (rows, cols.ravel())),
        shape=(len(x), basis.dof_count),
    )
    return mat


@dataclass
class PeriodicField:
    """A scalar periodic field expanded in a spatial basis."""

    basis: SpatialBasis
    coef: np.ndarray

    def __post_init__(self):
        self.coef = np.asarray(self.coef, dtype=float)
        if self.coef.shape != (self.basis.dof_count,):
            raise BasisError(
                f"coefficient vector has shape {self.coef.shape}, "
                f"expected ({self.basis.dof_count},)"
            )


def eval_field(f: PeriodicField, x, order: int = 0):
    """Evaluate a field (or one of its derivatives) at arbitrary points.

    Points are wrapped periodically.  The derivative order is capped by
    the basis family: 1 for quadratic elements, 3 for cubic splines.
    """
    scalar = np.isscalar(x) or np.ndim(x) == 0
    out = basis_matrix(f.basis, x, order) @ f.coef
    return float(out[0]) if scalar else out


_SPLINE_KERNEL_CACHE: dict[int, np.ndarray] = {}


def _spline_collocation_kernel(n: int) -> np.ndarray:
    ker = _SPLINE_KERNEL_CACHE.get(n)
    if ker is None:
        ker = np.zeros(n)
        ker[0] = 4.0 / 6.0
        ker[1] = 1.0 / 6.0
        ker[-1] = 1.0 / 6.0
        _SPLINE_KERNEL_CACHE[n] = ker
    return ker


def interpolate(basis: SpatialBasis, values) -> PeriodicField:
    """Interpolate nodal data (callable or value array) in the basis.

    Quadratic elements collocate at vertices and midpoints, so the
    coefficients are the nodal values themselves.  Periodic splines
    collocate at the cell nodes; the banded circulant system is solved
    by FFT.
    """
    if callable(values):
        values = values(basis.dof_nodes())
    values = np.asarray(values, dtype=float)
    if values.shape != (basis.dof_count,):
        raise BasisError(
            f"expected {basis.dof_count} nodal values, got shape {values.shape}"
        )
    if basis.kind == QUADRATIC_FE:
        return PeriodicField(basis, values.copy())
    coef = solve_circulant(_spline_collocation_kernel(basis.dof_count), values)
    return PeriodicField(basis, coef)


def spline_node_values(coef: np.ndarray) -> np.ndarray:
    """Nodal values of a periodic cubic spline from its coefficients.

    Works on a single coefficient vector or a stack (..., n).
    """
    return (np.roll(coef, 1, axis=-1) + 4.0 * coef + np.roll(coef, -1, axis=-1)) / 6.0


def interpolate_many(basis: SpatialBasis, values: np.ndarray) -> np.ndarray:
    """Row-wise interpolation of a (n_fields, dof) value array."""
    values = np.asarray(values, dtype=float)
    if basis.kind == QUADRATIC_FE:
        return values.copy()
    ker = _spline_collocation_kernel(basis.dof_count)
    return solve_circulant(ker, values.T).T


def weighted_gram(
    rows: sp.spmatrix, cols: sp.spmatrix, w: np.ndarray
) -> sp.csr_matrix:
    """Assemble rows^T diag(w) cols from point-evaluation matrices."""
    return (rows.T @ sp.diags(w) @ cols).tocsr()


# exact Gauss point counts for products of two shape functions
_GRAM_QUAD = {QUADRATIC_FE: 3, PERIODIC_CUBIC_SPLINE: 4}


@dataclass
class GramPair:
    """L2 and H1 gram matrices of a basis, with a cached H1 factorization."""

    basis: SpatialBasis
    M_L2: sp.csr_matrix
    K: sp.csr_matrix          # stiffness (grad, grad)
    M: sp.csr_matrix          # H1 gram = M_L2 + K
    _factor: object = field(default=None, repr=False)

    def solve_M(self, rhs: np.ndarray) -> np.ndarray:
        """Apply the inverse H1 gram to one vector or to stacked columns."""
        if self._factor is None:
            object.__setattr__(self, "_factor", splu(self.M.tocsc()))
        return self._factor.solve(np.asarray(rhs, dtype=float))

    def h1_norm(self, coef: np.ndarray) -> float:
        return float(np.sqrt(max(coef @ (self.M @ coef), 0.0)))

    def l2_norm(self, coef: np.ndarray) -> float:
        return float(np.sqrt(max(coef @ (self.M_L2 @ coef), 0.0)))


def _symmetrize(a: sp.spmatrix) -> sp.csr_matrix:
    a = a.tocsr()
    dev = abs(a - a.T)
    scale = max(abs(a).max(), 1.0)
    if dev.nnz and dev.max() > 1e-12 * scale:
        raise AssemblyError("assembled gram deviates from symmetry")
    return ((a + a.T) * 0.5).tocsr()


def assemble_grams(basis: SpatialBasis, n_quad: int | None = None) -> GramPair:
    """Assemble the L2 gram and stiffness matrix of a basis.

    The default quadrature integrates the products exactly.  Both
    matrices are symmetrized and checked for positive diagonals.
    """
    nq = n_quad if n_quad is not None else _GRAM_QUAD[basis.kind]
    x, w = quadrature_rule(basis.mesh, nq)
    e0 = basis_matrix(basis, x, 0)
    e1 = basis_matrix(basis, x, 1)
    m = _symmetrize(weighted_gram(e0, e0, w))
    k = _symmetrize(weighted_gram(e1, e1, w))
    if m.diagonal().min() <= 0.0:
        raise AssemblyError("L2 gram has a non-positive diagonal entry")
    return GramPair(basis, m, k, (m + k).tocsr())


def dual_norm_Hm1(y: np.ndarray, grams: GramPair) -> float:
    """Discrete H^-1 norm of a functional given by its coefficient vector.

    ``y[i]`` is the action of the functional on basis function i.  The
    norm is sqrt(y^T M^-1 y) with M the H1 gram; the Riesz representer
    solve reuses the cached factorization.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (grams.basis.dof_count,):
        raise BasisError(
            f"functional vector has shape {y.shape}, "
            f"expected ({grams.basis.dof_count},)"
        )
    z = grams.solve_M(y)
    q = float(y @ z)
    if q < -1e-10 * max(float(y @ y), 1.0):
        raise AssemblyError("H1 gram solve produced a negative quadratic form")
    return float(np.sqrt(max(q, 0.0)))


def l2_functional(basis: SpatialBasis, fn, n_quad: int = 8) -> np.ndarray:
    """Vector of L2 pairings (fn, psi_i) for a callable integrand."""
    x, w = quadrature_rule(basis.mesh, n_quad)
    e0 = basis_matrix(basis, x, 0)
    return e0.T @ (w * fn(x))
