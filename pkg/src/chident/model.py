"""Phase-field model data: parameter functions, energy, mass, rescalings.

A model instance bundles the interface coefficient gamma, a mobility b,
and a double-well potential F, each a scalar function of the phase value.
Parameter functions come in two flavors: closed-form callables with hand
coded derivatives, and natural cubic splines on a uniform knot grid
(the representation the inversion recovers).  The smoothness gram of the
spline grid provides the Tikhonov penalty.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_banded

from .meshbasis import PeriodicField, eval_field, quadrature_rule


class ParameterError(ValueError):
    """Invalid parameter-function construction or evaluation."""


class ModelError(ValueError):
    """Invalid model data (non-positive gamma, mobility sign, ...)."""


class ClosedFormParameter:
    """Scalar parameter function with explicit derivatives up to order 2."""

    def __init__(self, fn, d1=None, d2=None, name="closed-form"):
        self._fns = (fn, d1, d2)
        self.name = name

    def __call__(self, s, order: int = 0):
        if order < 0 or order > 2:
            raise ParameterError(f"derivative order {order} not available")
        fn = self._fns[order]
        if fn is None:
            raise ParameterError(
                f"{self.name}: derivative of order {order} was not supplied"
            )
        s = np.asarray(s, dtype=float)
        out = np.asarray(fn(s), dtype=float)
        return float(out) if out.ndim == 0 else out


class NaturalSplineGrid:
    """Uniform knot grid for natural cubic spline parameter functions.

    A function in this space is stored by its knot values; the linear map
    to second derivatives at the knots (zero at both ends) is cached as a
    dense matrix, so point evaluation of values and derivatives reduces
    to matrix-vector products.  Outside the knot interval the boundary
    cubic is extended.
    """

    def __init__(self, lo: float = -1.0, hi: float = 1.0, spacing: float = 0.1):
        if not hi > lo:
            raise ParameterError("empty knot interval")
        n_span = (hi - lo) / spacing
        n_round = round(n_span)
        if n_round < 2 or abs(n_span - n_round) > 1e-9 * max(1.0, abs(n_span)):
            raise ParameterError(
                f"spacing {spacing} does not evenly divide [{lo}, {hi}]"
            )
        self.lo = float(lo)
        self.hi = float(hi)
        self.n_knots = n_round + 1
        self.knots = np.linspace(lo, hi, self.n_knots)
        self.spacing = (hi - lo) / n_round
        self._curvature_map = self._build_curvature_map()

    def _build_curvature_map(self) -> np.ndarray:
        """Map knot values to knot second derivatives (natural closure)."""
        n = self.n_knots
        sig = self.spacing
        d = np.zeros((n, n))
        if n <= 2:
            return d
        m = n - 2
        # tridiagonal system: m_{j-1} + 4 m_j + m_{j+1} = 6 (d2 v)_j / sig^2
        ab = np.zeros((3, m))
        ab[0, 1:] = 1.0
        ab[1, :] = 4.0
        ab[2, :-1] = 1.0
        rhs = np.zeros((m, n))
        for j in range(m):
            rhs[j, j] += 6.0 / sig**2
            rhs[j, j + 1] -= 12.0 / sig**2
            rhs[j, j + 2] += 6.0 / sig**2
        d[1:-1, :] = solve_banded((1, 1), ab, rhs)
        return d

    def eval_matrix(self, s, order: int = 0) -> np.ndarray:
        """Dense matrix mapping knot values to point values at ``s``.

        Supports derivative orders 0..2.  Points beyond the grid use the
        polynomial extension of the first or last piece.
        """
        if order < 0 or order > 2:
            raise ParameterError(f"derivative order {order} not available")
        s = np.atleast_1d(np.asarray(s, dtype=float))
        sig = self.spacing
        piece = np.clip(
            np.floor((s - self.lo) / sig).astype(np.int64), 0, self.n_knots - 2
        )
        u = (s - self.knots[piece]) / sig
        npts = len(s)
        rows = np.arange(npts)
        v_part = np.zeros((npts, self.n_knots))
        m_part = np.zeros((npts, self.n_knots))
        if order == 0:
            v_left, v_right = 1.0 - u, u
            m_left = sig**2 / 6.0 * ((1.0 - u) ** 3 - (1.0 - u))
            m_right = sig**2 / 6.0 * (u**3 - u)
        elif order == 1:
            v_left, v_right = np.full(npts, -1.0 / sig), np.full(npts, 1.0 / sig)
            m_left = sig / 6.0 * (1.0 - 3.0 * (1.0 - u) ** 2)
            m_right = sig / 6.0 * (3.0 * u**2 - 1.0)
        else:
            v_left = v_right = np.zeros(npts)
            m_left, m_right = 1.0 - u, u
        np.add.at(v_part, (rows, piece), v_left)
        np.add.at(v_part, (rows, piece + 1), v_right)
        np.add.at(m_part, (rows, piece), m_left)
        np.add.at(m_part, (rows, piece + 1), m_right)
        return v_part + m_part @ self._curvature_map


def param_grid(lo: float = -1.0, hi: float = 1.0, spacing: float = 0.1) -> NaturalSplineGrid:
    return NaturalSplineGrid(lo, hi, spacing)


class SplineParameter:
    """Natural cubic spline parameter function stored by knot values."""

    def __init__(self, grid: NaturalSplineGrid, values, name="spline"):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_knots,):
            raise ParameterError(
                f"expected {grid.n_knots} knot values, got shape {values.shape}"
            )
        self.grid = grid
        self.values = values
        self.name = name

    def __call__(self, s, order: int = 0):
        out = self.grid.eval_matrix(s, order) @ self.values
        return float(out[0]) if np.isscalar(s) or np.ndim(s) == 0 else out


def eval_param(p, s, order: int = 0):
    """Evaluate either flavor of parameter function."""
    return p(s, order)


@dataclass(frozen=True)
class ModelParams:
    """Interface coefficient, mobility, and double-well potential."""

    gamma: float
    b: object
    F: object

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise ModelError(f"gamma must be positive, got {self.gamma}")

    def f(self, s, order: int = 0):
        """Derivative of the potential, f = F'."""
        return self.F(s, order + 1)


def mobility_floor(b, lo: float = -1.0, hi: float = 1.0, n_sample: int = 2001) -> float:
    """Minimum of the mobility over a dense sample of [lo, hi]."""
    return float(np.min(b(np.linspace(lo, hi, n_sample))))


def check_mobility(b, lo: float = -1.0, hi: float = 1.0):
    floor = mobility_floor(b, lo, hi)
    if floor <= 0.0:
        raise ModelError(f"mobility is not positive on [{lo}, {hi}]: min {floor:g}")
    return floor


def scale_params(params: ModelParams, d: float, c: float = 0.0) -> ModelParams:
    """Rescale the model while keeping the phase evolution unchanged.

    gamma -> gamma / d, b -> d * b, F -> F / d + c * s (so f -> f / d + c).
    The chemical potential transforms as mu -> mu / d + c.  Spline
    parameters are rescaled through their knot values, which is exact
    because the natural closure is linear and reproduces linear data.
    """
    if not d > 0.0:
        raise ModelError(f"scaling factor d must be positive, got {d}")

    def scaled(p, mul, lin):
        if isinstance(p, SplineParameter):
            return SplineParameter(
                p.grid, p.values * mul + lin * p.grid.knots, name=p.name
            )
        return ClosedFormParameter(
            lambda s, p=p: mul * p(s, 0) + lin * np.asarray(s, dtype=float),
            lambda s, p=p: mul * p(s, 1) + lin,
            lambda s, p=p: mul * p(s, 2),
            name=p.name,
        )

    return ModelParams(
        gamma=params.gamma / d,
        b=scaled(params.b, d, 0.0),
        F=scaled(params.F, 1.0 / d, c),
    )


def mass(phi: PeriodicField, n_quad: int = 8) -> float:
    """Integral of the phase field over the torus."""
    x, w = quadrature_rule(phi.basis.mesh, n_quad)
    return float(w @ eval_field(phi, x))


def energy(phi: PeriodicField, params: ModelParams, n_quad: int = 8) -> float:
    """Free energy: gamma/2 |grad phi|^2 + F(phi), integrated."""
    x, w = quadrature_rule(phi.basis.mesh, n_quad)
    grad = eval_field(phi, x, 1)
    vals = eval_field(phi, x)
    return float(w @ (0.5 * params.gamma * grad**2 + params.F(vals)))


@dataclass
class RegularizerGram:
    """Dense SPD gram of a spline grid in the squared H2 inner product."""

    grid: NaturalSplineGrid
    R: np.ndarray

    def __post_init__(self):
        dev = np.abs(self.R - self.R.T).max()
        if dev > 1e-12 * max(np.abs(self.R).max(), 1.0):
            raise ParameterError("regularizer gram deviates from symmetry")
        self.R = 0.5 * (self.R + self.R.T)
        try:
            self._chol = cho_factor(self.R)
        except np.linalg.LinAlgError as err:
            raise ParameterError(f"regularizer gram is not positive definite: {err}")

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.R @ v

    def solve(self, v: np.ndarray) -> np.ndarray:
        return cho_solve(self._chol, v)

    def norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.R @ v), 0.0)))


def assemble_param_gram(grid: NaturalSplineGrid, n_quad: int = 4) -> RegularizerGram:
    """H2 gram over the knot interval: orders 0, 1, 2 of the spline basis.

    Four Gauss points per knot span integrate the piecewise-cubic
    products exactly.
    """
    g, wref = np.polynomial.legendre.leggauss(n_quad)
    u = 0.5 * (g + 1.0)
    sig = grid.spacing
    pts = (grid.knots[:-1, None] + u[None, :] * sig).ravel()
    w = np.tile(0.5 * wref * sig, grid.n_knots - 1)
    r = np.zeros((grid.n_knots, grid.n_knots))
    for order in range(3):
        e = grid.eval_matrix(pts, order)
        r += e.T @ (w[:, None] * e)
    return RegularizerGram(grid, r)


# --- reference problem catalog -------------------------------------------

GAMMA_DEFAULT = 0.003


def _dw_F(s):
    return (s - 0.99) ** 2 * (s + 0.99) ** 4


def _dw_f(s):
    a, p = s - 0.99, s + 0.99
    return 2.0 * a * p**4 + 4.0 * a**2 * p**3


def _dw_fprime(s):
    a, p = s - 0.99, s + 0.99
    return 2.0 * p**4 + 16.0 * a * p**3 + 12.0 * a**2 * p**2


def default_potential() -> ClosedFormParameter:
    """Sixth-degree double well with minima at +-0.99."""
    return ClosedFormParameter(_dw_F, _dw_f, _dw_fprime, name="double-well")


def _mob(s):
    return (1.0 - s) ** 4 * (1.0 + s) ** 2 + 0.2


def _mob_d1(s):
    return -4.0 * (1.0 - s) ** 3 * (1.0 + s) ** 2 + 2.0 * (1.0 - s) ** 4 * (1.0 + s)


def _mob_d2(s):
    return (
        12.0 * (1.0 - s) ** 2 * (1.0 + s) ** 2
        - 16.0 * (1.0 - s) ** 3 * (1.0 + s)
        + 2.0 * (1.0 - s) ** 4
    )


def default_mobility() -> ClosedFormParameter:
    """Asymmetric degenerate-looking mobility with floor 0.2."""
    return ClosedFormParameter(_mob, _mob_d1, _mob_d2, name="mobility")


def default_params(gamma: float = GAMMA_DEFAULT) -> ModelParams:
    return ModelParams(gamma=gamma, b=default_mobility(), F=default_potential())


def default_initial_profile(x):
    """Three-mode initial phase profile with mean 0.1."""
    x = np.asarray(x, dtype=float)
    return (
        0.1 * np.sin(2.0 * np.pi * x)
        - 0.1 * np.sin(4.0 * np.pi * x)
        + 0.1 * np.sin(12.0 * np.pi * x)
        + 0.1
    )
