"""Observation pipeline: data grids, noise, level sets, identifiability.

Simulated trajectories are restricted to a coarser space-time grid and
re-expanded in periodic cubic splines; everything downstream (difference
quotients, chemical potential reconstruction, noise injection, level-set
diagnostics, inverse assembly) works on these spline snapshots.  The
piecewise-cubic form makes ranges, level-set crossings, and indicator
integrals exactly computable, which the co-area diagnostics rely on.
"""

from dataclasses import dataclass, field

import numpy as np

from .meshbasis import (
    PERIODIC_CUBIC_SPLINE,
    GramPair,
    PeriodicField,
    SpatialBasis,
    assemble_grams,
    basis_matrix,
    build_mesh,
    cubic_spline_basis,
    dual_norm_Hm1,
    eval_field,
    interpolate_many,
    quadrature_rule,
)
from .forward import Trajectory


class DataError(ValueError):
    """Invalid observation-grid request or out-of-range data."""


@dataclass
class ObservationData:
    """Spline snapshots of the phase field on the observation grid."""

    basis: SpatialBasis
    times: np.ndarray
    coef: np.ndarray               # (n_times, dof) spline coefficients
    tau_data: float
    delta: float = 0.0             # injected noise level, 0 = clean
    provenance: str = "interpolation-only"
    interp_sup: float = 0.0        # sup-in-time H1 restriction discrepancy
    interp_l2: float = 0.0         # L2-in-time H1 restriction discrepancy
    _grams: GramPair | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.basis.kind != PERIODIC_CUBIC_SPLINE:
            raise DataError("observation data must live in the spline basis")
        self.times = np.asarray(self.times, dtype=float)
        self.coef = np.asarray(self.coef, dtype=float)
        if self.coef.shape != (len(self.times), self.basis.dof_count):
            raise DataError(
                f"coefficient array has shape {self.coef.shape}, expected "
                f"({len(self.times)}, {self.basis.dof_count})"
            )

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def grams(self) -> GramPair:
        if self._grams is None:
            self._grams = assemble_grams(self.basis)
        return self._grams

    def index_of(self, t: float) -> int:
        k = int(round(t / self.tau_data))
        if k < 0 or k >= self.n_times or abs(self.times[k] - t) > 1e-9 * max(
            self.tau_data, abs(t), 1e-300
        ):
            raise DataError(f"t = {t} is not on the observation time grid")
        return k

    def phi_field(self, k: int) -> PeriodicField:
        return PeriodicField(self.basis, self.coef[k])

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.int64(self.basis.mesh.n_cells).tobytes())
        h.update(self.times.tobytes())
        h.update(np.ascontiguousarray(self.coef).tobytes())
        return h.hexdigest()[:16]


def restrict_to_data_grid(traj: Trajectory, factor: int = 2) -> ObservationData:
    """Subsample a trajectory in space and time and re-expand in splines.

    Every ``factor``-th state is kept and interpolated through the FE
    vertex values on the coarsened mesh.  The returned container records
    the H1 discrepancy between the spline snapshots and the originating
    FE states (sup over kept times, and an L2-in-time aggregate), which
    quantifies the data error of a clean restriction.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise DataError(f"coarsening factor must be a positive integer, got {factor}")
    n_fine = traj.basis.mesh.n_cells
    n_steps = traj.n_states - 1
    if n_fine % factor or n_steps % factor:
        raise DataError(
            f"factor {factor} does not divide mesh ({n_fine} cells) "
            f"and step count ({n_steps})"
        )
    mesh = build_mesh(n_fine // factor)
    basis = cubic_spline_basis(mesh)
    # FE vertex v sits at dof 2v; coarse node j is fine vertex j * factor
    vert_dofs = 2 * factor * np.arange(mesh.n_cells)
    kept = np.arange(0, traj.n_states, factor)
    values = traj.phi[kept][:, vert_dofs]
    coef = interpolate_many(basis, values)

    # interpolation discrepancy in H1, measured on the fine quadrature
    xq, wq = quadrature_rule(traj.basis.mesh, 8)
    e_fine = [basis_matrix(traj.basis, xq, r) for r in (0, 1)]
    e_coarse = [basis_matrix(basis, xq, r) for r in (0, 1)]
    errs = np.empty(len(kept))
    for i, k in enumerate(kept):
        acc = 0.0
        for r in range(2):
            diff = e_coarse[r] @ coef[i] - e_fine[r] @ traj.phi[k]
            acc += wq @ diff**2
        errs[i] = np.sqrt(max(acc, 0.0))
    tau_data = factor * traj.tau
    trapz = np.ones(len(kept))
    trapz[0] = trapz[-1] = 0.5
    interp_l2 = float(np.sqrt(tau_data * np.sum(trapz * errs**2)))
    return ObservationData(
        basis=basis,
        times=traj.times[kept].copy(),
        coef=coef,
        tau_data=tau_data,
        interp_sup=float(errs.max()),
        interp_l2=interp_l2,
    )


def time_derivative(data: ObservationData, t: float) -> PeriodicField:
    """Backward difference quotient of the snapshots at a data time."""
    k = data.index_of(t)
    if k == 0:
        raise DataError(f"t = {t} has no predecessor on the data grid")
    dcoef = (data.coef[k] - data.coef[k - 1]) / data.tau_data
    return PeriodicField(data.basis, dcoef)


def chemical_potential_from_data(
    data: ObservationData, gamma: float, potential, t: float
) -> PeriodicField:
    """Spline reconstruction of mu = -gamma phi'' + f(phi) at a data time.

    phi'' and f(phi) are evaluated at the observation nodes (the spline is
    C2, so the nodal second derivative is unambiguous) and re-interpolated.
    """
    k = data.index_of(t)
    nodes = data.basis.mesh.nodes()
    phi_nodes = eval_field(data.phi_field(k), nodes)
    d2_nodes = eval_field(data.phi_field(k), nodes, 2)
    mu_nodes = -gamma * d2_nodes + potential(phi_nodes, 1)
    coef = interpolate_many(data.basis, mu_nodes[None, :])[0]
    return PeriodicField(data.basis, coef)


# --- noise ----------------------------------------------------------------


@dataclass
class NoiseRecord:
    """Attained size of one injected noise realization."""

    delta: float
    seed: int
    sup_h3: float            # max over times of the spatial H3 norm
    sup_rate_dual: float     # max over times of the H^-1 difference-quotient norm
    omega: float
    t_peak: float


def _spline_h3_norm(basis: SpatialBasis, coef: np.ndarray) -> float:
    x, w = quadrature_rule(basis.mesh, 4)
    acc = 0.0
    for order in range(4):
        vals = basis_matrix(basis, x, order) @ coef
        acc += w @ vals**2
    return float(np.sqrt(max(acc, 0.0)))


def inject_noise(
    data: ObservationData, delta: float, seed: int = 0, n_modes: int = 8
):
    """Add a separable perturbation eta(x, t) = p(x) q(t) to the snapshots.

    The spatial profile p is a random truncated Fourier sum with decaying
    coefficients, re-expanded in the data spline space and scaled so that
    its H3 norm equals ``delta`` exactly.  The temporal factor
    q(t) = cos(omega (t - t_peak)) peaks at a randomly chosen data time
    with |q| <= 1, and omega is capped so that the H^-1 norm of the
    backward difference quotient of eta stays below ``delta`` as well.
    Both attained measures scale linearly in ``delta`` by construction
    and are returned in the accompanying record.

    Returns the perturbed container and the noise record.
    """
    if delta < 0.0:
        raise DataError(f"noise level must be nonnegative, got {delta}")
    if delta == 0.0:
        clean = ObservationData(
            basis=data.basis,
            times=data.times.copy(),
            coef=data.coef.copy(),
            tau_data=data.tau_data,
            delta=0.0,
            provenance=data.provenance,
            interp_sup=data.interp_sup,
            interp_l2=data.interp_l2,
        )
        return clean, NoiseRecord(0.0, seed, 0.0, 0.0, 0.0, float(data.times[0]))

    rng = np.random.default_rng(seed)
    nodes = data.basis.mesh.nodes()
    profile = np.zeros_like(nodes)
    for k in range(1, n_modes + 1):
        a, b = rng.standard_normal(2) / k**2
        profile += a * np.cos(2.0 * np.pi * k * nodes) + b * np.sin(
            2.0 * np.pi * k * nodes
        )
    p_coef = interpolate_many(data.basis, profile[None, :])[0]
    h3 = _spline_h3_norm(data.basis, p_coef)
    if h3 == 0.0:
        raise DataError("degenerate noise profile")
    p_coef *= delta / h3

    p_dual = dual_norm_Hm1(data.grams.M_L2 @ p_coef, data.grams)
    omega = 0.9 * delta / p_dual
    t_peak = float(rng.choice(data.times))
    q = np.cos(omega * (data.times - t_peak))

    coef = data.coef + q[:, None] * p_coef[None, :]
    from .meshbasis import spline_node_values

    vals = spline_node_values(coef)
    if np.max(np.abs(vals)) >= 1.0:
        raise DataError(
            "perturbed snapshots leave the admissible phase range (-1, 1)"
        )

    sup_h3 = float(np.max(np.abs(q))) * delta
    dq = np.abs(np.diff(q)) / data.tau_data
    sup_rate = float(dq.max(initial=0.0)) * p_dual
    noisy = ObservationData(
        basis=data.basis,
        times=data.times.copy(),
        coef=coef,
        tau_data=data.tau_data,
        delta=float(delta),
        provenance="interpolation+synthetic-noise",
        interp_sup=data.interp_sup,
        interp_l2=data.interp_l2,
    )
    return noisy, NoiseRecord(float(delta), seed, sup_h3, sup_rate, omega, t_peak)


# --- piecewise-cubic helpers ----------------------------------------------

_DIFF_U = np.array(
    [
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 2.0, 0.0, 0.0],
        [0.0, 0.0, 3.0, 0.0],
    ]
)


def _piece_polys(f: PeriodicField, order: int = 0) -> np.ndarray:
    """Local monomial coefficients of d^order f on each cell, in u.

    Row j holds (a0, a1, a2, a3) with
    (d^order f)(x) = sum_k a_k u^k on cell j, u = x/h - j.
    """
    if f.basis.kind != PERIODIC_CUBIC_SPLINE:
        raise DataError("piecewise-cubic helpers require the spline basis")
    from .meshbasis import _BSPLINE_POLY

    local = f.coef[f.basis.cell_dofs()] @ _BSPLINE_POLY
    n = f.basis.mesh.n_cells
    for _ in range(order):
        local = (local @ _DIFF_U) * n
    return local


def _poly_vals(polys: np.ndarray, u: np.ndarray) -> np.ndarray:
    vals = np.full(u.shape, polys[..., 3])
    for k in (2, 1, 0):
        vals = vals * u + polys[..., k]
    return vals


def piece_value_bounds(f: PeriodicField) -> np.ndarray:
    """Exact (min, max) of the spline on each cell, shape (n_cells, 2)."""
    p = _piece_polys(f)
    n = p.shape[0]
    cand = np.empty((n, 4))
    cand[:, 0] = p[:, 0]
    cand[:, 1] = p.sum(axis=1)
    # interior critical points: 3 a3 u^2 + 2 a2 u + a1 = 0
    a, b, c = 3.0 * p[:, 3], 2.0 * p[:, 2], p[:, 1]
    cand[:, 2] = cand[:, 0]
    cand[:, 3] = cand[:, 1]
    quad = np.abs(a) > 1e-300
    disc = np.where(quad, b * b - 4.0 * a * c, 0.0)
    has = quad & (disc >= 0.0)
    sq = np.sqrt(np.where(has, disc, 0.0))
    for sign, col in ((1.0, 2), (-1.0, 3)):
        u = np.where(has, (-b + sign * sq) / np.where(has, 2.0 * a, 1.0), -1.0)
        ok = has & (u > 0.0) & (u < 1.0)
        cand[ok, col] = _poly_vals(p[ok], u[ok])
    lin = ~quad & (np.abs(b) > 1e-300)
    if np.any(lin):
        u = np.where(lin, -c / np.where(lin, b, 1.0), -1.0)
        ok = lin & (u > 0.0) & (u < 1.0)
        cand[ok, 2] = _poly_vals(p[ok], u[ok])
    return np.stack([cand.min(axis=1), cand.max(axis=1)], axis=1)


def attained_range(data: ObservationData, t: float) -> tuple[float, float]:
    """Exact range of the snapshot at time t over the torus."""
    bounds = piece_value_bounds(data.phi_field(data.index_of(t)))
    return float(bounds[:, 0].min()), float(bounds[:, 1].max())


def _real_roots_unit(poly: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Real roots of a local cubic (monomial coefficients) in [0, 1)."""
    coeffs = poly[::-1].copy()
    lead = np.max(np.abs(coeffs))
    if lead == 0.0:
        return np.empty(0)
    nz = np.nonzero(np.abs(coeffs) > 1e-14 * lead)[0]
    coeffs = coeffs[nz[0] :]
    if len(coeffs) < 2:
        return np.empty(0)
    r = np.roots(coeffs)
    r = r[np.abs(r.imag) < 1e-8].real
    r = r[(r >= -tol) & (r < 1.0 - tol)]
    return np.clip(r, 0.0, 1.0)


@dataclass
class LevelCrossings:
    """Level-set crossings of one snapshot at one level."""

    s: float
    x: np.ndarray          # sorted crossing locations in [0, 1)
    slope: np.ndarray      # phi' there
    third: np.ndarray      # phi''' there (midpoint-interpolated, second order)


def level_crossings(f: PeriodicField, s: float) -> LevelCrossings:
    """All points of {phi = s} with slopes and third derivatives.

    Candidate cells are bracketed through exact piecewise bounds, the
    local cubics are solved, and near-node duplicates are merged.  The
    spline's third derivative is piecewise constant, which is only
    first-order accurate at an arbitrary point but second-order accurate
    at cell midpoints; the reported value therefore interpolates the two
    nearest midpoint values linearly, restoring second-order pointwise
    accuracy.  A crossing merged onto a knot gets the average of the two
    adjacent pieces, which is the same rule at the knot position.
    """
    p0 = _piece_polys(f, 0)
    bounds = piece_value_bounds(f)
    h = f.basis.mesh.h
    pad = 1e-12 * max(1.0, np.max(np.abs(bounds)))
    cells = np.nonzero((bounds[:, 0] - pad <= s) & (s <= bounds[:, 1] + pad))[0]
    xs, us, pcs = [], [], []
    for j in cells:
        poly = p0[j].copy()
        poly[0] -= s
        for u in _real_roots_unit(poly):
            xs.append((j + u) * h)
            us.append(u)
            pcs.append(j)
    if not xs:
        return LevelCrossings(s, np.empty(0), np.empty(0), np.empty(0))
    order = np.argsort(xs)
    xs = np.asarray(xs)[order]
    us = np.asarray(us)[order]
    pcs = np.asarray(pcs)[order]

    p1 = _piece_polys(f, 1)
    p3 = _piece_polys(f, 3)
    n = f.basis.mesh.n_cells
    # merge duplicates across cell boundaries (including the wrap-around)
    keep, merged_node = [], []
    i = 0
    m = len(xs)
    while i < m:
        j = i
        while j + 1 < m and xs[j + 1] - xs[i] < 1e-9 * max(h, 1.0):
            j += 1
        keep.append(i)
        merged_node.append(j > i or us[i] < 1e-9 or us[i] > 1.0 - 1e-9)
        i = j + 1
    if len(keep) > 1 and (xs[keep[0]] + 1.0) - xs[keep[-1]] < 1e-9 * max(h, 1.0):
        keep = keep[:-1]
        merged_node[0] = True
        merged_node = merged_node[:-1]

    xk = xs[keep]
    slope = np.empty(len(keep))
    third = np.empty(len(keep))
    for out, (i, at_node) in enumerate(zip(keep, merged_node)):
        slope[out] = _poly_vals(p1[pcs[i]], np.array([us[i]]))[0]
        if at_node:
            # snap to the knot: halfway between the adjacent cell midpoints
            jr = pcs[i] if us[i] < 0.5 else (pcs[i] + 1) % n
            jl = (jr - 1) % n
            third[out] = 0.5 * (p3[jl, 0] + p3[jr, 0])
        elif us[i] >= 0.5:
            t = us[i] - 0.5
            third[out] = (1.0 - t) * p3[pcs[i], 0] + t * p3[(pcs[i] + 1) % n, 0]
        else:
            t = us[i] + 0.5
            third[out] = (1.0 - t) * p3[(pcs[i] - 1) % n, 0] + t * p3[pcs[i], 0]
    return LevelCrossings(s, xk, slope, third)


def spline_antiderivative(f: PeriodicField):
    """Closure evaluating int_0^x f for x in [0, 1], exactly per piece."""
    p = _piece_polys(f)
    h = f.basis.mesh.h
    # antiderivative in u, scaled by h
    anti = np.zeros((p.shape[0], 5))
    anti[:, 1:] = h * p / np.arange(1, 5)
    cum = np.concatenate([[0.0], np.cumsum(anti[:, 1:].sum(axis=1))])

    def integral(x: float) -> float:
        if x <= 0.0:
            return 0.0
        if x >= 1.0:
            return float(cum[-1])
        cells, u = f.basis.mesh.locate(x)
        j = int(cells)
        val = anti[j, 1] * u + anti[j, 2] * u**2 + anti[j, 3] * u**3 + anti[j, 4] * u**4
        return float(cum[j] + val)

    return integral


@dataclass
class CoareaSample:
    """Level-set functionals of one (time, level) pair."""

    t: float
    s: float
    A_b: float             # -gamma sum phi''' sign(phi')
    A_c: float             # sum |phi'|
    A: float               # int over {phi < s} of the difference quotient
    n_crossings: int
    min_slope: float       # smallest |phi'| among crossings
    degenerate: bool


def coarea_coefficients(
    data: ObservationData,
    gamma: float,
    s: float,
    t: float,
    degeneracy_rel: float = 0.05,
) -> CoareaSample:
    """Evaluate the level-set identity ingredients at one (t, s) pair.

    For smooth enough data the triple satisfies A_b b(s) + A_c c(s) = A
    with c = b f'.  A integrates the difference quotient over the
    sublevel set {phi < s}: testing the weak form of the evolution with
    the regularized indicator and integrating by parts produces exactly
    this orientation alongside the signs of A_b and A_c.  The sample is
    flagged degenerate when there is no crossing or some crossing slope
    falls below ``degeneracy_rel`` times the sup of |phi'|.
    """
    k = data.index_of(t)
    if k == 0:
        raise DataError(f"t = {t} has no predecessor for the difference quotient")
    f = data.phi_field(k)
    cr = level_crossings(f, s)
    dphi = time_derivative(data, t)
    integral = spline_antiderivative(dphi)
    if len(cr.x) == 0:
        lo, hi = attained_range(data, t)
        a_val = integral(1.0) if s > hi else 0.0
        return CoareaSample(t, s, 0.0, 0.0, a_val, 0, 0.0, True)

    a_b = -gamma * float(np.sum(cr.third * np.sign(cr.slope)))
    a_c = float(np.sum(np.abs(cr.slope)))

    # integrate the difference quotient over {phi < s}
    xs = cr.x
    a_val = 0.0
    for i in range(len(xs)):
        left = xs[i]
        right = xs[(i + 1) % len(xs)]
        wrap = right <= left
        mid = 0.5 * (left + (right + 1.0 if wrap else right))
        if eval_field(f, mid if mid < 1.0 else mid - 1.0) < s:
            if wrap:
                a_val += integral(1.0) - integral(left) + integral(right)
            else:
                a_val += integral(right) - integral(left)

    sup_slope = float(np.max(np.abs(_poly_vals(_piece_polys(f, 1), np.full(f.basis.mesh.n_cells, 0.5)))))
    sup_slope = max(
        sup_slope,
        float(np.max(np.abs(eval_field(f, f.basis.mesh.nodes(), 1)))),
    )
    min_slope = float(np.min(np.abs(cr.slope)))
    degenerate = min_slope < degeneracy_rel * sup_slope
    return CoareaSample(
        t, s, a_b, a_c, a_val, len(cr.x), min_slope, degenerate
    )


def merge_intervals(intervals):
    """Union of closed intervals as a sorted disjoint list."""
    ivs = sorted((float(a), float(b)) for a, b in intervals if b >= a)
    out = []
    for a, b in ivs:
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def observable_range(
    data: ObservationData,
    gamma: float,
    potential,
    t: float,
    threshold: float | None = None,
    threshold_rel: float = 1e-3,
    n_levels: int = 201,
):
    """Levels whose crossings see a nonzero chemical-potential gradient.

    Scans ``n_levels`` levels across the attained range and keeps those
    with at least one crossing where |mu'| exceeds the threshold
    (relative to sup |mu'| at that time unless an absolute value is
    given).  Returns a list of closed level intervals.
    """
    k = data.index_of(t)
    f = data.phi_field(k)
    mu = chemical_potential_from_data(data, gamma, potential, t)
    lo, hi = attained_range(data, t)
    span = hi - lo
    if span <= 0.0:
        return []
    if threshold is None:
        xq, _ = quadrature_rule(data.basis.mesh, 8)
        threshold = threshold_rel * float(np.max(np.abs(eval_field(mu, xq, 1))))
    levels = lo + (np.arange(1, n_levels + 1) / (n_levels + 1)) * span
    good = np.zeros(n_levels, dtype=bool)
    for i, s in enumerate(levels):
        cr = level_crossings(f, s)
        if len(cr.x) and np.max(np.abs(eval_field(mu, cr.x, 1))) > threshold:
            good[i] = True
    intervals = []
    i = 0
    while i < n_levels:
        if good[i]:
            j = i
            while j + 1 < n_levels and good[j + 1]:
                j += 1
            intervals.append((float(levels[i]), float(levels[j])))
            i = j + 1
        else:
            i += 1
    return intervals


def independence_check(
    data: ObservationData,
    gamma: float,
    s: float,
    t1: float,
    t2: float,
    cond_cap: float = 1e4,
):
    """Condition the 2x2 system built from (A_b, A_c) rows at two times.

    Two observation times at a fixed level give the linear system for
    the pair (b(s), c(s)); its column-scaled condition number tells
    whether the two are separable there.  Returns (condition, verdict,
    row matrix).  Degenerate level sets at either time are an error.
    """
    rows = []
    for t in (t1, t2):
        sample = coarea_coefficients(data, gamma, s, t)
        if sample.degenerate:
            raise DataError(
                f"degenerate level set at (s, t) = ({s:g}, {t:g})"
            )
        rows.append([sample.A_b, sample.A_c])
    mat = np.asarray(rows)
    scale = np.linalg.norm(mat, axis=0)
    if np.any(scale == 0.0):
        return np.inf, False, mat
    cond = float(np.linalg.cond(mat / scale))
    return cond, cond < cond_cap, mat


@dataclass
class ObservabilityRow:
    t: float
    s: float
    A_b: float
    A_c: float
    A: float
    cond: float
    in_attained: bool
    in_observable: bool
    degenerate: bool


@dataclass
class ObservabilityReport:
    """Level-set diagnostics over a grid of observation times and levels."""

    times: np.ndarray
    attained: list
    observable: list
    rows: list

    def residual(self, b_fn, c_fn) -> np.ndarray:
        """Relative defect of A_b b + A_c c = A on the non-degenerate rows."""
        out = []
        for r in self.rows:
            if r.degenerate:
                continue
            pred = r.A_b * b_fn(r.s) + r.A_c * c_fn(r.s)
            out.append(abs(pred - r.A) / max(abs(r.A), abs(r.A_c)))
        return np.asarray(out)


def build_observability_report(
    data: ObservationData,
    gamma: float,
    potential,
    times=None,
    levels_per_time: int = 7,
    threshold_rel: float = 1e-3,
    cond_cap: float = 1e4,
    degeneracy_rel: float = 0.05,
) -> ObservabilityReport:
    """Tabulate level-set functionals over sampled (time, level) pairs.

    Levels are interior quantiles of each attained range.  Each row pairs
    the time with its successor (or predecessor, at the boundary) for
    the two-time independence condition number.
    """
    if times is None:
        idx = np.unique(np.linspace(1, data.n_times - 1, 5).astype(int))
        times = data.times[idx]
    times = np.asarray(sorted(float(t) for t in times))
    for t in times:
        if data.index_of(t) == 0:
            raise DataError("observability rows need a predecessor time")
    attained = [attained_range(data, t) for t in times]
    observable = [
        observable_range(data, gamma, potential, t, threshold_rel=threshold_rel)
        for t in times
    ]
    rows = []
    for i, t in enumerate(times):
        lo, hi = attained[i]
        span = hi - lo
        fractions = (np.arange(levels_per_time) + 1.0) / (levels_per_time + 1.0)
        partner = times[i + 1] if i + 1 < len(times) else times[i - 1]
        for frac in fractions:
            s = lo + frac * span
            sample = coarea_coefficients(data, gamma, s, t, degeneracy_rel)
            try:
                cond, _, _ = independence_check(
                    data, gamma, s, t, partner, cond_cap
                )
            except DataError:
                cond = np.inf
            in_obs = any(a <= s <= b for a, b in observable[i])
            rows.append(
                ObservabilityRow(
                    t=float(t),
                    s=float(s),
                    A_b=sample.A_b,
                    A_c=sample.A_c,
                    A=sample.A,
                    cond=cond,
                    in_attained=lo <= s <= hi,
                    in_observable=in_obs,
                    degenerate=sample.degenerate,
                )
            )
    return ObservabilityReport(times, attained, observable, rows)
