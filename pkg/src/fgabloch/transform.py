"""Semiclassical windowed Bloch transform and band operators.

Implements, on discrete periodic fields:

* the Gaussian window with semiclassical scaling,
* the windowed Bloch transform  w_n(q, p) = c_w <u_n(p, ./eps) G^eps_{q,p}, psi>
  with c_w = 2^{d/4} (2 pi eps)^{-3d/4},
* its adjoint (band operator) whose band sum reconstructs the identity,
* a non-windowed Bloch transform on the finite torus whose Parseval identity
  is exact, used as the band-truncation diagnostic.

Quadrature is the rectangle rule on the uniform periodic x-grid (spectrally
accurate for smooth periodic integrands).  Gaussians are truncated at radius
r_c sqrt(eps) and periodized over torus images, which keeps the discrete
reconstruction identity exact on the torus.  The p-grid coincides with the
Brillouin grid nodes, so Bloch waves are never interpolated in p here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bloch import BandTable, band_isolation_check
from .errors import (InvalidInputError, QuadratureRiskError, ResolutionError)
from .wavefield import WaveField

DEFAULT_CG = 0.5
DEFAULT_RC = 8.0
DEFAULT_SEED_THRESHOLD = 1e-8


def gaussian_eval(q, p, eps: float, x) -> np.ndarray:
    """exp(-|x-q|^2/(2 eps) + i p.(x-q)/eps), the rescaled Gaussian window."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    d = q.shape[0]
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim <= 1 or x.shape[-1] != 1):
        x = x[..., None]
    diff = x - q
    r2 = np.sum(diff ** 2, axis=-1)
    ph = diff @ p
    return np.exp(-r2 / (2 * eps) + 1j * ph / eps)


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Uniform (q, p) grid: q over a box (or the whole torus), p over Gamma*.

    dq and dp must not exceed c_g sqrt(eps); p-nodes are exactly the
    Brillouin-grid nodes of the band table in use.
    """

    dimension: int
    eps: float
    q_start: np.ndarray      # (d,)
    dq: float
    n_q: int                 # nodes per axis
    p_nodes_per_axis: int
    c_g: float = DEFAULT_CG
    q_full_circle: bool = False
    length: float = 0.0      # torus size (needed when q_full_circle)

    def __post_init__(self):
        object.__setattr__(self, "q_start",
                           np.broadcast_to(np.asarray(self.q_start, dtype=float),
                                           (self.dimension,)).copy())
        bound = self.c_g * np.sqrt(self.eps) * (1 + 1e-12)
        if self.dq > bound:
            raise QuadratureRiskError(
                f"dq = {self.dq:.4g} exceeds c_g sqrt(eps) = {bound:.4g}")
        if self.dp > bound:
            raise QuadratureRiskError(
                f"dp = {self.dp:.4g} exceeds c_g sqrt(eps) = {bound:.4g} "
                f"(increase the Brillouin grid M)")

    @property
    def dp(self) -> float:
        return 2 * np.pi / self.p_nodes_per_axis

    def q_axis(self) -> np.ndarray:
        return self.q_start[0] + self.dq * np.arange(self.n_q)

    def q_axes(self) -> list:
        return [self.q_start[a] + self.dq * np.arange(self.n_q)
                for a in range(self.dimension)]

    def p_axis(self) -> np.ndarray:
        return -np.pi + self.dp * np.arange(self.p_nodes_per_axis)

    @property
    def weight(self) -> float:
        """Quadrature weight dq^d dp^d."""
        return (self.dq * self.dp) ** self.dimension

    @property
    def n_points(self) -> int:
        return (self.n_q * self.p_nodes_per_axis) ** self.dimension


@dataclass(frozen=True)
class WindowedCoefficients:
    band: int
    grid: PhaseSpaceGrid
    values: np.ndarray        # shape (n_q,)*d + (M,)*d
    eps: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("windowed coefficients contain non-finite entries")

    def to_seeds(self, threshold: float = DEFAULT_SEED_THRESHOLD) -> "SeedSet":
        """Flatten to (q, p, w) triplets, dropping |w| < threshold * max|w|."""
        d = self.grid.dimension
        qax = self.grid.q_axes()
        pax = [self.grid.p_axis()] * d
        mesh = np.meshgrid(*qax, *pax, indexing="ij")
        q = np.stack([m.ravel() for m in mesh[:d]], axis=-1)
        p = np.stack([m.ravel() for m in mesh[d:]], axis=-1)
        w = self.values.ravel()
        keep = np.abs(w) >= threshold * np.max(np.abs(w)) if w.size else np.array([], bool)
        return SeedSet(band=self.band, eps=self.eps, q=q[keep], p=p[keep], w=w[keep],
                       weight=self.grid.weight, total_points=w.size)

    def export_csv(self, path):
        d = self.grid.dimension
        seeds = self.to_seeds(threshold=0.0)
        cols_q = ",".join(f"q{a}" for a in range(d))
        cols_p = ",".join(f"p{a}" for a in range(d))
        with open(path, "w") as fh:
            fh.write(f"n,{cols_q},{cols_p},re_w,im_w\n")
            for q, p, w in zip(seeds.q, seeds.p, seeds.w):
                qs = ",".join(repr(float(v)) for v in q)
                ps = ",".join(repr(float(v)) for v in p)
                fh.write(f"{self.band},{qs},{ps},{w.real!r},{w.imag!r}\n")


@dataclass(frozen=True)
class SeedSet:
    """Thresholded phase-space seeds feeding the trajectory ensemble."""

    band: int
    eps: float
    q: np.ndarray           # (n, d)
    p: np.ndarray           # (n, d)
    w: np.ndarray           # (n,) complex
    weight: float           # dq^d dp^d
    total_points: int

    @property
    def count(self) -> int:
        return self.q.shape[0]


def _field_cells(field: WaveField) -> tuple[int, int]:
    """(cells per axis R, samples per cell s); validates resolution."""
    R = field.cells
    if field.n_x % R:
        raise ResolutionError(
            f"grid of {field.n_x} points does not tile the {R} lattice periods")
    s = field.n_x // R
    if s < 8:
        raise ResolutionError(
            f"{s} grid points per lattice period < 8: x-grid too coarse")
    return R, s


def _norm_const(dimension: int, eps: float) -> float:
    return 2.0 ** (dimension / 4.0) / (2 * np.pi * eps) ** (3 * dimension / 4.0)


def _cell_bloch_values(table: BandTable, n: int, flat_node: int, s: int) -> np.ndarray:
    """u_n(p_node, y) on one lattice cell sampled at s points per axis."""
    d = table.grid.dimension
    c = table.coeffs[flat_node, table.band_index(n)]
    kvecs = table.kvecs()
    ax = np.arange(s) / s
    if d == 1:
        phases = np.exp(2j * np.pi * np.outer(ax, kvecs[:, 0]))
        return phases @ c
    mesh = np.meshgrid(ax, ax, indexing="ij")
    out = np.zeros((s, s), dtype=complex)
    for coeff, k in zip(c, kvecs):
        if coeff == 0:
            continue
        out += coeff * np.exp(2j * np.pi * (k[0] * mesh[0] + k[1] * mesh[1]))
    return out


def _bloch_on_grid(table: BandTable, n: int, flat_node: int, n_x: int, s: int) -> np.ndarray:
    """u_n(p_node, x/eps) on the full x-grid: the cell values tiled."""
    cell = _cell_bloch_values(table, n, flat_node, s)
    reps = n_x // s
    if table.grid.dimension == 1:
        return np.tile(cell, reps)
    return np.tile(cell, (reps, reps))


def _p_flat_nodes(table: BandTable, grid: PhaseSpaceGrid):
    """Flat Brillouin node index for every p-node of the phase-space grid."""
    if grid.p_nodes_per_axis != table.grid.nodes_per_axis:
        raise InvalidInputError(
            "phase-space p-grid must coincide with the Brillouin grid nodes")
    M = table.grid.nodes_per_axis
    if table.grid.dimension == 1:
        return np.arange(M)
    j0, j1 = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    return (j0 * M + j1).ravel()


def _image_shifts(length: float, radius: float) -> np.ndarray:
    nmax = int(np.ceil(radius / length)) + 1
    return np.arange(-nmax, nmax + 1) * length


def _gauss_block(x: np.ndarray, q: np.ndarray, eps: float, radius: float,
                 shift: float) -> np.ndarray:
    """exp(-rho^2 / 2 eps) with rho = x - q + shift, truncated at |rho| <= radius."""
    rho = x[None, :] - q[:, None] + shift
    out = np.zeros_like(rho)
    mask = np.abs(rho) <= radius
    out[mask] = np.exp(-rho[mask] ** 2 / (2 * eps))
    return out


def windowed_bloch_transform(field: WaveField, table: BandTable, n: int,
                             grid: PhaseSpaceGrid, r_c: float = DEFAULT_RC,
                             isolation_factor: float = 0.0) -> WindowedCoefficients:
    """Windowed Bloch coefficients of one band on the phase-space grid.

    The x-integral is the rectangle rule over the periodic grid with the
    Gaussian window truncated at radius r_c sqrt(eps) and periodized over
    torus images.  `isolation_factor` > 0 applies the band-gap guard first.
    """
    if abs(field.eps - grid.eps) > 1e-15:
        raise InvalidInputError("field and phase-space grid eps differ")
    if isolation_factor > 0:
        band_isolation_check(table, n, isolation_factor)
    R, s = _field_cells(field)
    d = field.dimension
    eps = field.eps
    radius = r_c * np.sqrt(eps)
    shifts = _image_shifts(field.length, radius)
    const = _norm_const(d, eps)
    p_flat = _p_flat_nodes(table, grid)
    x = field.axis_points()
    dx = field.dx

    if d == 1:
        p = grid.p_axis()
        q = grid.q_axis()
        u = np.empty((p.size, field.n_x), dtype=complex)
        for jp, node in enumerate(p_flat):
            u[jp] = _bloch_on_grid(table, n, int(node), field.n_x, s)
        theta = (np.conj(u) * np.exp(-1j * np.outer(p, x) / eps)
                 * field.values[None, :]).T * dx
        acc = np.zeros((q.size, p.size), dtype=complex)
        for shift in shifts:
            block = _gauss_block(x, q, eps, radius, shift)
            if not block.any():
                continue
            acc += (block @ theta) * np.exp(-1j * p * shift / eps)[None, :]
        w = const * np.exp(1j * np.outer(q, p) / eps) * acc
        w = w.reshape((q.size, p.size))
        vals = w.reshape((grid.n_q,) + (grid.p_nodes_per_axis,))
    else:
        qax = grid.q_axes()
        pax = grid.p_axis()
        M = grid.p_nodes_per_axis
        vals = np.zeros((grid.n_q, grid.n_q, M, M), dtype=complex)
        psi = field.values
        for jp, node in enumerate(p_flat):
            j0, j1 = jp // M, jp % M
            pvec = np.array([pax[j0], pax[j1]])
            u = _bloch_on_grid(table, n, int(node), field.n_x, s)
            thet = np.conj(u) * psi * dx ** 2
            thet = thet * np.exp(-1j * (pvec[0] * x[:, None] + pvec[1] * x[None, :]) / eps)
            acc = np.zeros((grid.n_q, grid.n_q), dtype=complex)
            for s0 in shifts:
                b0 = _gauss_block(x, qax[0], eps, radius, s0)
                if not b0.any():
                    continue
                for s1 in shifts:
                    b1 = _gauss_block(x, qax[1], eps, radius, s1)
                    if not b1.any():
                        continue
                    acc += (b0 @ thet @ b1.T) * np.exp(-1j * (pvec[0] * s0 + pvec[1] * s1) / eps)
            qphase = np.exp(1j * (np.add.outer(qax[0] * pvec[0], qax[1] * pvec[1])) / eps)
            vals[:, :, j0, j1] = const * qphase * acc
    return WindowedCoefficients(band=n, grid=grid, values=vals, eps=eps)


def band_projection(field: WaveField, table: BandTable, n: int, grid: PhaseSpaceGrid,
                    r_c: float = DEFAULT_RC, coefficients: WindowedCoefficients = None,
                    out_n_x: int = None) -> WaveField:
    """Band operator Pi_n^{W,eps}: adjoint of the windowed transform.

    Evaluates (2^{d/4}/(2 pi eps)^{3d/4}) sum_{q,p} u_n(p, y/eps)
    G^eps_{q,p}(y) w_n(q,p) dq^d dp^d on the field's grid (or a finer grid of
    out_n_x points per axis).  Not a projection: the windowed representation
    is redundant.
    """
    if coefficients is None:
        coefficients = windowed_bloch_transform(field, table, n, grid, r_c)
    w = coefficients.values
    d = field.dimension
    eps = field.eps
    n_out = out_n_x or field.n_x
    out_field = WaveField(dimension=d, eps=eps, length=field.length,
                          values=np.zeros((n_out,) * d, dtype=complex), time=field.time)
    R, s = _field_cells(out_field)
    radius = r_c * np.sqrt(eps)
    shifts = _image_shifts(field.length, radius)
    const = _norm_const(d, eps)
    p_flat = _p_flat_nodes(table, grid)
    y = out_field.axis_points()

    if d == 1:
        p = grid.p_axis()
        q = grid.q_axis()
        wq = w.reshape(q.size, p.size) * np.exp(-1j * np.outer(q, p) / eps)
        acc = np.zeros((n_out, p.size), dtype=complex)
        for shift in shifts:
            block = _gauss_block(y, q, eps, radius, shift)
            if not block.any():
                continue
            acc += (block.T @ wq) * np.exp(1j * p * shift / eps)[None, :]
        u = np.empty((p.size, n_out), dtype=complex)
        for jp, node in enumerate(p_flat):
            u[jp] = _bloch_on_grid(table, n, int(node), n_out, s)
        total = np.sum(u.T * np.exp(1j * np.outer(y, p) / eps) * acc, axis=1)
        vals = const * grid.weight * total
    else:
        qax = grid.q_axes()
        pax = grid.p_axis()
        M = grid.p_nodes_per_axis
        vals = np.zeros((n_out, n_out), dtype=complex)
        for jp, node in enumerate(p_flat):
            j0, j1 = jp // M, jp % M
            pvec = np.array([pax[j0], pax[j1]])
            qphase = np.exp(-1j * (np.add.outer(qax[0] * pvec[0], qax[1] * pvec[1])) / eps)
            wq = w[:, :, j0, j1] * qphase
            acc = np.zeros((n_out, n_out), dtype=complex)
            for s0 in shifts:
                b0 = _gauss_block(y, qax[0], eps, radius, s0)
                if not b0.any():
                    continue
                for s1 in shifts:
                    b1 = _gauss_block(y, qax[1], eps, radius, s1)
                    if not b1.any():
                        continue
                    acc += (b0.T @ wq @ b1) * np.exp(1j * (pvec[0] * s0 + pvec[1] * s1) / eps)
            u = _bloch_on_grid(table, n, int(node), n_out, s)
            vals += u * np.exp(1j * (pvec[0] * y[:, None] + pvec[1] * y[None, :]) / eps) * acc
        vals *= const * grid.weight
    return out_field.with_values(vals)


def reconstruct(field: WaveField, table: BandTable, bands, grid: PhaseSpaceGrid,
                r_c: float = DEFAULT_RC) -> WaveField:
    """Sum of band projections over `bands` (truncated W* W)."""
    out = np.zeros_like(field.values)
    for n in bands:
        out = out + band_projection(field, table, n, grid, r_c).values
    return field.with_values(out)


def phase_grid_for_field(field: WaveField, table: BandTable, c_g: float = DEFAULT_CG,
                         r_c: float = DEFAULT_RC,
                         support_threshold: float = 1e-8) -> PhaseSpaceGrid:
    """Phase-space grid adapted to the field's support.

    q-box: support of |psi| thresholded at `support_threshold` of its max,
    padded by 2 sqrt(eps) r_c per side and clamped to one torus period;
    p: the full Brillouin grid of the table.
    """
    d = field.dimension
    eps = field.eps
    L = field.length
    dq_target = c_g * np.sqrt(eps)
    pad = 2 * np.sqrt(eps) * r_c

    absv = np.abs(field.values)
    mask = absv >= support_threshold * absv.max()
    n_x = field.n_x
    dx = field.dx

    los, widths = [], []
    for a in range(d):
        axis_mask = mask.any(axis=tuple(i for i in range(d) if i != a)) if d > 1 else mask
        idx = np.nonzero(axis_mask)[0]
        if idx.size == n_x or idx.size == 0:
            los.append(0.0)
            widths.append(L)
            continue
        # longest empty circular run -> the support interval is its complement
        present = np.zeros(n_x, bool)
        present[idx] = True
        gaps = []
        run = 0
        for j in range(2 * n_x):
            if not present[j % n_x]:
                run += 1
            else:
                if run:
                    gaps.append((run, j - run))
                run = 0
        best_len, best_start = max(gaps) if gaps else (0, 0)
        start = (best_start + best_len) % n_x
        count = n_x - best_len
        los.append(start * dx - pad)
        widths.append((count - 1) * dx + 2 * pad)
    width = max(widths)
    if width >= L:
        n_q = int(np.ceil(L / dq_target))
        dq = L / n_q
        return PhaseSpaceGrid(dimension=d, eps=eps, q_start=np.zeros(d), dq=dq,
                              n_q=n_q, p_nodes_per_axis=table.grid.nodes_per_axis,
                              c_g=c_g, q_full_circle=True, length=L)
    n_q = max(2, int(np.ceil(width / dq_target)) + 1)
    dq = width / (n_q - 1)
    centers = np.array(los) + np.array(widths) / 2
    q_start = centers - width / 2
    return PhaseSpaceGrid(dimension=d, eps=eps, q_start=q_start, dq=dq,
                          n_q=n_q, p_nodes_per_axis=table.grid.nodes_per_axis,
                          c_g=c_g, length=L)


def bloch_transform(field: WaveField, table: BandTable, n_bands: int):
    """Non-windowed Bloch transform on the finite torus.

    Returns (coefficients, xis): coefficients has shape (n_bands, R^d) over
    the R^d crystal momenta the torus supports, scaled so that
    sum_{n,r} |coef|^2 (2 pi / R)^d  equals ||psi||^2 when summed over a
    complete band set.  Fresh eigensolves at each fiber momentum; no gauge
    dependence enters |coef|.
    """
    from .bloch import _potential_matrix

    R, s = _field_cells(field)
    d = field.dimension
    eps = field.eps
    kvecs, vmat = _potential_matrix(table.potential, table.cutoff)
    nb = kvecs.shape[0]
    if n_bands > nb:
        raise InvalidInputError("n_bands exceeds basis size")

    c = np.fft.fftn(field.values) / field.n_x ** d
    freqs = np.fft.fftfreq(field.n_x, d=1.0 / field.n_x).astype(int)   # integers m
    r_ints = np.arange(R)
    r_wrapped = (r_ints + R // 2) % R - R // 2      # representative in [-R/2, R/2)
    xis = 2 * np.pi * r_wrapped / R                  # in [-pi, pi)

    # map m -> position in fft array
    pos = {int(m): i for i, m in enumerate(freqs)}

    mesh = np.meshgrid(*([r_ints] * d), indexing="ij")
    fibers = np.stack([m.ravel() for m in mesh], axis=-1)     # (R^d, d)
    coef = np.zeros((n_bands, fibers.shape[0]), dtype=complex)
    scale = (eps / (2 * np.pi)) ** (d / 2.0) * R ** d
    idx_diag = np.arange(nb)

    for fi, rvec in enumerate(fibers):
        xi = np.array([xis[r] for r in rvec])
        kin = 0.5 * np.sum((2 * np.pi * kvecs + xi) ** 2, axis=1)
        ham = vmat.astype(complex, copy=True)
        ham[idx_diag, idx_diag] += kin
        _, vecs = np.linalg.eigh(ham)
        v = np.zeros(nb, dtype=complex)
        for ki, k in enumerate(kvecs):
            m = tuple(int(r_wrapped[rvec[a]]) + int(k[a]) * R for a in range(d))
            if all(mm in pos for mm in m):
                v[ki] = c[tuple(pos[mm] for mm in m)]
        coef[:, fi] = scale * (np.conj(vecs[:, :n_bands]).T @ v)
    xi_points = np.stack([np.array([xis[r] for r in rvec]) for rvec in fibers])
    return coef, xi_points


def parseval_check(field: WaveField, table: BandTable, n_bands: int,
                   grid: PhaseSpaceGrid, r_c: float = DEFAULT_RC):
    """(||psi||^2, sum_{n<=N} ||w_n||^2 dq^d dp^d) — band-truncation diagnostic.

    The windowed transform is an isometry onto its range in exact arithmetic,
    so the ratio approaches 1 from below as the band set grows; it is
    reported, not asserted.
    """
    norm2 = field.norm() ** 2
    mass = 0.0
    for n in range(1, n_bands + 1):
        w = windowed_bloch_transform(field, table, n, grid, r_c)
        mass += float(np.sum(np.abs(w.values) ** 2)) * grid.weight
    return norm2, mass
