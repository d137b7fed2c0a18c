"""Wave-field synthesis from propagated phase-space trajectories.

Each trajectory contributes

    pref * a0 * exp(i S / eps) * G^eps_{Q, P}(x) * u_n(P, x/eps) * w_n(q, p) dq^d dp^d

with pref = 2^{-d/4} (2 pi eps)^{-3d/4}; the seed coefficient w_n already
carries the windowed-transform prefactor, so at t = 0 the sum reproduces the
band operator exactly (same quadrature).

Bloch factors are evaluated at the nearest Brillouin node to the wrapped
momentum with a linear phase alignment.  A trajectory whose momentum has
wound around the zone w times picks up the compensation
exp(i w.theta_hol) exp(-2 pi i (w.Q)/eps): the stored gauge has a seam at
the zone boundary, and this factor is exactly what keeps a0 * u smooth
across it (the basis relabeling moves a plane wave from u into the Gaussian
phase).

Spatial work is restricted to each Gaussian's truncation window; windows are
bucketed onto the output grid when narrower than the domain, otherwise the
periodized image sum runs over the full grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bloch import BandTable
from .dynamics import EnsembleSnapshot, wrap_momentum
from .errors import PlanError
from .transform import SeedSet, _bloch_on_grid, _field_cells
from .wavefield import WaveField, l2_distance  # noqa: F401  (re-exported)

TWO_PI = 2.0 * np.pi


def initial_snapshot(seeds: SeedSet) -> EnsembleSnapshot:
    """The t = 0 ensemble state: Q = q, P = p, S = 0, F = I, a0 = 2^{d/2}."""
    n, d = seeds.q.shape
    return EnsembleSnapshot(
        t=0.0, Q=seeds.q.astype(float).copy(), P=seeds.p.astype(float).copy(),
        S=np.zeros(n), F=np.broadcast_to(np.eye(2 * d), (n, 2 * d, 2 * d)).copy(),
        a0=np.full(n, 2.0 ** (d / 2.0), dtype=complex), a1=np.zeros(n, dtype=complex),
        sympl_residual=np.zeros(n), sigma_min=np.full(n, np.sqrt(2.0)),
        ok=np.ones(n, dtype=bool))


@dataclass(frozen=True)
class SynthesisPlan:
    """One band's contribution: trajectories plus the target spatial grid."""

    table: BandTable
    band: int
    seeds: SeedSet
    snapshot: EnsembleSnapshot
    length: float
    out_n_x: int
    r_c: float = 8.0

    def __post_init__(self):
        if self.seeds.count != self.snapshot.Q.shape[0]:
            raise PlanError("seed set and snapshot sizes differ")
        if not np.all(self.snapshot.ok):
            raise PlanError(
                f"{int((~self.snapshot.ok).sum())} trajectories carry invariant "
                "failures; filter them before synthesis")
        if not np.all(np.isfinite(self.snapshot.a0)):
            raise PlanError("non-finite a0 in snapshot")

    @property
    def eps(self) -> float:
        return self.seeds.eps

    @property
    def time(self) -> float:
        return self.snapshot.t


def _node_assignments(plan: SynthesisPlan):
    """Momentum representative, effective winding and Brillouin node per trajectory.

    Splits each unwrapped P into P_rep + 2*pi*w_eff with P_rep within half a
    grid spacing of its nearest node position; an edge-wrapped nearest node
    is folded into the winding so that every trajectory references a stored
    node directly.
    """
    g = plan.table.grid
    M = g.nodes_per_axis
    dxi = g.spacing
    p_w, winding = wrap_momentum(plan.snapshot.P)
    m = np.rint((p_w + np.pi) / dxi).astype(int)         # 0..M per axis
    edge = (m == M).astype(int)
    node_idx = np.where(m == M, 0, m)
    w_eff = winding + edge
    p_rep = p_w - TWO_PI * edge
    node_pos = -np.pi + dxi * node_idx
    if g.dimension == 1:
        flat = node_idx[:, 0]
    else:
        flat = node_idx[:, 0] * M + node_idx[:, 1]
    return p_rep, w_eff, flat, node_pos


def _trajectory_coefficients(plan: SynthesisPlan, p_rep, w_eff, flat, node_pos):
    """Scalar weight per trajectory (everything except Gaussian and Bloch factors)."""
    d = plan.table.grid.dimension
    eps = plan.eps
    snap = plan.snapshot
    nb1 = plan.table.band_index(plan.band)
    pref = 2.0 ** (-d / 4.0) / (TWO_PI * eps) ** (3.0 * d / 4.0)
    coef = (pref * plan.seeds.weight) * snap.a0 * np.exp(1j * snap.S / eps) * plan.seeds.w
    if plan.table.holonomy is not None:
        theta = plan.table.holonomy[nb1]                 # (d,)
        coef = coef * np.exp(1j * (w_eff @ theta))
    coef = coef * np.exp(-TWO_PI * 1j * np.sum(w_eff * snap.Q, axis=1) / eps)
    if plan.table.berry is not None:
        a_node = plan.table.berry[flat, nb1]             # (n, d)
        coef = coef * np.exp(-1j * np.sum(a_node * (p_rep - node_pos), axis=1))
    return coef


def _gauss_rows_full(x, Q, p_rep, eps, radius, length):
    """Periodized truncated Gaussian rows over the whole axis grid: (n, n_x)."""
    nmax = int(np.ceil(radius / length)) + 1
    out = np.zeros((Q.shape[0], x.shape[0]), dtype=complex)
    for nu in range(-nmax, nmax + 1):
        rho = x[None, :] - Q[:, None] + nu * length
        mask = np.abs(rho) <= radius
        if not mask.any():
            continue
        z = np.where(mask, -rho ** 2 / (2 * eps) + 1j * p_rep[:, None] * rho / eps, 0.0)
        out += np.where(mask, np.exp(z), 0.0)
    return out


def synthesize(plan: SynthesisPlan) -> WaveField:
    """Evaluate one band's trajectory superposition on the output grid."""
    d = plan.table.grid.dimension
    eps = plan.eps
    L = plan.length
    out = WaveField(dimension=d, eps=eps, length=L,
                    values=np.zeros((plan.out_n_x,) * d, dtype=complex),
                    time=plan.time)
    if plan.seeds.count == 0:
        return out
    R, s = _field_cells(out)
    radius = plan.r_c * np.sqrt(eps)
    x = out.axis_points()
    dx = out.dx

    p_rep, w_eff, flat, node_pos = _node_assignments(plan)
    coef = _trajectory_coefficients(plan, p_rep, w_eff, flat, node_pos)
    Q = plan.snapshot.Q

    vals = np.zeros((plan.out_n_x,) * d, dtype=complex)
    window = 2 * radius < L - 2 * dx
    for node in np.unique(flat):
        sel = np.nonzero(flat == node)[0]
        u = _bloch_on_grid(plan.table, plan.band, int(node), plan.out_n_x, s)
        if d == 1:
            acc = np.zeros(plan.out_n_x, dtype=complex)
            if window:
                w_pts = int(np.ceil(2 * radius / dx)) + 1
                offs = np.arange(w_pts)
                for chunk in np.array_split(sel, max(1, sel.size // 512)):
                    j0 = np.ceil((Q[chunk, 0] - radius) / dx).astype(int)
                    xg = (j0[:, None] + offs[None, :]) * dx
                    rho = xg - Q[chunk, 0][:, None]
                    z = -rho ** 2 / (2 * eps) + 1j * p_rep[chunk, 0][:, None] * rho / eps
                    g = np.exp(z) * (np.abs(rho) <= radius)
                    g *= coef[chunk][:, None]
                    idx = (j0[:, None] + offs[None, :]) % plan.out_n_x
                    acc += (np.bincount(idx.ravel(), weights=g.real.ravel(),
                                        minlength=plan.out_n_x)
                            + 1j * np.bincount(idx.ravel(), weights=g.imag.ravel(),
                                               minlength=plan.out_n_x))
            else:
                for chunk in np.array_split(sel, max(1, sel.size // 256)):
                    rows = _gauss_rows_full(x, Q[chunk, 0], p_rep[chunk, 0],
                                            eps, radius, L)
                    acc += coef[chunk] @ rows
            vals += acc * u
        else:
            g0 = _gauss_rows_full(x, Q[sel, 0], p_rep[sel, 0], eps, radius, L)
            g1 = _gauss_rows_full(x, Q[sel, 1], p_rep[sel, 1], eps, radius, L)
            vals += np.einsum("i,ix,iy->xy", coef[sel], g0, g1) * u
    return out.with_values(vals)


def multi_band_synthesize(plans, psi0: WaveField = None, grid=None, r_c: float = 8.0):
    """Pointwise sum of per-band syntheses, plus the band-truncation residual.

    Returns (field, residual) with residual = ||psi0 - sum_n Pi_n psi0||_2
    when psi0 and a phase-space grid are supplied (the band-truncation part
    of the multi-band error), NaN otherwise.  All plans must share time,
    epsilon and output grid.
    """
    plans = list(plans)
    if not plans:
        if psi0 is None:
            raise PlanError("no synthesis plans and no reference field given")
        zero = psi0.with_values(np.zeros_like(psi0.values))
        return zero, psi0.norm()
    t0, eps0 = plans[0].time, plans[0].eps
    nx0, L0 = plans[0].out_n_x, plans[0].length
    for p in plans[1:]:
        if abs(p.time - t0) > 1e-9 * max(1.0, abs(t0)):
            raise PlanError(f"plans at different times: {p.time} vs {t0}")
        if abs(p.eps - eps0) > 1e-15 or p.out_n_x != nx0 or abs(p.length - L0) > 1e-12:
            raise PlanError("plans use different output grids")
    total = None
    for p in plans:
        f = synthesize(p)
        total = f if total is None else total.with_values(total.values + f.values)

    residual = float("nan")
    if psi0 is not None and grid is not None:
        from .transform import reconstruct
        rec = reconstruct(psi0, plans[0].table, [p.band for p in plans], grid, r_c)
        residual, _ = l2_distance(rec, psi0)
    return total, residual
