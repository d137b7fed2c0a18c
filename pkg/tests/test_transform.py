import numpy as np
import pytest

from fgabloch.bloch import BrillouinGrid, prepare_band_table
from fgabloch.errors import QuadratureRiskError, ResolutionError
from fgabloch.potentials import PeriodicPotential
from fgabloch.transform import (PhaseSpaceGrid, band_projection, bloch_transform,
                                gaussian_eval, parseval_check, phase_grid_for_field,
                                reconstruct, windowed_bloch_transform)
from fgabloch.wavefield import WaveField, gaussian_packet, l2_distance


def _packet(table, eps=1 / 32, L=1.0, q0=0.5, p0=0.8, s=16, band=1, width=1.0):
    n_x = int(L / eps) * s
    f, p_used = gaussian_packet(1, eps, L, n_x, q0=q0, p0=p0, width=width,
                                table=table, band=band)
    return f, p_used


# --- gaussian window --------------------------------------------------------

def test_gaussian_eval_center():
    assert gaussian_eval([0.3], [1.0], 0.1, np.array([0.3])) == pytest.approx(1.0)


def test_gaussian_eval_one_sigma():
    eps = 0.02
    x = np.array([np.sqrt(2 * eps)])
    val = gaussian_eval([0.0], [0.0], eps, x)
    assert val == pytest.approx(np.exp(-1.0))


def test_gaussian_eval_explicit_point():
    val = gaussian_eval([0.0], [1.0], 0.01, np.array([0.1]))[0]
    assert val == pytest.approx(np.exp(-0.5) * np.exp(10j), abs=1e-12)


# --- windowed transform -----------------------------------------------------

def test_zero_field_zero_coefficients(cos_table128):
    eps, L = 1 / 32, 1.0
    f = WaveField(1, eps, L, np.zeros(int(L / eps) * 16, complex), 0.0)
    grid = PhaseSpaceGrid(dimension=1, eps=eps, q_start=[0.0], dq=0.05, n_q=10,
                          p_nodes_per_axis=128, length=L, q_full_circle=False)
    w = windowed_bloch_transform(f, cos_table128, 1, grid)
    assert np.all(w.values == 0)


def test_free_transform_matches_gaussian_overlap_oracle(free_table128):
    """V = 0, band 1: the transform is the windowed Fourier transform, and for
    a Gaussian packet the coefficients follow from the closed-form complex
    Gaussian integral (oracle, image-summed over the torus)."""
    eps, L = 1 / 32, 1.0
    q0, p0 = 0.5, 0.7853981633974483   # p0 on the p-grid
    n_x = int(L / eps) * 16
    f, p_used = gaussian_packet(1, eps, L, n_x, q0=q0, p0=p0, normalize=False)
    psg = phase_grid_for_field(f, free_table128)
    w = windowed_bloch_transform(f, free_table128, 1, psg)

    const = 2.0 ** 0.25 / (2 * np.pi * eps) ** 0.75
    q = psg.q_axes()[0]
    p = psg.p_axis()
    interior = np.abs(p) < 2.0    # away from the folded-band crossing at the edge
    expect = np.zeros((q.size, p.size), complex)
    for m in range(-2, 3):
        dq = q[:, None] - (q0 + m * L)
        dp = p[None, :] - p_used[0]
        # int exp(-(x-q)^2/2e - ip(x-q)/e) exp(-(x-q0)^2/2e + ip0(x-q0)/e) dx
        #   = sqrt(pi e) exp(-dq^2/4e - dp^2/4e) exp(i (p+p0) dq / 2e)
        expect += (np.sqrt(np.pi * eps)
                   * np.exp(-dq ** 2 / (4 * eps) - dp ** 2 * (1 / (4 * eps)))
                   * np.exp(1j * (p[None, :] + p_used[0]) * dq / (2 * eps)))
    expect *= const
    # the stored eigenvector carries the transport gauge's global phase
    k0 = free_table128.cutoff
    gauge = np.conj(free_table128.node_coeffs(1)[:, k0])
    expect *= gauge[None, :]
    err = np.abs(w.values[:, interior] - expect[:, interior]).max()
    assert err <= 1e-10 * np.abs(expect).max()


def test_transform_linearity(cos_table128, rng):
    eps, L = 1 / 32, 1.0
    n_x = int(L / eps) * 16
    v1 = rng.normal(size=n_x) + 1j * rng.normal(size=n_x)
    v2 = rng.normal(size=n_x) + 1j * rng.normal(size=n_x)
    f1 = WaveField(1, eps, L, v1, 0.0)
    f2 = WaveField(1, eps, L, v2, 0.0)
    grid = phase_grid_for_field(f1, cos_table128)
    a, b = 1.3 - 0.2j, -0.4 + 2.1j
    combo = WaveField(1, eps, L, a * v1 + b * v2, 0.0)
    w = windowed_bloch_transform(combo, cos_table128, 1, grid)
    w1 = windowed_bloch_transform(f1, cos_table128, 1, grid)
    w2 = windowed_bloch_transform(f2, cos_table128, 1, grid)
    scale = np.abs(w.values).max()
    assert np.abs(w.values - a * w1.values - b * w2.values).max() <= 1e-12 * scale


def test_resolution_error(cos_table128):
    eps, L = 1 / 32, 1.0
    f = WaveField(1, eps, L, np.zeros(int(L / eps) * 4, complex), 0.0)   # 4 pts/cell
    grid = PhaseSpaceGrid(dimension=1, eps=eps, q_start=[0.0], dq=0.05, n_q=4,
                          p_nodes_per_axis=128, length=L)
    with pytest.raises(ResolutionError):
        windowed_bloch_transform(f, cos_table128, 1, grid)


def test_quadrature_risk_error():
    with pytest.raises(QuadratureRiskError):
        PhaseSpaceGrid(dimension=1, eps=1 / 64, q_start=[0.0], dq=0.2, n_q=4,
                       p_nodes_per_axis=64, length=1.0)
    with pytest.raises(QuadratureRiskError):
        PhaseSpaceGrid(dimension=1, eps=1 / 64, q_start=[0.0], dq=0.05, n_q=4,
                       p_nodes_per_axis=32, length=1.0)   # dp too big


# --- band projection ---------------------------------------------------------

def test_projection_of_zero(cos_table128):
    eps, L = 1 / 32, 1.0
    f = WaveField(1, eps, L, np.zeros(int(L / eps) * 16, complex), 0.0)
    grid = PhaseSpaceGrid(dimension=1, eps=eps, q_start=[0.0], dq=0.05, n_q=10,
                          p_nodes_per_axis=128, length=L)
    out = band_projection(f, cos_table128, 1, grid)
    assert np.all(out.values == 0)


def test_projection_not_projection_but_close(cos_table128):
    """Pi applied twice vs once differs by at most twice the single-band
    residual (oracle: direct evaluation)."""
    psi0, _ = _packet(cos_table128)
    psg = phase_grid_for_field(psi0, cos_table128)
    phi = band_projection(psi0, cos_table128, 1, psg)
    r1 = l2_distance(phi, psi0)[0]
    phi2 = band_projection(phi, cos_table128, 1, psg)
    d = l2_distance(phi2, phi)[0]
    assert d <= 2 * r1
    assert d > 1e-12      # genuinely not a projection


def test_reconstruction_eight_bands(cos_table128):
    psi0, _ = _packet(cos_table128)
    psg = phase_grid_for_field(psi0, cos_table128)
    rec = reconstruct(psi0, cos_table128, range(1, 9), psg)
    assert l2_distance(rec, psi0)[1] <= 1e-4


def test_adjoint_duality(cos_table128, rng):
    eps, L = 1 / 32, 1.0
    n_x = int(L / eps) * 16
    dx = L / n_x
    f = WaveField(1, eps, L, rng.normal(size=n_x) + 1j * rng.normal(size=n_x), 0.0)
    g = WaveField(1, eps, L, rng.normal(size=n_x) + 1j * rng.normal(size=n_x), 0.0)
    grid = phase_grid_for_field(f, cos_table128)
    pf = band_projection(f, cos_table128, 1, grid)
    pg = band_projection(g, cos_table128, 1, grid)
    lhs = np.vdot(pf.values, g.values) * dx
    rhs = np.vdot(f.values, pg.values) * dx
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_truncation_robustness(cos_table128):
    psi0, _ = _packet(cos_table128, eps=1 / 16, L=1.0)
    psg = phase_grid_for_field(psi0, cos_table128, r_c=6.0)
    w6 = windowed_bloch_transform(psi0, cos_table128, 1, psg, r_c=6.0)
    w12 = windowed_bloch_transform(psi0, cos_table128, 1, psg, r_c=12.0)
    scale = np.abs(w12.values).max()
    # exp(-6^2/2) ~ 1.5e-8 bounds the dropped tail at r_c = 6
    assert np.abs(w6.values - w12.values).max() <= 1e-7 * scale
    # at the default r_c = 8 the tail is below exp(-32) ~ 1e-14
    w8 = windowed_bloch_transform(psi0, cos_table128, 1, psg, r_c=8.0)
    w16 = windowed_bloch_transform(psi0, cos_table128, 1, psg, r_c=16.0)
    assert np.abs(w8.values - w16.values).max() <= 1e-10 * scale


def test_shift_covariance_free_case(free_table128):
    """Translating psi moves |w| in q by the same amount (V = 0 only)."""
    eps, L = 1 / 32, 1.0
    n_x = int(L / eps) * 16
    f, p_used = gaussian_packet(1, eps, L, n_x, q0=0.4, p0=0.5, normalize=False)
    n_q = 16
    assert n_x % n_q == 0
    grid = PhaseSpaceGrid(dimension=1, eps=eps, q_start=[0.0], dq=L / n_q, n_q=n_q,
                          p_nodes_per_axis=128, length=L, q_full_circle=True)
    w0 = windowed_bloch_transform(f, free_table128, 1, grid)
    shift_cells = n_x // n_q           # one q spacing
    f2 = f.with_values(np.roll(f.values, shift_cells))
    w1 = windowed_bloch_transform(f2, free_table128, 1, grid)
    a0 = np.abs(w0.values)
    a1 = np.abs(w1.values)
    assert np.max(np.abs(a1 - np.roll(a0, 1, axis=0))) <= 1e-8 * a0.max()


# --- parseval ----------------------------------------------------------------

def test_parseval_zero_field(cos_table128):
    eps, L = 1 / 32, 1.0
    f = WaveField(1, eps, L, np.zeros(int(L / eps) * 16, complex), 0.0)
    grid = PhaseSpaceGrid(dimension=1, eps=eps, q_start=[0.0], dq=0.05, n_q=8,
                          p_nodes_per_axis=128, length=L)
    n2, mass = parseval_check(f, cos_table128, 2, grid)
    assert n2 == 0.0 and mass == 0.0


def test_bloch_transform_parseval(cos_table128):
    """Non-windowed Bloch Parseval identity on the finite torus (<= 1e-6)."""
    psi0, _ = _packet(cos_table128)
    coef, xis = bloch_transform(psi0, cos_table128, 8)
    r = psi0.cells
    total = np.sum(np.abs(coef) ** 2) * (2 * np.pi / r)
    n2 = psi0.norm() ** 2
    assert abs(total - n2) <= 1e-6 * n2


def test_windowed_mass_ratio_vs_dense_oracle(cos_potential):
    """Windowed coefficient mass over norm^2: reported ratio agrees with a
    brute-force dense quadrature at double resolution (oracle)."""
    eps, L = 1 / 16, 1.0
    coarse = prepare_band_table(BrillouinGrid(1, 64), cos_potential, 8, 16)
    dense = prepare_band_table(BrillouinGrid(1, 128), cos_potential, 8, 16)
    n_x = int(L / eps) * 16
    psi0, _ = gaussian_packet(1, eps, L, n_x, q0=0.5, p0=0.8, table=coarse, band=1)
    g1 = phase_grid_for_field(psi0, coarse)
    n2, m1 = parseval_check(psi0, coarse, 8, g1)
    g2 = PhaseSpaceGrid(dimension=1, eps=eps, q_start=[0.0], dq=g1.dq / 2,
                        n_q=2 * g1.n_q, p_nodes_per_axis=128, length=L,
                        q_full_circle=True)
    _, m2 = parseval_check(psi0, dense, 8, g2)
    assert abs(m1 / n2 - m2 / n2) <= 1e-8
    # the transform is an isometry up to band truncation: ratio just below 1
    assert 0.999 <= m1 / n2 <= 1.0 + 1e-9


# --- 2d smoke ----------------------------------------------------------------

def test_2d_transform_projection_consistency():
    eps, L = 1 / 4, 2.0
    table = prepare_band_table(BrillouinGrid(2, 8), PeriodicPotential.cosine(2, 0.5), 2, 2)
    n_x = int(L / eps) * 8
    psi0, _ = gaussian_packet(2, eps, L, n_x, q0=[1.0, 1.0], p0=[0.3, -0.2])
    grid = PhaseSpaceGrid(dimension=2, eps=eps, q_start=[0.0, 0.0], dq=0.25, n_q=8,
                          p_nodes_per_axis=8, c_g=1.6, length=L, q_full_circle=True)
    w = windowed_bloch_transform(psi0, table, 1, grid, r_c=6.0)
    assert np.all(np.isfinite(w.values))
    # adjoint duality in 2d
    out = band_projection(psi0, table, 1, grid, r_c=6.0, coefficients=w)
    assert out.values.shape == psi0.values.shape


def test_reconstruction_worst_case_momentum():
    """Spec envelope: |p0| <= 0.8 pi at eps = 1/16 reconstructs below 1e-4."""
    eps, L = 1 / 16, 1.0
    table = prepare_band_table(BrillouinGrid(1, 64), PeriodicPotential.cosine(1), 8, 16)
    n_x = int(L / eps) * 16
    psi0, _ = gaussian_packet(1, eps, L, n_x, q0=0.5, p0=0.8 * np.pi)
    psg = phase_grid_for_field(psi0, table)
    rec = reconstruct(psi0, table, range(1, 9), psg)
    assert l2_distance(rec, psi0)[1] <= 1e-4
