"""Fine-grid reference solver: Strang-split spectral stepping of

    i eps dpsi/dt = -(eps^2/2) Laplacian psi + V(x/eps) psi + U(x) psi

on the periodic domain, one-dimensional.  Used as ground truth at desk
scale; its mesh burden (dx <= eps/32, dt <= eps/20) is enforced, not
negotiated.  The stepping is unitary up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, InvalidInputError, ResolutionError
from .potentials import ExternalPotential, PeriodicPotential
from .wavefield import WaveField


@dataclass(frozen=True)
class ReferenceConfig:
    eps: float
    length: float
    n_x: int
    dt: float
    lattice: PeriodicPotential
    external: ExternalPotential
    t_final: float

    def __post_init__(self):
        if self.lattice.dimension != 1 or self.external.dimension != 1:
            raise InvalidInputError("reference solver is one-dimensional only")
        ratio = self.length / self.eps
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidInputError("L/eps must be an integer")
        dx = self.length / self.n_x
        if dx > self.eps / 32 * (1 + 1e-12):
            raise ResolutionError(
                f"dx = {dx:.3e} exceeds eps/32 = {self.eps / 32:.3e}")
        if abs(self.dt) > self.eps / 20 * (1 + 1e-12):
            raise ResolutionError(
                f"dt = {self.dt:.3e} exceeds eps/20 = {self.eps / 20:.3e}")

    @property
    def dx(self) -> float:
        return self.length / self.n_x


def reference_propagate(psi0: WaveField, cfg: ReferenceConfig,
                        checkpoint_times=None):
    """Strang splitting to cfg.t_final; returns the final WaveField.

    With `checkpoint_times`, returns a dict time -> WaveField instead (the
    final time is always included).  Negative t_final propagates backwards.
    """
    if psi0.dimension != 1:
        raise InvalidInputError("reference solver is one-dimensional only")
    if psi0.n_x != cfg.n_x or abs(psi0.length - cfg.length) > 1e-12 \
            or abs(psi0.eps - cfg.eps) > 1e-15:
        raise GridMismatchError("initial field does not match the reference config")

    eps = cfg.eps
    x = psi0.axis_points()
    vpot = cfg.lattice(x / eps) + cfg.external.value(x[:, None])
    k = 2 * np.pi * np.fft.fftfreq(cfg.n_x, d=cfg.dx)

    sign = 1.0 if cfg.t_final >= 0 else -1.0
    total = abs(cfg.t_final)
    targets = sorted({abs(float(t)) for t in (checkpoint_times or [])} | {total})
    for t in targets:
        if t > total + 1e-12:
            raise InvalidInputError(f"checkpoint {t} beyond t_final")

    psi = psi0.values.copy()
    out = {}
    if any(t < 1e-14 for t in targets):
        out[0.0] = psi0.with_values(psi.copy(), time=0.0)
    t_now = 0.0
    for target in targets:
        if target < 1e-14:
            continue
        seg = target - t_now
        n_steps = max(1, int(round(seg / abs(cfg.dt))))
        dt = sign * seg / n_steps
        half = np.exp(-1j * vpot * dt / (2 * eps))
        kin = np.exp(-1j * eps * k ** 2 * dt / 2)
        for _ in range(n_steps):
            psi = half * psi
            psi = np.fft.ifft(kin * np.fft.fft(psi))
            psi = half * psi
        t_now = target
        out[sign * t_now] = psi0.with_values(psi.copy(), time=sign * t_now)
    if checkpoint_times is None:
        return out[sign * total]
    return out
