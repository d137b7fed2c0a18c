"""Lattice and external potentials.

The lattice potential V is a real periodic function of the fast variable,
stored through its reciprocal Fourier coefficients on the integer lattice.
The external potential U is an analytic family carrying closed-form
derivatives up to fourth order, which the amplitude transport equations need.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

_HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class PeriodicPotential:
    """Real lattice potential V(x) = sum_k V_k exp(2*pi*i k.x), period 1 per axis.

    coefficients maps integer reciprocal vectors (tuples of length d) to
    complex amplitudes.  Hermitian symmetry V_{-k} = conj(V_k) is required so
    that V is real-valued.
    """

    dimension: int
    coefficients: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise InvalidInputError(f"dimension must be 1 or 2, got {self.dimension}")
        clean = {}
        for k, v in self.coefficients.items():
            k = tuple(int(c) for c in (k if isinstance(k, (tuple, list, np.ndarray)) else (k,)))
            if len(k) != self.dimension:
                raise InvalidInputError(f"coefficient key {k} has wrong dimension")
            clean[k] = complex(v)
        object.__setattr__(self, "coefficients", clean)
        self.validate()

    def validate(self):
        """Check Hermitian symmetry by direct scan; raises InvalidInputError."""
        for k, v in self.coefficients.items():
            mk = tuple(-c for c in k)
            w = self.coefficients.get(mk, 0.0)
            if abs(np.conj(v) - w) > _HERMITIAN_TOL * max(1.0, abs(v)):
                raise InvalidInputError(
                    f"potential is not Hermitian: V[{mk}] != conj(V[{k}])")

    @property
    def cutoff(self) -> int:
        """Smallest K_V with all coefficients inside |k|_inf <= K_V."""
        if not self.coefficients:
            return 0
        return max(max(abs(c) for c in k) for k in self.coefficients)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate V at points x (shape (..., d) or (...,) when d == 1)."""
        x = np.asarray(x, dtype=float)
        if self.dimension == 1 and (x.ndim <= 1 or x.shape[-1] != 1):
            x = x[..., None]
        out = np.zeros(x.shape[:-1], dtype=complex)
        for k, v in self.coefficients.items():
            out += v * np.exp(2j * np.pi * (x @ np.asarray(k, dtype=float)))
        return out.real

    def to_text(self) -> str:
        lines = [f"d {self.dimension}", f"K_V {self.cutoff}"]
        for k in sorted(self.coefficients):
            v = self.coefficients[k]
            ks = " ".join(str(c) for c in k)
            lines.append(f"k {ks} {v.real!r} {v.imag!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PeriodicPotential":
        """Parse the structured-text potential format (d, K_V, k triplets)."""
        d = None
        declared_kv = None
        coeffs = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "d":
                d = int(parts[1])
            elif parts[0] == "K_V":
                declared_kv = int(parts[1])
            elif parts[0] == "k":
                if d is None:
                    raise InvalidInputError("potential file must declare d before coefficients")
                if len(parts) != 1 + d + 2:
                    raise InvalidInputError(f"bad coefficient line: {raw!r}")
                k = tuple(int(c) for c in parts[1:1 + d])
                re_v, im_v = float(parts[1 + d]), float(parts[2 + d])
                coeffs[k] = complex(re_v, im_v)
            else:
                raise InvalidInputError(f"unrecognized potential line: {raw!r}")
        if d is None:
            raise InvalidInputError("potential file missing dimension")
        pot = cls(dimension=d, coefficients=coeffs)
        if declared_kv is not None and pot.cutoff > declared_kv:
            raise InvalidInputError(
                f"declared K_V={declared_kv} smaller than actual support {pot.cutoff}")
        return pot

    @classmethod
    def zero(cls, dimension: int = 1) -> "PeriodicPotential":
        return cls(dimension=dimension, coefficients={})

    @classmethod
    def cosine(cls, dimension: int = 1, amplitude: float = 1.0) -> "PeriodicPotential":
        """V(x) = amplitude * sum_axes cos(2 pi x_a)."""
        coeffs = {}
        for a in range(dimension):
            for s in (+1, -1):
                k = tuple(s if i == a else 0 for i in range(dimension))
                coeffs[k] = coeffs.get(k, 0.0) + amplitude / 2.0
        return cls(dimension=dimension, coefficients=coeffs)


class ExternalPotential:
    """Smooth external potential U with derivatives up to fourth order.

    Evaluators are vectorized over point batches of shape (n, d).  grad has
    shape (n, d), hess (n, d, d), third (n, d, d, d), fourth (n, d, d, d, d).
    `subquadratic` records whether sup|d^a U| is finite for all |a| >= 2.
    """

    def __init__(self, dimension, name, params, value, grad, hess, third, fourth,
                 subquadratic, sup_hess=None):
        self.dimension = dimension
        self.name = name
        self.params = dict(params)
        self._value = value
        self._grad = grad
        self._hess = hess
        self._third = third
        self._fourth = fourth
        self.subquadratic = bool(subquadratic)
        self.sup_hess = sup_hess  # sup |hess| when declared, else None

    def _pts(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and self.dimension == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != self.dimension:
            raise InvalidInputError(f"points must have shape (n, {self.dimension})")
        return x

    def value(self, x):
        return self._value(self._pts(x))

    def grad(self, x):
        return self._grad(self._pts(x))

    def hess(self, x):
        return self._hess(self._pts(x))

    def third(self, x):
        return self._third(self._pts(x))

    def fourth(self, x):
        return self._fourth(self._pts(x))

    def spec_string(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})"

    def __repr__(self):
        return f"ExternalPotential({self.spec_string()}, d={self.dimension})"


def _zeros_factory(d, order):
    shape_tail = (d,) * order

    def f(x):
        return np.zeros((x.shape[0],) + shape_tail)

    return f


def zero_potential(dimension: int = 1) -> ExternalPotential:
    return ExternalPotential(
        dimension, "zero", {},
        value=lambda x: np.zeros(x.shape[0]),
        grad=_zeros_factory(dimension, 1),
        hess=_zeros_factory(dimension, 2),
        third=_zeros_factory(dimension, 3),
        fourth=_zeros_factory(dimension, 4),
        subquadratic=True, sup_hess=0.0)


def harmonic_potential(dimension: int = 1, k: float = 1.0, center=0.0) -> ExternalPotential:
    """U(q) = (k/2) |q - center|^2."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (dimension,)).copy()
    eye = np.eye(dimension)

    return ExternalPotential(
        dimension, "harmonic", {"k": float(k), "center": center},
        value=lambda x: 0.5 * k * np.sum((x - c) ** 2, axis=1),
        grad=lambda x: k * (x - c),
        hess=lambda x: np.broadcast_to(k * eye, (x.shape[0], dimension, dimension)).copy(),
        third=_zeros_factory(dimension, 3),
        fourth=_zeros_factory(dimension, 4),
        subquadratic=True, sup_hess=abs(k))


def linear_potential(dimension: int = 1, slope=1.0) -> ExternalPotential:
    """U(q) = slope . q — constant force (Bloch-oscillation driver)."""
    s = np.broadcast_to(np.asarray(slope, dtype=float), (dimension,)).copy()

    return ExternalPotential(
        dimension, "linear", {"slope": slope},
        value=lambda x: x @ s,
        grad=lambda x: np.broadcast_to(s, (x.shape[0], dimension)).copy(),
        hess=_zeros_factory(dimension, 2),
        third=_zeros_factory(dimension, 3),
        fourth=_zeros_factory(dimension, 4),
        subquadratic=True, sup_hess=0.0)


def cubic_potential(a: float = 1.0, center: float = 0.0) -> ExternalPotential:
    """U(q) = a (q - center)^3 / 6, one-dimensional.

    Third derivative is the constant a; the Hessian is unbounded, so the
    subquadratic flag is off (short-time use only).
    """
    return ExternalPotential(
        1, "cubic", {"a": float(a), "center": float(center)},
        value=lambda x: a * (x[:, 0] - center) ** 3 / 6.0,
        grad=lambda x: (a * (x[:, 0] - center) ** 2 / 2.0)[:, None],
        hess=lambda x: (a * (x[:, 0] - center))[:, None, None],
        third=lambda x: np.full((x.shape[0], 1, 1, 1), a),
        fourth=_zeros_factory(1, 4),
        subquadratic=False)


def quartic_potential(a: float = 1.0, center: float = 0.0) -> ExternalPotential:
    """U(q) = a (q - center)^4 / 24, one-dimensional, not subquadratic."""
    return ExternalPotential(
        1, "quartic", {"a": float(a), "center": float(center)},
        value=lambda x: a * (x[:, 0] - center) ** 4 / 24.0,
        grad=lambda x: (a * (x[:, 0] - center) ** 3 / 6.0)[:, None],
        hess=lambda x: (a * (x[:, 0] - center) ** 2 / 2.0)[:, None, None],
        third=lambda x: (a * (x[:, 0] - center))[:, None, None, None],
        fourth=lambda x: np.full((x.shape[0], 1, 1, 1, 1), a),
        subquadratic=False)


def cosine_potential(dimension: int = 1, amplitude: float = 1.0, wavevector=1.0,
                     phase: float = 0.0) -> ExternalPotential:
    """U(q) = amplitude * cos(wavevector . q + phase): bounded anharmonic test case."""
    w = np.broadcast_to(np.asarray(wavevector, dtype=float), (dimension,)).copy()

    def arg(x):
        return x @ w + phase

    def third(x):
        t = amplitude * np.sin(arg(x))
        return t[:, None, None, None] * np.einsum("i,j,k->ijk", w, w, w)

    def fourth(x):
        t = amplitude * np.cos(arg(x))
        return t[:, None, None, None, None] * np.einsum("i,j,k,l->ijkl", w, w, w, w)

    return ExternalPotential(
        dimension, "cosine", {"amplitude": float(amplitude), "wavevector": wavevector,
                              "phase": float(phase)},
        value=lambda x: amplitude * np.cos(arg(x)),
        grad=lambda x: -amplitude * np.sin(arg(x))[:, None] * w,
        hess=lambda x: -amplitude * np.cos(arg(x))[:, None, None] * np.outer(w, w),
        third=third,
        fourth=fourth,
        subquadratic=True,
        sup_hess=abs(amplitude) * float(np.sum(w * w)))


_FAMILIES = {
    "zero": zero_potential,
    "harmonic": harmonic_potential,
    "linear": linear_potential,
    "cubic": lambda dimension=1, **kw: cubic_potential(**kw),
    "quartic": lambda dimension=1, **kw: quartic_potential(**kw),
    "cosine": cosine_potential,
}

_SPEC_RE = re.compile(r"^\s*([a-zA-Z_]+)\s*(?:\((.*)\))?\s*$")


def parse_external(spec: str, dimension: int = 1) -> ExternalPotential:
    """Build an ExternalPotential from a spec string like 'harmonic(k=1,center=1.0)'."""
    m = _SPEC_RE.match(spec)
    if not m:
        raise InvalidInputError(f"cannot parse external potential spec {spec!r}")
    name, args = m.group(1), m.group(2)
    if name not in _FAMILIES:
        raise InvalidInputError(
            f"unknown external potential family {name!r}; known: {sorted(_FAMILIES)}")
    kwargs = {}
    if args:
        for item in args.split(","):
            if not item.strip():
                continue
            if "=" not in item:
                raise InvalidInputError(f"bad parameter {item!r} in {spec!r}")
            key, val = item.split("=", 1)
            kwargs[key.strip()] = float(val)
    try:
        pot = _FAMILIES[name](dimension=dimension, **kwargs)
    except TypeError as exc:
        raise InvalidInputError(f"bad parameters for {name!r}: {exc}") from exc
    if (name in ("cubic", "quartic")) and dimension != 1:
        raise InvalidInputError(f"{name} potential is one-dimensional only")
    return pot
