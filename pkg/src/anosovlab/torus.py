"""Torus automorphisms perturbed by shears.

A map is ``phi = A o h_k o ... o h_1`` where ``A`` is a hyperbolic integer
matrix with ``|det A| = 1`` and every ``h_i`` adds ``eps * s(x[source])`` to
``x[target]`` for a 1-periodic trigonometric polynomial ``s`` with ``s(0) = 0``.
Each factor is volume preserving and has a closed-form inverse, so the whole
family is exactly invertible.

Points are numpy arrays of shape ``(..., d)``; every function here is
vectorized over the leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
DEFAULT_ENTRY_CAP = 1e12


class CocycleOverflowError(ArithmeticError):
    """A cocycle entry exceeded the configured magnitude cap."""

    def __init__(self, step: int, magnitude: float, cap: float):
        super().__init__(
            f"cocycle entry magnitude {magnitude:.3e} exceeds cap {cap:.1e} at step {step}"
        )
        self.step = step
        self.magnitude = magnitude
        self.cap = cap


def wrap(x) -> np.ndarray:
    """Reduce coordinates into the fundamental domain [0, 1)."""
    r = np.mod(np.asarray(x, dtype=float), 1.0)
    # mod of a tiny negative number rounds up to exactly 1.0
    return np.where(r >= 1.0, 0.0, r)


def torus_displacement(a, b) -> np.ndarray:
    """Shortest lift of ``a - b``, componentwise in [-1/2, 1/2]."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return d - np.round(d)


def torus_distance(a, b) -> np.ndarray:
    """Wrap-aware Euclidean distance, bounded by sqrt(d)/2."""
    return np.linalg.norm(torus_displacement(a, b), axis=-1)


def _integer_matrix(entries) -> np.ndarray:
    a = np.asarray(entries)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 2:
        raise ValueError(f"linear part must be a square d x d matrix with d >= 2, got {a.shape}")
    if not np.all(np.equal(a, np.round(a))):
        raise ValueError("linear part must have integer entries")
    return np.round(a).astype(np.int64)


@dataclass(frozen=True)
class ShearTerm:
    """Shear adding ``amplitude * s(x[source])`` to ``x[target]``.

    ``profile`` holds ``(freq, sin_coeff, cos_coeff)`` triples and
    ``s(u) = sum(a sin(2 pi f u) + b cos(2 pi f u))``. The cosine coefficients
    must sum to zero so that ``s(0) = 0``.
    """

    source: int
    target: int
    amplitude: float
    profile: tuple[tuple[int, float, float], ...] = field(default=((1, 1.0, 0.0),))

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("shear source_axis and target_axis must differ")
        if self.source < 0 or self.target < 0:
            raise ValueError("shear axes must be non-negative")
        prof = tuple((int(f), float(a), float(b)) for f, a, b in self.profile)
        if not prof:
            raise ValueError("shear profile must have at least one term")
        if any(f <= 0 for f, _, _ in prof):
            raise ValueError("shear frequencies must be positive integers")
        if abs(sum(b for _, _, b in prof)) > 1e-15:
            raise ValueError("shear profile must vanish at 0 (cosine coefficients must sum to 0)")
        object.__setattr__(self, "profile", prof)
        object.__setattr__(self, "amplitude", float(self.amplitude))

    def s(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for f, a, b in self.profile:
            w = TWO_PI * f * u
            out = out + a * np.sin(w) + b * np.cos(w)
        return out

    def ds(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for f, a, b in self.profile:
            w = TWO_PI * f * u
            out = out + TWO_PI * f * (a * np.cos(w) - b * np.sin(w))
        return out

    def inverse(self) -> "ShearTerm":
        return ShearTerm(self.source, self.target, -self.amplitude, self.profile)

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "amplitude": self.amplitude,
            "profile": [{"freq": f, "sin": a, "cos": b} for f, a, b in self.profile],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ShearTerm":
        return cls(
            source=int(doc["source"]),
            target=int(doc["target"]),
            amplitude=float(doc["amplitude"]),
            profile=tuple(
                (int(p["freq"]), float(p.get("sin", 0.0)), float(p.get("cos", 0.0)))
                for p in doc["profile"]
            ),
        )


@dataclass(frozen=True)
class MapSpec:
    """Hyperbolic torus automorphism composed with shears.

    With ``linear_first=False`` (the default) the map is
    ``A o h_k o ... o h_1``; with ``linear_first=True`` it is
    ``h_k o ... o h_1 o A``. The second form only arises as the inverse of
    the first, and vice versa.
    """

    linear: tuple[tuple[int, ...], ...]
    shears: tuple[ShearTerm, ...] = ()
    linear_first: bool = False

    def __post_init__(self):
        a = _integer_matrix(self.linear)
        object.__setattr__(self, "linear", tuple(tuple(int(v) for v in row) for row in a))
        object.__setattr__(self, "shears", tuple(self.shears))
        d = a.shape[0]
        for sh in self.shears:
            if sh.source >= d or sh.target >= d:
                raise ValueError(f"shear axes ({sh.source}, {sh.target}) out of range for d={d}")
        det = int(round(np.linalg.det(a.astype(float))))
        if abs(det) != 1:
            raise ValueError(f"linear part must have |det| = 1, got det = {det}")
        eig, vecs = np.linalg.eig(a.astype(float))
        gap = np.min(np.abs(np.abs(eig) - 1.0))
        if gap < 1e-9:
            raise ValueError("linear part has an eigenvalue on the unit circle (not hyperbolic)")
        if np.linalg.cond(vecs) > 1e12:
            raise ValueError("linear part is not diagonalizable (defective Jordan structure)")

    @property
    def dim(self) -> int:
        return len(self.linear)

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.array(self.linear, dtype=float)

    @cached_property
    def inverse_matrix(self) -> np.ndarray:
        a = np.array(self.linear, dtype=np.int64)
        inv = np.round(np.linalg.inv(a.astype(float))).astype(np.int64)
        if not np.array_equal(a @ inv, np.eye(len(a), dtype=np.int64)):
            raise ArithmeticError("integer inverse of the linear part failed")
        return inv

    def inverse(self) -> "MapSpec":
        """Closed-form inverse: inverted linear part, shears undone in reverse order."""
        return self._inverse

    @cached_property
    def _inverse(self) -> "MapSpec":
        inv = MapSpec(
            linear=tuple(tuple(int(v) for v in row) for row in self.inverse_matrix),
            shears=tuple(sh.inverse() for sh in reversed(self.shears)),
            linear_first=not self.linear_first,
        )
        inv.__dict__["_inverse"] = self
        return inv

    @property
    def is_linear(self) -> bool:
        return all(sh.amplitude == 0.0 for sh in self.shears)

    def steps(self):
        """Factors of the map in application order."""
        if self.linear_first:
            return [("linear", None)] + [("shear", sh) for sh in self.shears]
        return [("shear", sh) for sh in self.shears] + [("linear", None)]

    def to_json(self) -> dict:
        doc = {
            "linear": [list(row) for row in self.linear],
            "shears": [sh.to_json() for sh in self.shears],
        }
        if self.linear_first:
            doc["linear_first"] = True
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "MapSpec":
        if not isinstance(doc, dict) or "linear" not in doc:
            raise ValueError("map spec must be an object with a 'linear' field")
        return cls(
            linear=tuple(tuple(row) for row in doc["linear"]),
            shears=tuple(ShearTerm.from_json(s) for s in doc.get("shears", [])),
            linear_first=bool(doc.get("linear_first", False)),
        )


def cat_map() -> MapSpec:
    return MapSpec(linear=((2, 1), (1, 1)))


def perturbed_cat_map(eps: float) -> MapSpec:
    """Cat map composed with two shears of amplitude ``eps``.

    ``(x, y) -> (x, y + eps sin 2 pi x)`` followed by
    ``(x, y) -> (x + eps (sin 2 pi y + 0.5 sin 4 pi y) / 1.5, y)``.
    """
    return MapSpec(
        linear=((2, 1), (1, 1)),
        shears=(
            ShearTerm(0, 1, eps, ((1, 1.0, 0.0),)),
            ShearTerm(1, 0, eps, ((1, 1.0 / 1.5, 0.0), (2, 0.5 / 1.5, 0.0))),
        ),
    )


def lift_map(spec: MapSpec, x) -> np.ndarray:
    """The map on the universal cover; no reduction mod 1."""
    z = np.array(x, dtype=float, copy=True)
    for kind, sh in spec.steps():
        if kind == "linear":
            z = z @ spec.matrix.T
        else:
            z[..., sh.target] = z[..., sh.target] + sh.amplitude * sh.s(z[..., sh.source])
    return z


def apply_map(spec: MapSpec, x) -> np.ndarray:
    return wrap(lift_map(spec, x))


def apply_inverse(spec: MapSpec, x) -> np.ndarray:
    return apply_map(spec.inverse(), x)


def jacobian(spec: MapSpec, x) -> np.ndarray:
    """Analytic differential, shape ``(..., d, d)``."""
    z = np.array(x, dtype=float, copy=True)
    d = spec.dim
    jac = np.broadcast_to(np.eye(d), z.shape[:-1] + (d, d)).copy()
    for kind, sh in spec.steps():
        if kind == "linear":
            jac = spec.matrix @ jac
            z = z @ spec.matrix.T
        else:
            c = sh.amplitude * sh.ds(z[..., sh.source])
            # row target += c * row source
            jac[..., sh.target, :] = jac[..., sh.target, :] + c[..., None] * jac[..., sh.source, :]
            z[..., sh.target] = z[..., sh.target] + sh.amplitude * sh.s(z[..., sh.source])
    return jac


def orbit(spec: MapSpec, x, n: int, direction: str = "forward") -> np.ndarray:
    """``[x, phi^{+-1} x, ..., phi^{+-n} x]`` stacked on a new leading axis."""
    if n < 0:
        raise ValueError("orbit length must be non-negative")
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    step_spec = spec if direction == "forward" else spec.inverse()
    x = wrap(x)
    out = np.empty((n + 1,) + x.shape)
    out[0] = x
    for k in range(n):
        out[k + 1] = apply_map(step_spec, out[k])
    return out


def cocycle(spec: MapSpec, x, n: int, cap: float = DEFAULT_ENTRY_CAP) -> np.ndarray:
    """``d phi^n (x)`` as the left-multiplied product of one-step Jacobians.

    Negative ``n`` walks the backward orbit with inverse-map Jacobians.
    Raises :class:`CocycleOverflowError` as soon as an entry exceeds ``cap``.
    """
    step_spec = spec if n >= 0 else spec.inverse()
    pts = orbit(step_spec, x, abs(n))
    d = spec.dim
    prod = np.broadcast_to(np.eye(d), pts.shape[1:-1] + (d, d)).copy()
    for k in range(abs(n)):
        prod = jacobian(step_spec, pts[k]) @ prod
        m = float(np.max(np.abs(prod)))
        if not m <= cap:
            raise CocycleOverflowError(k + 1, m, cap)
    return prod


def volume_defect(spec: MapSpec, x, jacobian_fn=None) -> np.ndarray:
    """``||det d phi(x)| - 1|``; ``jacobian_fn`` replaces the analytic Jacobian in tests."""
    jac = (jacobian_fn or jacobian)(spec, x)
    return np.abs(np.abs(np.linalg.det(jac)) - 1.0)


def random_points(rng: np.random.Generator, count: int, d: int = 2) -> np.ndarray:
    return rng.random((count, d))


def as_points(pts: Sequence) -> np.ndarray:
    return wrap(np.atleast_2d(np.asarray(pts, dtype=float)))
