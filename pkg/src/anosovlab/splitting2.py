"""Unstable/stable line fields on the 2-torus by projective cocycle iteration.

Directions are unit vectors of shape ``(..., 2)`` with the first nonzero
component positive, so a line has one canonical representative. The slope
chart is available through :func:`slope_of` but nothing else depends on it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import qmc

from .torus import MapSpec, apply_map, jacobian, orbit, wrap

DEFAULT_DEPTH = 60
CERTIFICATE_EXTRA = 10
CERTIFICATE_TOL = 1e-11
SEED_TIE_ANGLE = 1e-3


class ChartError(ValueError):
    """The slope chart is undefined for (near-)vertical directions."""


class NotHyperbolicError(RuntimeError):
    """Finite-time rate estimates do not satisfy 0 < kappa <= lambda < 1."""


def normalize_direction(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    flip = (u[..., 0] < 0) | ((u[..., 0] == 0) & (u[..., 1] < 0))
    return np.where(flip[..., None], -u, u)


def direction_from_slope(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return normalize_direction(np.stack([np.ones_like(m), m], axis=-1))


def direction_from_angle(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return normalize_direction(np.stack([np.cos(theta), np.sin(theta)], axis=-1))


def line_angle(a, b) -> np.ndarray:
    """Unsigned angle in [0, pi/2] between the lines spanned by ``a`` and ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(np.abs(cross), np.abs(dot))


def pushforward(jac, u) -> np.ndarray:
    """Projective action of ``jac`` on the direction ``u``."""
    jac = np.asarray(jac, dtype=float)
    det = np.linalg.det(jac)
    if np.any(np.abs(det) < 1e-300):
        raise np.linalg.LinAlgError("singular Jacobian in pushforward")
    v = np.einsum("...ij,...j->...i", jac, np.asarray(u, dtype=float))
    return normalize_direction(v)


def slope_of(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u[..., 0]) <= 1e-12):
        raise ChartError("slope chart undefined for vertical directions")
    return u[..., 1] / u[..., 0]


def linear_eigendirections(matrix) -> tuple[np.ndarray, np.ndarray]:
    """Unit eigenvectors (unstable, stable) of a hyperbolic 2x2 matrix."""
    a = np.asarray(matrix, dtype=float)
    if a.shape != (2, 2):
        raise ValueError("linear_eigendirections needs a 2x2 matrix")
    eig, vecs = np.linalg.eig(a)
    if np.iscomplexobj(eig):
        raise ValueError("complex eigenvalues: not a hyperbolic 2x2 matrix")
    order = np.argsort(-np.abs(eig))
    return normalize_direction(vecs[:, order[0]]), normalize_direction(vecs[:, order[1]])


def _check_planar(spec: MapSpec) -> None:
    if spec.dim != 2:
        raise ValueError(f"splitting2 works on the 2-torus, got d={spec.dim}")


def default_seed(spec: MapSpec) -> np.ndarray:
    eu, _ = linear_eigendirections(spec.matrix)
    return eu


def _prepare_seed(spec: MapSpec, seed) -> np.ndarray:
    seed = default_seed(spec) if seed is None else normalize_direction(seed)
    _, es = linear_eigendirections(spec.matrix)
    if line_angle(seed, es) < 1e-12:
        c, s = math.cos(SEED_TIE_ANGLE), math.sin(SEED_TIE_ANGLE)
        seed = normalize_direction(np.array([[c, -s], [s, c]]) @ seed)
    return seed


def _push_along(spec: MapSpec, back: np.ndarray, u: np.ndarray, n: int) -> np.ndarray:
    # back[k] = phi^{-k} x; apply d phi(back[n]), ..., d phi(back[1]) in turn
    for k in range(n, 0, -1):
        u = pushforward(jacobian(spec, back[k]), u)
    return u


def unstable_direction(spec: MapSpec, x, n: int = DEFAULT_DEPTH, seed=None) -> np.ndarray:
    """``E_u(x)`` approximated by pushing ``seed`` along ``n`` steps of the backward orbit.

    Points on the backward orbit are produced by the exact inverse map, so each
    Jacobian is taken at a genuine preimage; the forward orbit of ``phi^{-n} x``
    is never recomputed.
    """
    _check_planar(spec)
    if n < 1:
        raise ValueError("iteration depth n must be >= 1")
    x = wrap(x)
    back = orbit(spec, x, n, "backward")
    u = np.broadcast_to(_prepare_seed(spec, seed), x.shape).copy()
    return _push_along(spec, back, u, n)


def stable_direction(spec: MapSpec, x, n: int = DEFAULT_DEPTH, seed=None) -> np.ndarray:
    """``E_s(x)``: the unstable direction of the inverse map."""
    return unstable_direction(spec.inverse(), x, n, seed)


class Splitting(NamedTuple):
    unstable: np.ndarray
    stable: np.ndarray
    tolerance: float
    converged: bool


def certified_direction(spec: MapSpec, x, n: int = DEFAULT_DEPTH, seed=None,
                        extra: int = CERTIFICATE_EXTRA) -> tuple[np.ndarray, float]:
    """Unstable direction at depth ``n`` and its distance to depth ``n + extra``."""
    _check_planar(spec)
    x = wrap(x)
    back = orbit(spec, x, n + extra, "backward")
    u0 = np.broadcast_to(_prepare_seed(spec, seed), x.shape).copy()
    u_n = _push_along(spec, back, u0.copy(), n)
    u_more = _push_along(spec, back, u0, n + extra)
    return u_n, float(np.max(line_angle(u_n, u_more)))


def splitting(spec: MapSpec, x, n: int = DEFAULT_DEPTH, tol: float = CERTIFICATE_TOL) -> Splitting:
    """Both directions at ``x`` with a joint convergence certificate."""
    eu, tu = certified_direction(spec, x, n)
    es, ts = certified_direction(spec.inverse(), x, n)
    achieved = max(tu, ts)
    return Splitting(eu, es, achieved, achieved < tol)


def invariance_defect(spec: MapSpec, x, field_at: Callable) -> np.ndarray:
    """Angle between ``d phi(x) v(x)`` and ``v(phi(x))``."""
    x = wrap(x)
    pushed = pushforward(jacobian(spec, x), field_at(x))
    return line_angle(pushed, field_at(apply_map(spec, x)))


@dataclass
class SlopeField:
    """Line field sampled on the grid ``(i/N, j/N)``; ``values[i, j]`` is a direction."""

    resolution: int
    values: np.ndarray

    def __post_init__(self):
        self.values = normalize_direction(self.values)
        n = self.resolution
        if self.values.shape != (n, n, 2):
            raise ValueError(f"values must have shape ({n}, {n}, 2), got {self.values.shape}")

    @staticmethod
    def grid(resolution: int) -> np.ndarray:
        i, j = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
        return np.stack([i, j], axis=-1) / resolution

    @classmethod
    def from_function(cls, resolution: int, fn: Callable) -> "SlopeField":
        return cls(resolution, fn(cls.grid(resolution)))

    @classmethod
    def constant(cls, resolution: int, u) -> "SlopeField":
        return cls(resolution, np.broadcast_to(np.asarray(u, dtype=float), (resolution, resolution, 2)).copy())

    def lookup(self, pts) -> np.ndarray:
        """Value at the nearest grid node (wrap-aware)."""
        idx = np.mod(np.rint(wrap(pts) * self.resolution).astype(np.int64), self.resolution)
        return self.values[idx[..., 0], idx[..., 1]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "u1", "u2"])
        n = self.resolution
        for i in range(n):
            for j in range(n):
                w.writerow([i, j, repr(float(self.values[i, j, 0])), repr(float(self.values[i, j, 1]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SlopeField":
        rows = list(csv.DictReader(io.StringIO(text)))
        n = int(round(math.sqrt(len(rows))))
        if n * n != len(rows):
            raise ValueError("slope field CSV must have N*N rows")
        vals = np.zeros((n, n, 2))
        for r in rows:
            vals[int(r["i"]), int(r["j"])] = (float(r["u1"]), float(r["u2"]))
        field = cls(n, vals)
        field.values = vals  # keep the stored digits; renormalizing may move the last bit
        return field


def unstable_field(spec: MapSpec, resolution: int = 128, n: int = DEFAULT_DEPTH) -> SlopeField:
    return SlopeField(resolution, unstable_direction(spec, SlopeField.grid(resolution), n))


def stable_field(spec: MapSpec, resolution: int = 128, n: int = DEFAULT_DEPTH) -> SlopeField:
    return SlopeField(resolution, stable_direction(spec, SlopeField.grid(resolution), n))


def transform_at(spec: MapSpec, field: SlopeField, n: int, pts) -> np.ndarray:
    """``(T_n v)(x) = d phi^n(p) v(p)`` with ``p = phi^{-n}(x)``, at arbitrary points.

    ``v(p)`` is read from the nearest grid node. The cocycle is applied one
    factor at a time with renormalization, which is the same projective action
    without forming the exponentially large matrix product.
    """
    _check_planar(spec)
    if n < 1:
        raise ValueError("transform depth n must be >= 1")
    pts = wrap(pts)
    back = orbit(spec, pts, n, "backward")
    return _push_along(spec, back, field.lookup(back[n]), n)


def transform_field(spec: MapSpec, field: SlopeField, n: int) -> SlopeField:
    return SlopeField(field.resolution, transform_at(spec, field, n, SlopeField.grid(field.resolution)))


def field_distance(a: SlopeField, b: SlopeField) -> float:
    if a.resolution != b.resolution:
        raise ValueError(f"resolution mismatch: {a.resolution} vs {b.resolution}")
    return float(np.max(line_angle(a.values, b.values)))


@dataclass(frozen=True)
class HyperbolicityEstimate:
    kappa_hat: float
    lambda_hat: float
    big_c_hat: float
    distortion_l_hat: float
    alpha_max: float
    horizon_n: int

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def bunching_exponent(kappa: float, lam: float) -> float:
    """Largest alpha in (0, 2] with ``lam ** (2 / alpha) <= kappa``."""
    if lam <= kappa * (1.0 + 1e-12):
        return 2.0
    return min(2.0, 2.0 * math.log(lam) / math.log(kappa))


def default_sample_points(count: int = 256) -> np.ndarray:
    return qmc.Sobol(d=2, scramble=False).random(count)


def _one_step_rates(spec: MapSpec, pts: np.ndarray, depth: int) -> np.ndarray:
    # contraction of d phi along E_s at each point; invariance makes the
    # product over an orbit equal to the n-step norm without cancellation
    es = stable_direction(spec, pts, depth)
    v = np.einsum("...ij,...j->...i", jacobian(spec, pts), es)
    return np.linalg.norm(v, axis=-1)


def finite_time_rates(spec: MapSpec, sample_points=None, n: int = 40,
                      depth: int = DEFAULT_DEPTH) -> HyperbolicityEstimate:
    """Worst-case finite-time contraction rates over a sample set.

    For each sample ``x`` the growth ``g_m = |d phi^m(x) e_s(x)|`` and the
    backward analogue along ``e_u`` are accumulated as products of one-step
    factors. ``lambda_hat``/``kappa_hat`` are the max/min of ``g_n ** (1/n)``;
    ``big_c_hat`` is the smallest C with ``kappa^m / C <= g_m <= C lambda^m``
    for all ``m <= n``; ``distortion_l_hat`` is the max/min ratio of one-step
    stable contraction factors seen along the sampled orbits.
    """
    _check_planar(spec)
    if n < 8:
        raise ValueError("finite_time_rates needs a horizon n >= 8")
    pts = default_sample_points() if sample_points is None else wrap(np.atleast_2d(sample_points))

    logs = []
    one_step = []
    for s in (spec, spec.inverse()):
        orb = orbit(s, pts, n - 1)
        r = _one_step_rates(s, orb, depth)  # (n, samples)
        one_step.append(r)
        logs.append(np.cumsum(np.log(r), axis=0))
    log_g = np.concatenate(logs, axis=1)  # (n, 2*samples)
    m = np.arange(1, n + 1)[:, None]

    rates = np.exp(log_g[-1] / n)
    lam, kap = float(np.max(rates)), float(np.min(rates))
    if not (0.0 < kap <= lam < 1.0):
        raise NotHyperbolicError(f"not hyperbolic at this horizon: kappa_hat={kap}, lambda_hat={lam}")
    big_c = float(np.max(np.maximum(log_g - m * math.log(lam), m * math.log(kap) - log_g)))
    r_all = one_step[0]
    return HyperbolicityEstimate(
        kappa_hat=kap,
        lambda_hat=lam,
        big_c_hat=max(1.0, math.exp(big_c)),
        distortion_l_hat=float(np.max(r_all) / np.min(r_all)),
        alpha_max=bunching_exponent(kap, lam),
        horizon_n=n,
    )


def straightening_frame(eu, es) -> np.ndarray:
    """Columns ``(e_u, e_s)``; coordinates in this frame straighten the splitting."""
    return np.stack([np.asarray(eu, float), np.asarray(es, float)], axis=-1)


def gamma_growth(spec: MapSpec, x, t: float, n: int, half_length: float | None = None,
                 depth: int = DEFAULT_DEPTH) -> tuple[float, float]:
    """Lower-left entry of the straightened cocycle at the stable-leaf point ``y``.

    ``y`` sits at arclength ``t`` on ``W_s(x)``. The cocycle ``d phi^n(y)`` is
    expressed with input frame ``(e_u(x), e_s(y))`` and output frame
    ``(e_u(phi^n x), e_s(phi^n y))``: the stable columns follow the leaf, the
    unstable columns are the base orbit's. The upper-right entry then vanishes
    by invariance of ``E_s`` and the lower-left entry is ``gamma_n(y)``.
    Returns ``(gamma_n, gamma_n / |t|)``; the ratio is ``nan`` at ``t = 0``.
    """
    from .manifolds import ManifoldRequest, grow_manifold, point_at_arclength

    _check_planar(spec)
    x = wrap(x)
    if t == 0.0:
        y = x
    else:
        hl = half_length if half_length is not None else min(0.5, 1.25 * abs(t))
        step = min(abs(t) / 4, hl / 8)
        poly = grow_manifold(spec, ManifoldRequest(x, "stable", hl, step))
        y = point_at_arclength(poly, t)
    xs = orbit(spec, x, n)
    ys = orbit(spec, y, n)
    eu_x = unstable_direction(spec, xs[[0, n]], depth)
    es_y = stable_direction(spec, ys[[0, n]], depth)
    f_in = straightening_frame(eu_x[0], es_y[0])
    f_out = straightening_frame(eu_x[1], es_y[1])
    m = np.eye(2)
    for k in range(n):
        m = jacobian(spec, ys[k]) @ m
    straight = np.linalg.solve(f_out, m @ f_in)
    gamma = float(straight[1, 0])
    return gamma, (abs(gamma) / abs(t) if t != 0.0 else float("nan"))
