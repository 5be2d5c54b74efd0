"""Regularity diagnostics for the unstable line field along stable leaves.

Everything is measured in the straightened frame at the base point: the
oblique basis ``(e_u(x), e_s(x))``. Deviations between directions are line
angles; the signed "straightened slope" at a leaf point ``y`` is the slope of
``E_u(y)`` written in that basis, so it vanishes at ``y = x``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import splitting2 as sp2
from .manifolds import ManifoldRequest, grow_manifold, points_at_arclength
from .torus import MapSpec, wrap

NOISE_FLOOR = 1e-12
MIN_SAMPLES = 6
AFFINE_FLOOR = 1e-12
LADDER_RATIO = 2.0 ** 0.5


class DegenerateFitError(ValueError):
    def __init__(self, admitted: int):
        super().__init__(
            "degenerate: distribution indistinguishable from constant at this precision "
            f"({admitted} samples above the noise floor, need {MIN_SAMPLES})")
        self.admitted = admitted


@dataclass(frozen=True)
class HolderSample:
    t: float
    deviation: float

    def __post_init__(self):
        if not self.deviation >= 0:
            raise ValueError("deviation must be non-negative")


@dataclass
class HolderReport:
    exponent: float
    constant: float
    fit_range: tuple[float, float]
    r_squared: float
    n_samples: int

    def to_json(self) -> dict:
        d = asdict(self)
        d["fit_range"] = list(self.fit_range)
        return d


@dataclass(frozen=True)
class ConeParams:
    delta: float
    eps0: float
    eps1: float
    constant_k: float
    alpha: float
    eps: float

    def __post_init__(self):
        if not 0 < self.eps0 < self.eps1:
            raise ValueError("need 0 < eps0 < eps1")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0 < self.alpha <= 2:
            raise ValueError("alpha must lie in (0, 2]")
        if not 0 < self.eps < self.alpha:
            raise ValueError("eps must lie in (0, alpha)")

    @property
    def exponent(self) -> float:
        return self.alpha - self.eps


@dataclass
class DiffReport:
    scales: list[tuple[float, float]]
    quotients: list[float]
    fitted_rate: float | None
    status: str = "ok"

    def to_json(self) -> dict:
        return {
            "scales": [list(s) for s in self.scales],
            "quotients": list(self.quotients),
            "fitted_rate": self.fitted_rate,
            "status": self.status,
        }


def geometric_ladder(t_max: float = 0.1, decades: float = 3.0, ratio: float = LADDER_RATIO) -> np.ndarray:
    """``t_max * ratio**-k`` for k = 0 .. covering ``decades`` decades, decreasing."""
    count = int(round(decades * math.log(10) / math.log(ratio)))
    return t_max * ratio ** -np.arange(count + 1)


def samples_to_csv(samples: Sequence[HolderSample]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "deviation"])
    for s in samples:
        w.writerow([repr(float(s.t)), repr(float(s.deviation))])
    return buf.getvalue()


def stable_leaf(spec: MapSpec, x, reach: float, step: float | None = None, depth: int = 40):
    reach = float(reach)
    step = step if step is not None else min(1e-3, reach / 20)
    hl = min(0.5, reach * 1.02 + 2 * step)
    return grow_manifold(spec, ManifoldRequest(x, "stable", hl, step, depth))


def stable_transversal_samples(spec: MapSpec, x, scales, depth: int = sp2.DEFAULT_DEPTH,
                               leaf=None) -> list[HolderSample]:
    """Deviation of ``E_u`` from ``E_u(x)`` at ``t = +-scale`` along ``W_s(x)``."""
    x = wrap(np.asarray(x, dtype=float))
    scales = np.abs(np.asarray(scales, dtype=float))
    ts = np.concatenate([scales, -scales])
    if leaf is None:
        positive = scales[scales > 0]
        reach = float(np.max(positive)) if len(positive) else 1e-2
        step = min(1e-3, float(np.min(positive))) if len(positive) else None
        leaf = stable_leaf(spec, x, reach, step)
    ys = points_at_arclength(leaf, ts)
    eu = sp2.unstable_direction(spec, np.vstack([x[None], ys]), depth)
    dev = sp2.line_angle(eu[1:], eu[0])
    return [HolderSample(float(t), float(d)) for t, d in zip(ts, dev)]


def _ols(lx: np.ndarray, ly: np.ndarray) -> tuple[float, float, float, np.ndarray]:
    design = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - (slope * lx + icpt)
    sst = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / sst if sst > 0 else 1.0
    return float(slope), float(icpt), r2, resid


def fit_power_law(t, values, floor: float = NOISE_FLOOR) -> HolderReport:
    """Log-log least squares of ``values ~ K |t|**beta``.

    The fit window is the widest contiguous run (in log |t|) of admitted
    samples whose residuals all stay under 10% of that run's log-value range;
    when no run qualifies all admitted samples are used.
    """
    t = np.abs(np.asarray(t, dtype=float))
    v = np.asarray(values, dtype=float)
    keep = (v > floor) & (t > 0)
    if int(np.count_nonzero(keep)) < MIN_SAMPLES:
        raise DegenerateFitError(int(np.count_nonzero(keep)))
    order = np.argsort(t[keep], kind="stable")
    lx = np.log(t[keep][order])
    ly = np.log(v[keep][order])
    m = len(lx)

    best = None
    for i in range(m):
        for j in range(i + MIN_SAMPLES, m + 1):
            span = lx[j - 1] - lx[i]
            if best is not None and span <= best[0] + 1e-12:
                continue
            _, _, _, resid = _ols(lx[i:j], ly[i:j])
            rng = ly[i:j].max() - ly[i:j].min()
            if np.max(np.abs(resid)) <= 0.1 * rng:
                best = (span, i, j)
    i, j = (best[1], best[2]) if best is not None else (0, m)
    slope, icpt, r2, _ = _ols(lx[i:j], ly[i:j])
    return HolderReport(
        exponent=slope,
        constant=math.exp(icpt),
        fit_range=(float(math.exp(lx[i])), float(math.exp(lx[j - 1]))),
        r_squared=r2,
        n_samples=j - i,
    )


def fit_holder(samples: Sequence[HolderSample], floor: float = NOISE_FLOOR) -> HolderReport:
    return fit_power_law([s.t for s in samples], [s.deviation for s in samples], floor)


def second_difference(f_plus: float, f_base: float, f_minus: float, h1: float, h2: float) -> float:
    """``|h2 f(x+h1) + h1 f(x-h2) - (h1+h2) f(x)| / (h1 h2)``."""
    if h1 <= 0 or h2 <= 0:
        raise ValueError("h1 and h2 must be positive")
    return abs(h2 * f_plus + h1 * f_minus - (h1 + h2) * f_base) / (h1 * h2)


def straightened_slope(eu_base, es_base, directions) -> np.ndarray:
    """Slope of ``directions`` in the oblique frame ``(e_u, e_s)`` at the base."""
    frame = sp2.straightening_frame(eu_base, es_base)
    coef = np.linalg.solve(frame, np.asarray(directions, dtype=float).T).T
    return coef[..., 1] / coef[..., 0]


def slope_function(spec: MapSpec, x, reach: float, depth: int = sp2.DEFAULT_DEPTH,
                   step: float | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """``t -> theta(t)``, the straightened slope of ``E_u`` at arclength ``t`` on ``W_s(x)``."""
    x = wrap(np.asarray(x, dtype=float))
    leaf = stable_leaf(spec, x, reach, step)
    eu0 = sp2.unstable_direction(spec, x, depth)
    es0 = sp2.stable_direction(spec, x, depth)

    def theta(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        ys = points_at_arclength(leaf, ts)
        return straightened_slope(eu0, es0, sp2.unstable_direction(spec, ys, depth))

    return theta


def default_diff_ladder(h_max: float = 0.05, decades: float = 2.0, skew: float = 0.6) -> list[tuple[float, float]]:
    return [(float(h), float(skew * h)) for h in geometric_ladder(h_max, decades)]


def differentiability_from_slope(theta: Callable, ladder) -> DiffReport:
    ladder = [(float(a), float(b)) for a, b in ladder]
    h1 = np.array([a for a, _ in ladder])
    h2 = np.array([b for _, b in ladder])
    vals = theta(np.concatenate([[0.0], h1, -h2]))
    f0, fp, fm = vals[0], vals[1:1 + len(ladder)], vals[1 + len(ladder):]
    q = [second_difference(a, f0, c, x, y) for a, c, x, y in zip(fp, fm, h1, h2)]
    if max(q) < AFFINE_FLOOR:
        return DiffReport(ladder, q, None, "affine at this precision")
    keep = np.array(q) > AFFINE_FLOOR
    if np.count_nonzero(keep) < 2:
        return DiffReport(ladder, q, None, "affine at this precision")
    rate, *_ = _ols(np.log((h1 + h2)[keep]), np.log(np.array(q)[keep]))
    return DiffReport(ladder, q, rate)


def differentiability_profile(spec: MapSpec, x, ladder=None, depth: int = sp2.DEFAULT_DEPTH) -> DiffReport:
    """Second-difference quotients of the straightened slope along ``W_s(x)``."""
    ladder = default_diff_ladder() if ladder is None else ladder
    reach = max(max(a, b) for a, b in ladder)
    smallest = min(min(a, b) for a, b in ladder)
    theta = slope_function(spec, x, reach, depth, step=min(1e-3, smallest / 2))
    return differentiability_from_slope(theta, ladder)


def central_derivative(theta: Callable, ts, h: float) -> np.ndarray:
    ts = np.asarray(ts, dtype=float)
    return (theta(ts + h) - theta(ts - h)) / (2 * h)


def derivative_holder_from_slope(theta: Callable, scales, fd_step: float,
                                 floor: float = NOISE_FLOOR) -> HolderReport:
    scales = np.abs(np.asarray(scales, dtype=float))
    if np.any(scales < 10 * fd_step):
        raise ValueError("scales must be at least 10 * fd_step")
    ts = np.concatenate([[0.0], scales, -scales])
    d = central_derivative(theta, ts, fd_step)
    return fit_power_law(ts[1:], np.abs(d[1:] - d[0]), floor)


def derivative_holder_profile(spec: MapSpec, x, scales=None, fd_step: float = 1e-4,
                              depth: int = sp2.DEFAULT_DEPTH) -> HolderReport:
    scales = geometric_ladder(0.05, 1.5) if scales is None else np.asarray(scales, dtype=float)
    theta = slope_function(spec, x, float(np.max(np.abs(scales))) + fd_step, depth, step=fd_step)
    return derivative_holder_from_slope(theta, scales, fd_step)


def cone_membership(samples: Sequence[HolderSample], params: ConeParams) -> bool:
    for s in samples:
        a = abs(s.t)
        if params.eps0 <= a <= params.eps1 and s.deviation > params.constant_k * a ** params.exponent:
            return False
    return True


def admissible_constant(samples: Sequence[HolderSample], params: ConeParams) -> float:
    """Smallest K for which ``cone_membership`` holds on the admitted range."""
    k = 0.0
    for s in samples:
        a = abs(s.t)
        if params.eps0 <= a <= params.eps1:
            k = max(k, s.deviation / a ** params.exponent)
    return k


@dataclass
class ConeReport:
    trials: int
    rounds: int
    big_n: int
    measured_k: float
    contraction: float
    passes: int
    failures: int
    per_round_failures: list[int]
    eps0_by_round: list[float]
    trial_k: list[float] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failures == 0

    def to_json(self) -> dict:
        return asdict(self)


# relative slack on the round-1 constant, absorbing last-bit differences between
# evaluations of the same converged field at different depths
K_ROUNDING_GUARD = 1e-9


def random_field_near(eu_field: sp2.SlopeField, delta: float, rng: np.random.Generator) -> sp2.SlopeField:
    """Rotate every node of ``eu_field`` by an independent uniform angle in [-delta, delta]."""
    ang = rng.uniform(-delta, delta, size=eu_field.values.shape[:2])
    c, s = np.cos(ang), np.sin(ang)
    u = eu_field.values
    rot = np.stack([c * u[..., 0] - s * u[..., 1], s * u[..., 0] + c * u[..., 1]], axis=-1)
    return sp2.SlopeField(eu_field.resolution, rot)


def cone_nesting_check(spec: MapSpec, params: ConeParams, big_n: int = 20, rounds: int = 5,
                       trials: int = 20, seed: int = 0, base=(0.0, 0.0), resolution: int = 128,
                       fields: Sequence[sp2.SlopeField] | None = None,
                       depth: int = sp2.DEFAULT_DEPTH) -> ConeReport:
    """Check that ``T_{nN}`` maps random ``delta``-close fields into the cone.

    Round ``n`` applies ``transform`` with depth ``n * big_n`` and tests
    membership on the window ``[eps0 * rho**(n-1), eps1]`` along ``W_s(base)``
    where ``rho`` is the one-step stable contraction at the base. ``K`` is the
    admissible constant measured on round 1 over all trials (plus a rounding
    guard) and is then held fixed for the remaining rounds.
    """
    if big_n < 1:
        raise ValueError("big_n must be >= 1")
    base = wrap(np.asarray(base, dtype=float))
    rho = float(sp2._one_step_rates(spec, base[None], depth)[0])
    eps0s = [params.eps0 * rho ** (r - 1) for r in range(1, rounds + 1)]
    scales = geometric_ladder(params.eps1, math.log10(params.eps1 / eps0s[-1]) + 0.01)
    scales = np.concatenate([scales[scales >= eps0s[-1] * (1 - 1e-12)], [eps0s[-1]]])
    scales = np.unique(scales)
    ts = np.concatenate([scales, -scales])
    leaf = stable_leaf(spec, base, params.eps1, step=min(1e-3, eps0s[-1]))
    ys = points_at_arclength(leaf, ts)
    eu_base = sp2.unstable_direction(spec, base, depth)

    if fields is None:
        eu_field = sp2.unstable_field(spec, resolution, depth)
        rng = np.random.default_rng(seed)
        fields = [random_field_near(eu_field, params.delta, rng) for _ in range(trials)]

    devs = np.empty((len(fields), rounds, len(ts)))
    for i, f in enumerate(fields):
        for r in range(rounds):
            pushed = sp2.transform_at(spec, f, (r + 1) * big_n, ys)
            devs[i, r] = sp2.line_angle(pushed, eu_base)
    # below the noise floor a deviation is indistinguishable from zero
    devs[devs <= NOISE_FLOOR] = 0.0

    def as_samples(row):
        return [HolderSample(float(t), float(d)) for t, d in zip(ts, row)]

    round1 = [replace_eps0(params, eps0s[0])] * len(fields)
    trial_k = [admissible_constant(as_samples(devs[i, 0]), round1[i]) for i in range(len(fields))]
    k = max(trial_k, default=0.0) * (1 + K_ROUNDING_GUARD)
    per_round = []
    passes = failures = 0
    for r in range(rounds):
        p = ConeParams(params.delta, eps0s[r], params.eps1, k, params.alpha, params.eps)
        bad = sum(not cone_membership(as_samples(devs[i, r]), p) for i in range(len(fields)))
        per_round.append(bad)
        failures += bad
        passes += len(fields) - bad
    return ConeReport(len(fields), rounds, big_n, k, rho, passes, failures, per_round, eps0s, trial_k)


def replace_eps0(params: ConeParams, eps0: float) -> ConeParams:
    return ConeParams(params.delta, eps0, params.eps1, params.constant_k, params.alpha, params.eps)
