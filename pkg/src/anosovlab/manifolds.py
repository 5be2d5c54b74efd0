"""Local stable and unstable manifolds grown as polylines.

An unstable leaf through ``base`` is obtained by placing a short segment
along ``E_u`` at ``phi^{-depth}(base)`` and pushing it forward ``depth``
times. After each application the curve is re-sampled at a fine uniform
arclength spacing around the tracked image of the basepoint and trimmed,
so it never grows beyond a small neighbourhood of the base orbit. Stable
leaves are unstable leaves of the inverse map.

Curves live on the universal cover (a continuous planar lift whose
basepoint lies in [0, 1)^2); wrapping is only done for output.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .splitting2 import CERTIFICATE_TOL, certified_direction, line_angle, normalize_direction
from .torus import MapSpec, jacobian, lift_map, orbit, torus_displacement, wrap

TURNING_LIMIT = 0.2
FINE_FACTOR = 8


class ManifoldError(RuntimeError):
    pass


@dataclass(frozen=True)
class ManifoldRequest:
    base: np.ndarray
    kind: str = "unstable"
    half_length: float = 0.2
    step: float = 2e-3
    depth: int = 40

    def __post_init__(self):
        object.__setattr__(self, "base", wrap(np.asarray(self.base, dtype=float)))
        if self.kind not in ("unstable", "stable"):
            raise ValueError(f"kind must be 'unstable' or 'stable', got {self.kind!r}")
        if not 0 < self.step < self.half_length:
            raise ValueError("need 0 < step < half_length")
        if self.half_length > 0.5:
            raise ValueError("half_length must be <= 0.5 to stay local on the torus")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")


@dataclass
class Polyline:
    """Leaf through ``points[base_index]`` parametrized by signed arclength."""

    points: np.ndarray  # planar lift, shape (m, 2)
    arclength: np.ndarray  # shape (m,), zero at the base
    base_index: int
    kind: str
    step: float
    self_intersects: bool = False
    certificate: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def base(self) -> np.ndarray:
        return self.points[self.base_index]

    @property
    def half_length(self) -> float:
        return float(min(-self.arclength[0], self.arclength[-1]))

    @property
    def wrapped(self) -> np.ndarray:
        return wrap(self.points)

    def tangent(self) -> np.ndarray:
        """Unit tangent at the base from Richardson-extrapolated central chords."""
        b = self.base_index
        p = self.points
        h = self.arclength[b + 1] - self.arclength[b - 1]
        d1 = (p[b + 1] - p[b - 1]) / h
        if b >= 2 and b + 2 < len(p):
            d2 = (p[b + 2] - p[b - 2]) / (self.arclength[b + 2] - self.arclength[b - 2])
            d1 = (4 * d1 - d2) / 3
        return normalize_direction(d1)


def _arclength_from(points: np.ndarray, idx: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    return s - s[idx]


def _interp(points: np.ndarray, s: np.ndarray, targets: np.ndarray) -> np.ndarray:
    # cubic splines keep resampled vertices on the curve to ~h**4; chords sag by ~h**2
    if len(s) < 4:
        return np.stack([np.interp(targets, s, points[:, k]) for k in range(points.shape[1])], axis=1)
    return CubicSpline(s, points, axis=0)(targets)


def _max_turning(points: np.ndarray) -> float:
    d = np.diff(points, axis=0)
    if len(d) < 2:
        return 0.0
    return float(np.max(line_angle(d[:-1], d[1:])))


def _resample(points: np.ndarray, idx: int, spacing: float, reach: float) -> tuple[np.ndarray, int, float]:
    """Uniform re-sampling at ``spacing`` within ``reach`` of vertex ``idx``.

    The spacing is halved (down to a floor of half the request) while the
    turning angle per step exceeds ``TURNING_LIMIT``.
    """
    s = _arclength_from(points, idx)
    h = spacing
    while True:
        lo = max(s[0], -reach)
        hi = min(s[-1], reach)
        k_lo = int(math.floor(-lo / h + 1e-9))
        k_hi = int(math.floor(hi / h + 1e-9))
        targets = np.arange(-k_lo, k_hi + 1) * h
        new = _interp(points, s, targets)
        new[k_lo] = points[idx]
        if _max_turning(new) <= TURNING_LIMIT or h <= spacing / 2:
            return new, k_lo, h
        h /= 2


def grow_manifold(spec: MapSpec, req: ManifoldRequest) -> Polyline:
    if req.kind == "stable":
        poly = grow_manifold(spec.inverse(), ManifoldRequest(
            req.base, "unstable", req.half_length, req.step, req.depth))
        poly.kind = "stable"
        return poly

    base = req.base
    back = orbit(spec, base, req.depth, "backward")
    e0, tol0 = certified_direction(spec, back[req.depth])
    e_base, tol = certified_direction(spec, base)
    if max(tol0, tol) >= CERTIFICATE_TOL:
        raise ManifoldError(f"splitting certificate failed (achieved {max(tol0, tol):.2e})")

    fine = req.step / FINE_FACTOR
    reach = req.half_length + 4 * req.step
    r0 = req.step / 4
    offsets = np.linspace(-r0, r0, 2 * max(2, int(math.ceil(r0 / fine))) + 1)
    pts = back[req.depth] + offsets[:, None] * e0
    idx = len(offsets) // 2
    pts[idx] = back[req.depth]

    for k in range(req.depth, 0, -1):
        # Frobenius norm bounds the stretch from above
        stretch = float(np.max(np.linalg.norm(jacobian(spec, pts), axis=(1, 2))))
        pre = fine / max(stretch, 1.0)
        pts, idx, _ = _resample(pts, idx, pre, reach)
        img = lift_map(spec, pts)
        img -= np.round(img[idx] - back[k - 1])
        img[idx] = back[k - 1]
        pts, idx, _ = _resample(img, idx, fine, reach)

    s = _arclength_from(pts, idx)
    if min(-s[0], s[-1]) < req.half_length:
        raise ManifoldError(
            f"leaf reached only {min(-s[0], s[-1]):.3g} of half_length {req.half_length}; increase depth")
    count = max(1, int(round(req.half_length / req.step)))
    h = req.half_length / count
    targets = np.arange(-count, count + 1) * h
    out = _interp(pts, s, targets)
    out[count] = base
    poly = Polyline(out, targets, count, "unstable", h, certificate=max(tol0, tol))
    poly.self_intersects = _self_intersects(poly)
    poly.meta["tangent_error"] = float(line_angle(poly.tangent(), e_base))
    return poly


def _self_intersects(poly: Polyline) -> bool:
    # on the torus: vertices far apart in arclength but close in space
    tree = cKDTree(poly.wrapped, boxsize=1.0)
    pairs = tree.query_pairs(r=poly.step / 2, output_type="ndarray")
    if len(pairs) == 0:
        return False
    return bool(np.any(np.abs(pairs[:, 0] - pairs[:, 1]) > 4))


def point_at_arclength(poly: Polyline, t: float) -> np.ndarray:
    """Torus point at signed arclength ``t``; ``t = 0`` returns the base exactly."""
    if not poly.arclength[0] - 1e-12 <= t <= poly.arclength[-1] + 1e-12:
        raise ValueError(f"arclength {t} outside [{poly.arclength[0]}, {poly.arclength[-1]}]")
    if t == 0.0:
        return wrap(poly.base)
    return wrap(_interp(poly.points, poly.arclength, np.array([t]))[0])


def points_at_arclength(poly: Polyline, ts) -> np.ndarray:
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < poly.arclength[0] - 1e-12) or np.any(ts > poly.arclength[-1] + 1e-12):
        raise ValueError("arclength out of range")
    out = _interp(poly.points, poly.arclength, ts)
    out[ts == 0.0] = poly.base
    return wrap(out)


def project_onto(poly: Polyline, p) -> tuple[np.ndarray, float]:
    """Closest point of the polyline to torus point ``p``, with its arclength."""
    lift = poly.base + torus_displacement(p, poly.base)
    a, b = poly.points[:-1], poly.points[1:]
    ab = b - a
    u = np.clip(np.einsum("ij,ij->i", lift - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    cand = a + u[:, None] * ab
    i = int(np.argmin(np.linalg.norm(cand - lift, axis=1)))
    s = poly.arclength[i] + u[i] * (poly.arclength[i + 1] - poly.arclength[i])
    return wrap(cand[i]), float(s)


@dataclass
class FigureEntry:
    base_index: int
    kind: str
    polyline: Polyline | None
    error: str | None = None


def figure_field(spec: MapSpec, bases, half_length: float = 0.2, step: float = 2e-3,
                 depth: int = 40) -> list[FigureEntry]:
    """One unstable and one stable leaf per base; per-base failures are recorded."""
    bases = np.atleast_2d(np.asarray(bases, dtype=float))
    if len(bases) == 0:
        raise ValueError("figure_field needs at least one base")
    out = []
    for i, b in enumerate(bases):
        for kind in ("unstable", "stable"):
            try:
                poly = grow_manifold(spec, ManifoldRequest(b, kind, half_length, step, depth))
                out.append(FigureEntry(i, kind, poly))
            except (ManifoldError, ArithmeticError, ValueError) as exc:
                out.append(FigureEntry(i, kind, None, str(exc)))
    return out


def grid_bases(k: int) -> np.ndarray:
    """``k x k`` bases at cell centres of the unit square."""
    c = (np.arange(k) + 0.5) / k
    x, y = np.meshgrid(c, c, indexing="ij")
    return np.stack([x.ravel(), y.ravel()], axis=1)


def split_wrapped(points: np.ndarray) -> list[np.ndarray]:
    """Cut a planar lift into pieces lying in single translates of [0, 1)^2.

    Crossing points on cell boundaries are inserted so the pieces close up on
    the torus.
    """
    cells = np.floor(points)
    pieces = []
    current = [points[0] - cells[0]]
    for a, b, ca, cb in zip(points[:-1], points[1:], cells[:-1], cells[1:]):
        if np.array_equal(ca, cb):
            current.append(b - cb)
            continue
        # parameter values where the segment crosses integer lines
        ts = []
        for k in range(2):
            lo, hi = sorted((a[k], b[k]))
            for m in range(int(math.floor(lo)) + 1, int(math.floor(hi)) + 1):
                ts.append((m - a[k]) / (b[k] - a[k]))
        ts = sorted(set(ts))
        cell = ca
        for t in ts:
            p = a + t * (b - a)
            current.append(p - cell)
            pieces.append(np.array(current))
            mid_next = a + (t + 1e-9) * (b - a)
            cell = np.floor(mid_next)
            current = [p - cell]
        current.append(b - cb)
    pieces.append(np.array(current))
    return [p for p in pieces if len(p) >= 2]


COLORS = {"unstable": "blue", "stable": "red"}


def figure_svg(entries: list[FigureEntry], stroke_width: float = 0.003) -> str:
    lines = [
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1 1" width="600" height="600">',
        '<rect x="0" y="0" width="1" height="1" fill="white" stroke="black" stroke-width="0.002"/>',
    ]
    for e in entries:
        if e.polyline is None:
            continue
        # one group per leaf; a leaf crossing the cell boundary is drawn in several pieces
        lines.append(f'<g class="leaf" data-base="{e.base_index}" data-kind="{e.kind}" stroke="{COLORS[e.kind]}">')
        for piece in split_wrapped(e.polyline.points):
            d = " ".join(
                ("M" if i == 0 else "L") + f"{x:.6f},{1.0 - y:.6f}" for i, (x, y) in enumerate(piece))
            lines.append(f'<path d="{d}" fill="none" stroke-width="{stroke_width}"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def figure_csv(entries: list[FigureEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["base_index", "kind", "t", "x", "y"])
    for e in entries:
        if e.polyline is None:
            w.writerow([e.base_index, f"{e.kind}:error:{e.error}", "", "", ""])
            continue
        pts = e.polyline.wrapped
        for t, (x, y) in zip(e.polyline.arclength, pts):
            w.writerow([e.base_index, e.kind, repr(float(t)), repr(float(x)), repr(float(y))])
    return buf.getvalue()
