"""Unstable subspaces of higher-dimensional torus maps via the graph transform.

A candidate ``d_u``-dimensional subspace is stored as a ``d_s x d_u`` matrix
``T`` whose graph ``{(u, T u)}`` it is, in coordinates adapted to a fixed
reference splitting ``R^d = R^{d_u} + R^{d_s}``. A Jacobian with blocks
``[[A, B], [C, D]]`` maps the graph of ``T`` to the graph of
``(C + D T)(A + B T)^{-1}``.

The reference splitting is the spectral splitting of the linear part, each
half spanned by an orthonormal basis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import subspace_angles

from .torus import MapSpec, jacobian, orbit, torus_displacement, wrap

CHART_CONDITION_LIMIT = 1e12
POWER_ITERATIONS = 64


class GraphChartError(ArithmeticError):
    """``A + B T`` became singular: the subspace is no longer a graph over the reference."""

    def __init__(self, index: int | None = None, cond: float = math.inf):
        where = f" at orbit index {index}" if index is not None else ""
        super().__init__(f"graph chart left{where} (condition number {cond:.3e})")
        self.index = index
        self.cond = cond


@dataclass
class GraphMap:
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("graph map entries must be finite")

    @property
    def d_s(self) -> int:
        return self.matrix.shape[0]

    @property
    def d_u(self) -> int:
        return self.matrix.shape[1]

    def basis(self) -> np.ndarray:
        """Columns spanning the graph, ``(1; T)``, in reference coordinates."""
        return np.vstack([np.eye(self.d_u), self.matrix])

    def to_json(self) -> dict:
        return {"d_u": self.d_u, "d_s": self.d_s, "matrix": self.matrix.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "GraphMap":
        g = cls(np.array(doc["matrix"], dtype=float).reshape(doc["d_s"], doc["d_u"]))
        return g


@dataclass
class BlockJacobian:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @classmethod
    def split(cls, jac, d_u: int) -> "BlockJacobian":
        jac = np.asarray(jac, dtype=float)
        return cls(jac[..., :d_u, :d_u], jac[..., :d_u, d_u:], jac[..., d_u:, :d_u], jac[..., d_u:, d_u:])

    def assemble(self) -> np.ndarray:
        top = np.concatenate([self.a, self.b], axis=-1)
        bottom = np.concatenate([self.c, self.d], axis=-1)
        return np.concatenate([top, bottom], axis=-2)


def graph_transform(jac: BlockJacobian, t: GraphMap) -> GraphMap:
    """``T' = (C + D T)(A + B T)^{-1}``."""
    head = jac.a + jac.b @ t.matrix
    cond = np.linalg.cond(head)
    if not cond < CHART_CONDITION_LIMIT:
        raise GraphChartError(cond=float(cond))
    tail = jac.c + jac.d @ t.matrix
    return GraphMap(np.linalg.solve(head.T, tail.T).T)


@dataclass(frozen=True)
class ReferenceFrame:
    """Basis ``[Q_u | Q_s]`` of the linear part's spectral splitting."""

    basis: np.ndarray
    d_u: int

    @property
    def d_s(self) -> int:
        return self.basis.shape[0] - self.d_u

    def to_blocks(self, jac) -> BlockJacobian:
        local = np.linalg.solve(self.basis, np.asarray(jac) @ self.basis)
        return BlockJacobian.split(local, self.d_u)

    def subspace(self, t: GraphMap) -> np.ndarray:
        """Ambient basis of the graph of ``t``."""
        return self.basis @ t.basis()


def _real_span(vecs: np.ndarray) -> np.ndarray:
    # real and imaginary parts of complex eigenvectors span the real invariant subspace
    cols = []
    for v in vecs.T:
        cols.append(v.real)
        if np.any(np.abs(v.imag) > 1e-14):
            cols.append(v.imag)
    q, r = np.linalg.qr(np.array(cols).T)
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-10))
    return q[:, :rank]


def reference_frame(spec: MapSpec, d_u: int | None = None) -> ReferenceFrame:
    """Spectral splitting of the linear part, checked against ``d_u`` when given."""
    eig, vecs = np.linalg.eig(spec.matrix)
    outside = np.abs(eig) > 1.0
    found = int(np.count_nonzero(outside))
    if d_u is not None and d_u != found:
        raise ValueError(f"d_u={d_u} does not match the linear part's spectrum ({found} expanding)")
    qu = _real_span(vecs[:, outside])
    qs = _real_span(vecs[:, ~outside])
    if qu.shape[1] != found or qs.shape[1] != spec.dim - found:
        raise ValueError("could not build a real basis for the spectral splitting")
    return ReferenceFrame(np.hstack([qu, qs]), found)


def unstable_graph(spec: MapSpec, x, n: int = 60, d_u: int | None = None,
                   frame: ReferenceFrame | None = None) -> GraphMap:
    """Iterate the graph transform from ``T = 0`` along ``n`` backward-orbit steps."""
    if n < 1:
        raise ValueError("n must be >= 1")
    frame = frame or reference_frame(spec, d_u)
    back = orbit(spec, wrap(np.asarray(x, dtype=float)), n, "backward")
    t = GraphMap(np.zeros((frame.d_s, frame.d_u)))
    for k in range(n, 0, -1):
        try:
            t = graph_transform(frame.to_blocks(jacobian(spec, back[k])), t)
        except GraphChartError as exc:
            raise GraphChartError(k, exc.cond) from None
    return t


def stable_graph(spec: MapSpec, x, n: int = 60, d_s: int | None = None) -> GraphMap:
    """Stable subspace as the unstable graph of the inverse map (its own reference frame)."""
    return unstable_graph(spec.inverse(), x, n, d_s)


def subspace_angle(p: GraphMap, q: GraphMap) -> float:
    """Largest principal angle between the graphs of ``p`` and ``q``."""
    if p.matrix.shape != q.matrix.shape:
        raise ValueError("graph maps must have equal dimensions")
    return float(np.max(subspace_angles(p.basis(), q.basis())))


def ambient_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Largest principal angle between column spans in ambient coordinates."""
    return float(np.max(subspace_angles(np.atleast_2d(a), np.atleast_2d(b))))


def invariance_defect_nd(spec: MapSpec, x, n: int = 60, d_u: int | None = None) -> float:
    """Angle between ``d phi(x) E_u(x)`` and ``E_u(phi x)`` for the computed graphs."""
    frame = reference_frame(spec, d_u)
    x = wrap(np.asarray(x, dtype=float))
    here = frame.subspace(unstable_graph(spec, x, n, frame=frame))
    there = frame.subspace(unstable_graph(spec, orbit(spec, x, 1)[1], n, frame=frame))
    return ambient_angle(jacobian(spec, x) @ here, there)


def operator_norm(m) -> float:
    """Largest singular value by a fixed 64-step power iteration on ``M^T M``."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    g = m.T @ m
    v = np.random.default_rng(0).standard_normal(g.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(POWER_ITERATIONS):
        w = g @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return float(math.sqrt(max(v @ g @ v, 0.0)))


def three_direction_second_difference(f, x, h, rays) -> float:
    """Three-ray second difference around ``x``.

    ``rays`` are three vectors summing to zero; they are rescaled so that
    their norms sum to one. With ``c_i = x + h_i v_i`` the value is
    ``|h2 h3 f(c1) + h1 h3 f(c2) + h1 h2 f(c3) - (h1 h2 + h2 h3 + h1 h3) f(x)| / (h1 h2 h3)``.
    """
    rays = np.atleast_2d(np.asarray(rays, dtype=float))
    if rays.shape[0] != 3:
        raise ValueError("need exactly three rays")
    total = np.sum(np.linalg.norm(rays, axis=1))
    if total == 0 or np.max(np.abs(rays.sum(axis=0))) > 1e-12 * max(1.0, total):
        raise ValueError("rays must sum to zero")
    rays = rays / total
    h1, h2, h3 = (float(v) for v in h)
    if min(h1, h2, h3) <= 0:
        raise ValueError("h values must be positive")
    x = np.asarray(x, dtype=float)
    f1, f2, f3 = (f(x + hi * v) for hi, v in zip((h1, h2, h3), rays))
    f0 = f(x)
    num = h2 * h3 * f1 + h1 * h3 * f2 + h1 * h2 * f3 - (h1 * h2 + h2 * h3 + h1 * h3) * f0
    return abs(num) / (h1 * h2 * h3)


@dataclass
class BlockGrowthRow:
    n: int
    diff_norm: float
    r_ratio: float
    a_inv_norm: float
    b_norm: float


@dataclass
class BlockGrowthReport:
    t: float
    lambda_hat: float
    rows: list[BlockGrowthRow]

    @property
    def admissible_r(self) -> float:
        return max((r.r_ratio for r in self.rows), default=0.0)

    @property
    def l_a(self) -> float:
        return max(r.a_inv_norm / self.lambda_hat ** r.n for r in self.rows)

    @property
    def l_b(self) -> float:
        return max(r.b_norm / self.lambda_hat ** r.n for r in self.rows)

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "lambda_hat": self.lambda_hat,
            "admissible_r": self.admissible_r,
            "l_a": self.l_a,
            "l_b": self.l_b,
            "rows": [vars(r) for r in self.rows],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _orthonormal(a: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(a)
    return q


def straightened_blocks(spec: MapSpec, ref_orbit: np.ndarray, leaf_orbit: np.ndarray,
                        depth: int = 60) -> list[np.ndarray]:
    """One-step Jacobians along ``leaf_orbit`` in straightened frames.

    The frame at step ``k`` is ``[U_k | S_k]`` with ``U_k`` an orthonormal
    basis of ``E_u`` at the reference orbit point and ``S_k`` one of ``E_s``
    at the leaf orbit point. The upper-right block is zero by invariance of
    ``E_s`` and is set to exactly zero to keep rounding from leaking the
    unstable growth into the stable block.
    """
    n = len(leaf_orbit) - 1
    fu = reference_frame(spec)
    fs = reference_frame(spec.inverse())
    d_u = fu.d_u
    us = [_orthonormal(fu.subspace(unstable_graph(spec, p, depth, frame=fu))) for p in ref_orbit]
    ss = [_orthonormal(fs.subspace(unstable_graph(spec.inverse(), p, depth, frame=fs))) for p in leaf_orbit]
    frames = [np.hstack([u, s]) for u, s in zip(us, ss)]
    out = []
    for k in range(n):
        m = np.linalg.solve(frames[k + 1], jacobian(spec, leaf_orbit[k]) @ frames[k])
        m[:d_u, d_u:] = 0.0
        out.append(m)
    return out


def stable_leaf_orbit(spec: MapSpec, x, t: float, n: int, resolution: int = 64) -> np.ndarray:
    """Orbit of the point at stable arclength ``t`` from ``x``, kept on the leaves.

    Plain forward iteration drifts off the stable leaf because rounding is
    amplified by the expansion. Each image is therefore projected back onto
    ``W_s`` of the matching base-orbit point (grown from that point, or a
    straight segment along ``E_s`` once the offset is below 1e-6).
    """
    from . import splitting2 as sp2
    from .manifolds import ManifoldRequest, grow_manifold, point_at_arclength, project_onto

    xs = orbit(spec, wrap(np.asarray(x, dtype=float)), n)
    hl = min(0.5, 1.25 * abs(t))
    leaf = grow_manifold(spec, ManifoldRequest(xs[0], "stable", hl, hl / resolution))
    ys = [point_at_arclength(leaf, t)]
    for k in range(1, n + 1):
        p = orbit(spec, ys[-1], 1)[1]
        off = torus_displacement(p, xs[k])
        d = float(np.linalg.norm(off))
        if d == 0.0:
            ys.append(xs[k].copy())
        elif d < 1e-6:
            e = sp2.stable_direction(spec, xs[k])
            ys.append(wrap(xs[k] + (off @ e) * e))
        else:
            hl = min(0.5, 2.0 * d)
            leaf = grow_manifold(spec, ManifoldRequest(xs[k], "stable", hl, hl / resolution))
            ys.append(project_onto(leaf, p)[0])
    return np.array(ys)


def block_growth_check(spec: MapSpec, x, t: float, n_max: int = 10, lambda_hat: float | None = None,
                       depth: int = 60) -> BlockGrowthReport:
    """Measure ``||B_n(y) - B_n(x)|| / (lambda^n |t|)`` along the stable leaf.

    ``y`` is the point at arclength ``t`` on ``W_s(x)``; only d = 2 has a
    leaf to sample. Also records ``||A_n^{-1}||`` and ``||B_n||`` at ``y`` for
    the bounds ``<= L lambda^n``.
    """
    from . import splitting2 as sp2

    if spec.dim != 2:
        raise ValueError("block_growth_check samples a stable leaf and needs d = 2")
    if lambda_hat is None:
        lambda_hat = sp2.finite_time_rates(spec).lambda_hat
    x = wrap(np.asarray(x, dtype=float))
    xs = orbit(spec, x, n_max)
    ys = stable_leaf_orbit(spec, x, t, n_max)
    d_u = reference_frame(spec).d_u
    mx = straightened_blocks(spec, xs, xs, depth)
    my = straightened_blocks(spec, xs, ys, depth)

    rows = []
    px = np.eye(spec.dim)
    py = np.eye(spec.dim)
    for k in range(n_max):
        px = mx[k] @ px
        py = my[k] @ py
        n = k + 1
        bx, by = px[d_u:, d_u:], py[d_u:, d_u:]
        diff = operator_norm(by - bx)
        rows.append(BlockGrowthRow(
            n=n,
            diff_norm=diff,
            r_ratio=diff / (lambda_hat ** n * abs(t)),
            a_inv_norm=operator_norm(np.linalg.inv(py[:d_u, :d_u])),
            b_norm=operator_norm(by),
        ))
    return BlockGrowthReport(float(t), float(lambda_hat), rows)
