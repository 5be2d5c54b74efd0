"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (lines appear uncaptured), or
``python tests/test_acceptance.py`` for the summary alone.
"""

from __future__ import annotations

import json
import math
import re
import time
from pathlib import Path

import numpy as np
import pytest

from anosovlab import regularity as reg
from anosovlab import splitting2 as sp
from anosovlab import splitting_nd as nd
from anosovlab.cli import main as cli_main
from anosovlab.torus import MapSpec, cat_map, perturbed_cat_map, random_points

GOLDEN = (3 - math.sqrt(5)) / 2
SLOPE_U = (math.sqrt(5) - 1) / 2
SLOPE_S = -(math.sqrt(5) + 1) / 2

_capture = None


@pytest.fixture(autouse=True)
def _uncaptured(pytestconfig):
    global _capture
    _capture = pytestconfig.pluginmanager.getplugin("capturemanager")
    yield
    _capture = None


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
    if _capture is not None:
        with _capture.global_and_fixture_disabled():
            print("\n" + line)
    else:
        print(line)
    assert ok, line


def test_c01_eigen_oracle_splitting():
    spec = cat_map()
    x = np.array([0.123, 0.456])
    t0 = time.perf_counter()
    eu = sp.unstable_direction(spec, x, 60)
    es = sp.stable_direction(spec, x, 60)
    elapsed = time.perf_counter() - t0
    err_u = abs(float(sp.slope_of(eu)) - SLOPE_U)
    err_s = abs(float(sp.slope_of(es)) - SLOPE_S)
    verdict(1, err_u < 1e-10 and err_s < 1e-10 and elapsed < 1.0,
            f"slope errors {err_u:.1e} / {err_s:.1e} (< 1e-10), {elapsed:.3f} s (< 1 s)")


def test_c02_hyperbolicity_estimate():
    t0 = time.perf_counter()
    est = sp.finite_time_rates(cat_map(), sp.default_sample_points(256), n=40)
    elapsed = time.perf_counter() - t0
    dk, dl = abs(est.kappa_hat - GOLDEN), abs(est.lambda_hat - GOLDEN)
    verdict(2, dk < 1e-9 and dl < 1e-9 and est.alpha_max == 2.0 and elapsed < 5.0,
            f"|kappa-g| {dk:.1e}, |lambda-g| {dl:.1e} (< 1e-9), alpha_max {est.alpha_max!r} (== 2), "
            f"{elapsed:.2f} s (< 5 s)")


def test_c03_transform_contraction_rate():
    spec = cat_map()
    res = 32
    eu = sp.unstable_field(spec, res)
    rng = np.random.default_rng(3)
    start = sp.SlopeField(res, sp.direction_from_angle(rng.uniform(0, math.pi, (res, res))))
    dists = []
    f = start
    for _ in range(12):
        f = sp.transform_field(spec, f, 1)
        dists.append(sp.field_distance(f, eu))
    want = GOLDEN / ((3 + math.sqrt(5)) / 2)
    ratios = [b / a for a, b in zip(dists, dists[1:]) if a < 0.1 and b > 1e-12]
    worst = max(abs(r - want) for r in ratios) if ratios else math.inf
    verdict(3, len(ratios) >= 3 and worst <= 0.01,
            f"{len(ratios)} ratios below angle 0.1, max |ratio - {want:.4f}| = {worst:.1e} (<= 0.01)")


def test_c04_invariance():
    pts = random_points(np.random.default_rng(4), 1000)
    worst = 0.0
    t0 = time.perf_counter()
    for eps in (0.01, 0.05):
        spec = perturbed_cat_map(eps)
        d = sp.invariance_defect(spec, pts, lambda p: sp.unstable_direction(spec, p, 60))
        worst = max(worst, float(np.max(d)))
    elapsed = (time.perf_counter() - t0) / 2
    verdict(4, worst < 1e-8 and elapsed < 10.0,
            f"max defect {worst:.1e} over 1000 points at eps 0.01, 0.05 (< 1e-8), {elapsed:.2f} s per map (< 10 s)")


def test_c05_cone_nesting():
    params = reg.ConeParams(delta=0.2, eps0=0.02, eps1=0.1, constant_k=0.0, alpha=1.0, eps=0.1)
    rep = reg.cone_nesting_check(perturbed_cat_map(0.05), params, big_n=20, rounds=5, trials=20, seed=0)
    verdict(5, rep.failures == 0 and rep.passes == 100,
            f"{rep.passes} passes / {rep.failures} failures over 20 fields x 5 rounds, K = {rep.measured_k:.4e}")


def _power_samples(beta, noise, seed):
    t = np.geomspace(1e-4, 1e-1, 25)
    v = 0.5 * t ** beta * (1 + noise * np.random.default_rng(seed).standard_normal(t.size))
    return [reg.HolderSample(float(a), float(b)) for a, b in zip(t, v)]


def test_c06_regression_fidelity():
    clean = max(abs(reg.fit_holder(_power_samples(b, 0.0, 0)).exponent - b) for b in (0.3, 0.7, 1.0, 1.5))
    noisy = max(abs(reg.fit_holder(_power_samples(b, 0.01, s)).exponent - b)
                for b in (0.3, 0.7, 1.0, 1.5) for s in range(10))
    verdict(6, clean < 1e-6 and noisy < 0.05,
            f"noiseless max error {clean:.1e} (< 1e-6), 1% noise max error {noisy:.3f} (< 0.05)")


def test_c07_second_difference_identities():
    dyadic = [0.5, 0.25, 0.125, 1.0, 0.375]
    affine_zero = all(
        reg.second_difference(a * (x + h1) + b, a * x + b, a * (x - h2) + b, h1, h2) == 0.0
        for a in (2.0, -0.75) for b in (1.0, 0.125) for x in (0.0, 0.5) for h1 in dyadic for h2 in dyadic)
    quad = all(reg.second_difference(h1 * h1, 0.0, h2 * h2, h1, h2) == h1 + h2 for h1 in dyadic for h2 in dyadic)
    verdict(7, affine_zero and quad, f"affine -> 0 exactly: {affine_zero}; unit quadratic -> h1+h2 exactly: {quad}")


def test_c08_degenerate_paths(tmp_path):
    cfg = tmp_path / "cat.json"
    cfg.write_text(json.dumps({"map": cat_map().to_json()}))
    codes = [cli_main([cmd, "--config", str(cfg), "--out", str(tmp_path)]) for cmd in ("holder", "differentiability")]
    holder = json.loads((tmp_path / "holder.json").read_text())
    diff = json.loads((tmp_path / "differentiability.json").read_text())
    ok = (codes == [0, 0] and holder["status"] == "degenerate" and holder["report"] is None
          and diff["status"] == "affine at this precision" and diff["report"]["fitted_rate"] is None)
    verdict(8, ok, f"holder status {holder['status']!r}, differentiability status {diff['status']!r}")


def _four_dim_oracle():
    import sympy
    c = sympy.Matrix([[2, 1], [1, 1]])
    m = sympy.zeros(4)
    m[0, 0], m[0, 2], m[2, 0], m[2, 2] = c
    m[1, 1], m[1, 3], m[3, 1], m[3, 3] = c
    s = sympy.eye(4)
    s[0, 1] = 1
    a = s * m * s.inv()
    u = sympy.Matrix.hstack(*[v for val, _, vecs in a.eigenvects() if val.evalf() > 1 for v in vecs])
    t = np.array((u[2:, :] * u[:2, :].inv()).evalf(30), dtype=float)
    return np.array(a.tolist(), dtype=float), t, np.array(u.evalf(30), dtype=float)


def test_c09_nd_oracle():
    a, t_oracle, u_oracle = _four_dim_oracle()
    jac = nd.BlockJacobian.split(a, 2)
    t = nd.GraphMap(np.zeros((2, 2)))
    for _ in range(60):
        t = nd.graph_transform(jac, t)
    err_coord = float(np.max(np.abs(t.matrix - t_oracle)))
    spec4 = MapSpec(tuple(tuple(int(v) for v in row) for row in a))
    frame = nd.reference_frame(spec4, 2)
    err_frame = nd.ambient_angle(frame.subspace(nd.unstable_graph(spec4, (0.1, 0.2, 0.3, 0.4), 60, 2)), u_oracle)

    spec2 = perturbed_cat_map(0.05)
    f2 = nd.reference_frame(spec2, 1)
    pts = random_points(np.random.default_rng(9), 50)
    scalar = 0.0
    for x in pts:
        v = sp.normalize_direction(f2.subspace(nd.unstable_graph(spec2, x, 60, 1, frame=f2))[:, 0])
        scalar = max(scalar, float(sp.line_angle(v, sp.unstable_direction(spec2, x, 60))))
    verdict(9, err_coord < 1e-9 and err_frame < 1e-9 and scalar < 1e-12,
            f"4x4 graph error {err_coord:.1e} / eigenframe angle {err_frame:.1e} (< 1e-9), "
            f"d=2 vs planar {scalar:.1e} (< 1e-12)")


def test_c10_block_growth():
    spec = perturbed_cat_map(0.02)
    lam = sp.finite_time_rates(spec).lambda_hat
    x, t = (0.3, 0.6), 0.02
    r10 = nd.block_growth_check(spec, x, t, 10, lam)
    r20 = nd.block_growth_check(spec, x, t, 20, lam)
    half = nd.block_growth_check(spec, x, t / 2, 10, lam)
    growth = r20.admissible_r / r10.admissible_r
    halving = [h.diff_norm / f.diff_norm for f, h in zip(r10.rows, half.rows)]
    worst = max(abs(q / 0.5 - 1) for q in halving)
    ok = math.isfinite(r10.admissible_r) and growth < 2 and worst <= 0.3
    verdict(10, ok, f"R(10) = {r10.admissible_r:.4f}, R(20)/R(10) = {growth:.3f} (< 2), "
                    f"halving ratios within {worst:.1%} of 1/2 (<= 30%)")


def test_c11_figure(tmp_path):
    cfg = tmp_path / "p.json"
    cfg.write_text(json.dumps({"map": perturbed_cat_map(0.05).to_json(), "figure": {"grid": 3}}))
    t0 = time.perf_counter()
    code = cli_main(["figure", "--config", str(cfg), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    svg = (tmp_path / "figure.svg").read_text()
    leaves = re.findall(r'<g class="leaf" data-base="(\d+)" data-kind="(\w+)"', svg)
    rows = (tmp_path / "figure.csv").read_text().splitlines()[1:]
    by_leaf: dict[tuple[str, str], list] = {}
    for r in rows:
        b, kind, s, px, py = r.split(",")
        by_leaf.setdefault((b, kind), []).append((float(s), float(px), float(py)))
    angles = []
    for b in {b for b, _ in by_leaf}:
        tangents = []
        for kind in ("unstable", "stable"):
            pts = by_leaf[(b, kind)]
            i = min(range(len(pts)), key=lambda k: abs(pts[k][0]))
            d = np.array(pts[i + 1][1:]) - np.array(pts[i - 1][1:])
            tangents.append(d - np.round(d))
        angles.append(math.degrees(float(sp.line_angle(*tangents))))
    ok = code == 0 and len(leaves) == 18 and len(set(leaves)) == 18 and min(angles) > 10 and elapsed < 10
    verdict(11, ok, f"{len(leaves)} polylines (== 18), min tangent angle {min(angles):.1f} deg (> 10), "
                    f"{elapsed:.2f} s (< 10 s)")


def test_c12_holder_reproducibility(tmp_path):
    cfg = tmp_path / "p.json"
    cfg.write_text(json.dumps({"map": perturbed_cat_map(0.05).to_json()}))
    exps = []
    alpha = None
    for seed in (0, 1):
        out = tmp_path / f"s{seed}"
        assert cli_main(["holder", "--config", str(cfg), "--seed", str(seed), "--out", str(out)]) == 0
        doc = json.loads((out / "holder.json").read_text())
        exps.append(doc["report"]["exponent"])
        alpha = doc["alpha_max"]
    gap = abs(exps[0] - exps[1])
    verdict(12, gap < 0.1, f"exponents {exps[0]:.4f} / {exps[1]:.4f}, gap {gap:.4f} (< 0.1); "
                           f"alpha_max {alpha:.4f} reported alongside")


if __name__ == "__main__":
    import sys
    import tempfile

    failures = 0
    for name, fn in sorted(globals().items()):
        if not name.startswith("test_c"):
            continue
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
