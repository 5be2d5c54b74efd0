"""Command-line front end.

Every run reads a JSON config with a ``map`` entry (a serialized MapSpec) and
an optional section per subcommand. Flags override config values, which
override the defaults of the owning modules. All randomness derives from
``--seed``: the cone trials draw their fields in trial order from one
``numpy.random.default_rng(seed)``; the other commands draw their random points
from their own generator seeded the same way.

Exit codes: 0 success, 2 configuration error, 3 hyperbolicity failure,
4 every figure leaf failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import regularity as reg
from . import splitting2 as sp2
from . import splitting_nd as nd
from .manifolds import figure_csv, figure_field, figure_svg, grid_bases
from .torus import MapSpec, random_points

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_HYPERBOLICITY = 3
EXIT_ALL_FAILED = 4


class ConfigError(Exception):
    pass


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_config(path: str | None) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    if not isinstance(doc, dict) or "map" not in doc:
        raise ConfigError("config must be a JSON object with a 'map' entry")
    return doc


def parse_map(doc: dict) -> MapSpec:
    try:
        return MapSpec.from_json(doc["map"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid map: {exc}") from None


def section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section '{name}' must be an object")
    return sec


def pick(args: argparse.Namespace, sec: dict, key: str, default):
    """Flag value if given, else config value, else ``default``."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    return sec.get(key, default)


def _point(value, dim: int, what: str) -> np.ndarray:
    p = np.asarray(value, dtype=float)
    if p.shape != (dim,):
        raise ConfigError(f"{what} must be a list of {dim} numbers")
    return p


def write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _planar(spec: MapSpec, command: str) -> None:
    if spec.dim != 2:
        raise ConfigError(f"{command} needs a 2-dimensional map (got d = {spec.dim}); use nd-splitting")


# --- subcommands -----------------------------------------------------------

def cmd_splitting(spec: MapSpec, cfg: dict, args, out: Path) -> int:
    _planar(spec, "splitting")
    sec = section(cfg, "splitting")
    depth = int(pick(args, sec, "depth", sp2.DEFAULT_DEPTH))
    resolution = int(pick(args, sec, "resolution", 128))
    count = int(sec.get("defect_points", 1000))
    horizon = int(sec.get("horizon", 40))

    est = sp2.finite_time_rates(spec, n=horizon, depth=depth)
    write(out, "eu_field.csv", sp2.unstable_field(spec, resolution, depth).to_csv())
    write(out, "es_field.csv", sp2.stable_field(spec, resolution, depth).to_csv())
    pts = random_points(np.random.default_rng(args.seed), count)
    defect = sp2.invariance_defect(spec, pts, lambda p: sp2.unstable_direction(spec, p, depth))
    write(out, "invariance.json", dumps({
        "depth": depth,
        "points": count,
        "seed": args.seed,
        "max_defect": float(np.max(defect)),
        "mean_defect": float(np.mean(defect)),
    }))
    write(out, "hyperbolicity.json", est.dumps() + "\n")
    print(f"alpha_max={est.alpha_max!r} max_invariance_defect={float(np.max(defect)):.3e}")
    return EXIT_OK


def cmd_figure(spec: MapSpec, cfg: dict, args, out: Path) -> int:
    _planar(spec, "figure")
    sec = section(cfg, "figure")
    if "bases" in sec:
        bases = np.asarray(sec["bases"], dtype=float).reshape(-1, 2) if len(sec["bases"]) else []
    else:
        bases = grid_bases(int(pick(args, sec, "grid", 3)))
    if len(bases) == 0:
        raise ConfigError("figure needs at least one base point")
    entries = figure_field(
        spec, bases,
        half_length=float(pick(args, sec, "half_length", 0.2)),
        step=float(pick(args, sec, "step", 2e-3)),
        depth=int(pick(args, sec, "depth", 40)),
    )
    write(out, "figure.svg", figure_svg(entries))
    write(out, "figure.csv", figure_csv(entries))
    failed = sum(e.polyline is None for e in entries)
    print(f"leaves={len(entries) - failed} failed={failed}")
    for e in entries:
        if e.error:
            print(f"base {e.base_index} {e.kind}: {e.error}", file=sys.stderr)
    return EXIT_ALL_FAILED if failed == len(entries) else EXIT_OK


def _base(args, sec: dict, dim: int = 2) -> np.ndarray:
    if "base" in sec and sec["base"] is not None:
        return _point(sec["base"], dim, "base")
    return random_points(np.random.default_rng(args.seed), 1, dim)[0]


def synthetic_samples(sec: dict, scales: np.ndarray, seed: int) -> list[reg.HolderSample]:
    """Planted power law ``K t**beta`` with multiplicative Gaussian noise."""
    beta = float(sec["exponent"])
    k = float(sec.get("constant", 1.0))
    noise = float(sec.get("noise", 0.0))
    rng = np.random.default_rng(seed)
    ts = np.concatenate([scales, -scales])
    vals = k * np.abs(ts) ** beta * (1.0 + noise * rng.standard_normal(len(ts)))
    return [reg.HolderSample(float(t), float(abs(v))) for t, v in zip(ts, vals)]


def cmd_holder(spec: MapSpec, cfg: dict, args, out: Path) -> int:
    sec = section(cfg, "holder")
    scales = reg.geometric_ladder(float(pick(args, sec, "t_max", 0.1)), float(pick(args, sec, "decades", 3.0)))
    floor = float(pick(args, sec, "floor", reg.NOISE_FLOOR))
    depth = int(pick(args, sec, "depth", sp2.DEFAULT_DEPTH))
    doc: dict = {"seed": args.seed}
    if sec.get("synthetic"):
        samples = synthetic_samples(sec["synthetic"], scales, args.seed)
        doc["mode"] = "synthetic"
        doc["planted_exponent"] = float(sec["synthetic"]["exponent"])
    else:
        _planar(spec, "holder")
        base = _base(args, sec)
        samples = reg.stable_transversal_samples(spec, base, scales, depth)
        doc["mode"] = "map"
        doc["base"] = base.tolist()
        doc["alpha_max"] = sp2.finite_time_rates(spec, depth=depth).alpha_max
    try:
        rep = reg.fit_holder(samples, floor)
        doc.update(status="ok", report=rep.to_json())
        msg = f"exponent={rep.exponent:.4f} r2={rep.r_squared:.4f}"
    except reg.DegenerateFitError as exc:
        doc.update(status="degenerate", report=None, message=str(exc))
        msg = "status=degenerate"
    write(out, "holder.json", dumps(doc))
    write(out, "holder_samples.csv", reg.samples_to_csv(samples))
    print(msg + (f" alpha_max={doc['alpha_max']!r}" if "alpha_max" in doc else ""))
    return EXIT_OK


def cmd_differentiability(spec: MapSpec, cfg: dict, args, out: Path) -> int:
    sec = section(cfg, "differentiability")
    ladder = reg.default_diff_ladder(
        float(pick(args, sec, "h_max", 0.05)),
        float(pick(args, sec, "decades", 2.0)),
        float(pick(args, sec, "skew", 0.6)),
    )
    depth = int(pick(args, sec, "depth", sp2.DEFAULT_DEPTH))
    doc: dict = {"seed": args.seed}
    if args.self_test or sec.get("self_test"):
        rep = reg.differentiability_from_slope(lambda t: np.asarray(t) ** 2, ladder)
        doc["mode"] = "self-test"
    else:
        _planar(spec, "differentiability")
        base = _base(args, sec)
        rep = reg.differentiability_profile(spec, base, ladder, depth)
        doc["mode"] = "map"
        doc["base"] = base.tolist()
        if args.derivative_holder or sec.get("derivative_holder"):
            fd = float(sec.get("fd_step", 1e-4))
            try:
                dh = reg.derivative_holder_profile(spec, base, fd_step=fd, depth=depth)
                doc["derivative_holder"] = {"status": "ok", "report": dh.to_json()}
            except reg.DegenerateFitError as exc:
                doc["derivative_holder"] = {"status": "degenerate", "report": None, "message": str(exc)}
    doc["report"] = rep.to_json()
    doc["status"] = rep.status
    write(out, "differentiability.json", dumps(doc))
    print(f"status={rep.status} rate={rep.fitted_rate}")
    return EXIT_OK


def cmd_cone(spec: MapSpec, cfg: dict, args, out: Path) -> int:
    _planar(spec, "cone")
    sec = section(cfg, "cone")
    try:
        params = reg.ConeParams(
            delta=float(pick(args, sec, "delta", 0.2)),
            eps0=float(pick(args, sec, "eps0", 0.02)),
            eps1=float(pick(args, sec, "eps1", 0.1)),
            constant_k=float(sec.get("constant_k", 0.0)),
            alpha=float(pick(args, sec, "alpha", 1.0)),
            eps=float(pick(args, sec, "eps", 0.1)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid cone parameters: {exc}") from None
    sp2.finite_time_rates(spec)  # raises NotHyperbolicError early
    resolution = int(pick(args, sec, "resolution", 128))
    trials = int(pick(args, sec, "trials", 20))
    kind = sec.get("fields", "random")
    if kind not in ("random", "unstable"):
        raise ConfigError("cone.fields must be 'random' or 'unstable'")
    fields = None
    if kind == "unstable":
        fields = [sp2.unstable_field(spec, resolution)] * trials
    rep = reg.cone_nesting_check(
        spec, params,
        big_n=int(pick(args, sec, "big_n", 20)),
        rounds=int(pick(args, sec, "rounds", 5)),
        trials=trials,
        seed=args.seed,
        base=_point(sec.get("base", (0.0, 0.0)), 2, "base"),
        resolution=resolution,
        fields=fields,
    )
    doc = rep.to_json()
    doc.update(ok=rep.ok, seed=args.seed, fields=kind)
    write(out, "cone.json", dumps(doc))
    print(f"passes={rep.passes} failures={rep.failures} K={rep.measured_k:.4e}")
    return EXIT_OK


def cmd_nd_splitting(spec: MapSpec, cfg: dict, args, out: Path) -> int:
    sec = section(cfg, "nd")
    depth = int(pick(args, sec, "depth", sp2.DEFAULT_DEPTH))
    d_u = sec.get("d_u")
    try:
        frame = nd.reference_frame(spec, None if d_u is None else int(d_u))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if "points" in sec:
        pts = np.asarray(sec["points"], dtype=float).reshape(-1, spec.dim)
    else:
        pts = random_points(np.random.default_rng(args.seed), int(sec.get("count", 4)), spec.dim)
    rows = []
    for p in pts:
        g = nd.unstable_graph(spec, p, depth, frame=frame)
        rows.append({
            "point": p.tolist(),
            "graph": g.to_json(),
            "invariance_defect": nd.invariance_defect_nd(spec, p, depth),
        })
    doc = {"d_u": frame.d_u, "d_s": frame.d_s, "depth": depth, "seed": args.seed,
           "reference_basis": frame.basis.tolist(), "points": rows}
    bg = sec.get("block_growth")
    if bg:
        _planar(spec, "block growth")
        rep = nd.block_growth_check(spec, _point(bg["x"], 2, "block_growth.x"), float(bg["t"]),
                                    int(bg.get("n_max", 10)), depth=depth)
        doc["block_growth"] = rep.to_json()
    write(out, "nd_splitting.json", dumps(doc))
    print(f"points={len(rows)} max_invariance_defect={max(r['invariance_defect'] for r in rows):.3e}")
    return EXIT_OK


COMMANDS = {
    "splitting": cmd_splitting,
    "figure": cmd_figure,
    "holder": cmd_holder,
    "differentiability": cmd_differentiability,
    "cone": cmd_cone,
    "nd-splitting": cmd_nd_splitting,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="64-bit seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")

    parser = argparse.ArgumentParser(prog="anosovlab", parents=[common],
                                     description="Splittings and invariant manifolds of Anosov torus maps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("splitting", parents=[common], help="E_u/E_s fields and rate estimates")
    p.add_argument("--depth", type=int)
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("figure", parents=[common], help="stable and unstable leaves as SVG and CSV")
    p.add_argument("--grid", type=int)
    p.add_argument("--half-length", dest="half_length", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--depth", type=int)

    p = sub.add_parser("holder", parents=[common], help="Hölder exponent of E_u along a stable leaf")
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--decades", type=float)
    p.add_argument("--floor", type=float)
    p.add_argument("--depth", type=int)

    p = sub.add_parser("differentiability", parents=[common], help="second-difference quotients")
    p.add_argument("--h-max", dest="h_max", type=float)
    p.add_argument("--decades", type=float)
    p.add_argument("--skew", type=float)
    p.add_argument("--depth", type=int)
    p.add_argument("--self-test", dest="self_test", action="store_true")
    p.add_argument("--derivative-holder", dest="derivative_holder", action="store_true")

    p = sub.add_parser("cone", parents=[common], help="cone nesting trials")
    for name in ("delta", "eps0", "eps1", "alpha", "eps"):
        p.add_argument(f"--{name}", type=float)
    for name in ("big_n", "rounds", "trials", "resolution"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)

    p = sub.add_parser("nd-splitting", parents=[common], help="graph-transform splitting in dimension d")
    p.add_argument("--depth", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.seed = getattr(args, "seed", 0)
    args.out = getattr(args, "out", ".")
    for flag in ("self_test", "derivative_holder"):
        setattr(args, flag, getattr(args, flag, False))
    if not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(getattr(args, "config", None))
        spec = parse_map(cfg)
        return COMMANDS[args.command](spec, cfg, args, Path(args.out))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (sp2.NotHyperbolicError, nd.GraphChartError) as exc:
        print(f"hyperbolicity failure: {exc}", file=sys.stderr)
        return EXIT_HYPERBOLICITY


if __name__ == "__main__":
    sys.exit(main())
