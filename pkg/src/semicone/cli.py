"""Command-line front end: JSON configs in, JSON reports and CSV tables out.

Exit codes: 0 success, 2 when the computation succeeded and the verdict is
negative (a convexity or L1 inequality fails), 1 on errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
import traceback
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

COMMANDS = ("check-dconvex", "subgradient", "laminate-gen", "envelope", "ornstein-check", "ornstein-blowup",
            "hessian-demo", "recession")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class ConfigError(ValueError):
    pass


def load_schema(name: str) -> dict:
    return json.loads(resources.files("semicone").joinpath("schemas", name).read_text())


def validate(obj, schema_name: str) -> None:
    import jsonschema

    try:
        jsonschema.validate(obj, load_schema(schema_name))
    except jsonschema.ValidationError as err:
        raise ConfigError(f"{schema_name}: {err.message} at {list(err.absolute_path)}") from None


# builders ------------------------------------------------------------------------------

def build_field(spec: dict):
    """Named integrand from a JSON spec such as {"name": "F_c", "c": 0.4}."""
    import numpy as np

    from . import fields
    from .experiments import beta_integrand
    from .ornstein import classical_pair, integrand
    from .tensor_core import ambient_weights, sym2_det

    name = spec["name"]
    suite = {f.name: f for f in fields.sym2_suite()}
    if name in suite:
        return suite[name]
    if name == "cubic_perturbed_frobenius":
        return fields.cubic_perturbed_frobenius()
    if name == "triple_product":
        return fields.triple_product_field(float(spec.get("beta", 0.98)))
    if name == "F_c":
        return integrand(*classical_pair(), float(spec["c"]), norm=spec.get("norm", "l1"))
    if name == "beta":
        return beta_integrand(float(spec.get("beta", 0.5)))
    if name == "neg_det":
        return fields.ScalarField(lambda v: -sym2_det(v), 3, name="neg_det")
    if name == "neg_norm":
        w = ambient_weights(int(spec.get("n", 2)), int(spec.get("k", 2)))
        return fields.ScalarField(lambda v: -np.sqrt(np.sum(w * np.asarray(v) ** 2, axis=-1)), len(w),
                                  homogeneous=True, name="neg_norm")
    if name == "norm":
        w = np.asarray(spec.get("weights", np.ones(int(spec.get("dim", 3)))), dtype=float)
        return fields.weighted_norm_field(w)
    if name == "sqrt_one_plus_sq":
        dim = int(spec.get("dim", 3))
        return fields.ScalarField(lambda x: np.sqrt(1 + np.sum(np.asarray(x) ** 2, axis=-1)), dim,
                                  name="sqrt_one_plus_sq")
    if name == "two_wells":
        P = np.asarray(spec.get("P", [0.5, 0.5, 0.5]), dtype=float)
        return fields.ScalarField(lambda v: np.minimum(fields.sym2_frobenius(v - P), fields.sym2_frobenius(v + P)),
                                  3, name="two_wells")
    if name == "quadratic":
        return fields.quadratic_field(spec["q"])
    if name == "linear":
        return fields.linear_field(spec["v"])
    raise ConfigError(f"unknown function {name!r}")


def build_cone(spec: dict | None, default_dim: int = 3):
    from .cones import DirectionCone

    if spec is None:
        return DirectionCone.symmetric_dyad(2) if default_dim == 3 else DirectionCone.full(default_dim)
    return DirectionCone.from_spec(spec)


def build_box(spec: dict | None, dim: int):
    import numpy as np

    from .fields import Box

    if spec is None:
        return Box.cube(dim, 1.0)
    if "lo" in spec:
        return Box(np.asarray(spec["lo"], float), np.asarray(spec["hi"], float))
    return Box.cube(int(spec.get("dim", dim)), float(spec["half_width"]), spec.get("center"))


def build_tensor(value, n: int, k: int, dim_y: int = 1):
    from .tensor_core import SymTensor

    if isinstance(value, dict):
        return SymTensor.from_dict(value)
    return SymTensor.from_vector(value, n, k, dim_y)


# commands ---------------------------------------------------------------------------------

class Run:
    """Collects output files and the verdict of one command."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[str] = []
        self.exit_code = 0
        self.verdict = "ok"

    def json(self, name: str, obj) -> None:
        from .jsonio import write_json

        write_json(self.out_dir / name, obj)
        self.files.append(name)

    def csv(self, name: str, header, rows) -> None:
        from .jsonio import write_csv

        write_csv(self.out_dir / name, header, rows)
        self.files.append(name)

    def negative(self, verdict: str) -> None:
        self.exit_code = 2
        self.verdict = verdict


def cmd_check_dconvex(p: dict, seed: int, run: Run) -> None:
    from .dconvexity import check_dconvex

    f = build_field(p["function"])
    cone = build_cone(p.get("cone"), f.dim).with_seed(seed)
    rep = check_dconvex(f, cone, build_box(p.get("region"), f.dim), int(p.get("n_segments", 1000)),
                        int(p.get("n_points", 8)), keep_profile=True)
    run.json("report.json", rep)
    run.csv("profile.csv", ["segment", "s", "value"], rep.profile)
    if rep.witness is not None:
        run.negative("not D-convex")


def cmd_subgradient(p: dict, seed: int, run: Run) -> None:
    import numpy as np

    from .subdifferential import CertificateRefused, subgradient_at

    f = build_field(p["function"])
    cone = build_cone(p.get("cone"), f.dim).with_seed(seed)
    try:
        cert = subgradient_at(f, cone, np.asarray(p["x0"], float), int(p.get("n_samples", 100_000)))
    except CertificateRefused as err:
        run.json("report.json", {"certificate": None, "refused": str(err), "witness": err.witness,
                                 "min_slack": err.min_slack})
        run.negative("no supporting functional")
        return
    run.json("report.json", {"certificate": cert})
    run.csv("ell.csv", ["index", "value"], [(i, float(v)) for i, v in enumerate(cert.ell)])


def cmd_laminate_gen(p: dict, seed: int, run: Run) -> None:
    import numpy as np

    from .laminate import build_oscillation

    n, k, dim_y = int(p["n"]), int(p["k"]), int(p.get("dimY", 1))
    xi = build_tensor(p["xi"], n, k, dim_y)
    eta = build_tensor(p["eta"], n, k, dim_y)
    omega = build_box(p.get("omega", {"lo": [0.0] * n, "hi": [1.0] * n}), n)
    osc = build_oscillation(xi, eta, float(p["lambda"]), float(p["eps"]), omega, grid=p.get("grid"))
    run.json("report.json", osc)
    prof = osc.phi.profile
    t = np.linspace(0.0, 1.0, int(p.get("profile_points", 1001)))
    cols = [prof.primitive(level, t) for level in range(k + 1)]
    run.csv("profile.csv", ["t"] + [f"h{level}" for level in range(k + 1)],
            [(float(t[i]), *(float(c[i]) for c in cols)) for i in range(len(t))])


def cmd_envelope(p: dict, seed: int, run: Run) -> None:
    import numpy as np

    from .relaxation import envelope

    f = build_field(p["function"])
    cone = build_cone(p.get("cone"), f.dim).with_seed(seed)
    homogeneous = bool(p.get("homogeneous", False))
    region = None if homogeneous else build_box(p.get("region"), f.dim)
    res = envelope(f, cone, region, float(p.get("spacing", 0.1)), int(p.get("max_sweeps", 20)),
                   float(p.get("tol", 1e-6)), int(p.get("dirs", 16)), int(p.get("reach", 4)), homogeneous,
                   queries=[np.asarray(q, float) for q in p.get("queries", [])])
    nodes = res.grid.nodes()
    vals = res.grid.node_values().ravel()
    flags = res.grid.neg_inf.ravel()
    run.csv("grid.csv", [f"x{i}" for i in range(f.dim)] + ["value", "neg_inf"],
            [(*map(float, nodes[i]), float(vals[i]) if np.isfinite(vals[i]) else "-inf", int(flags[i]))
             for i in range(len(nodes))])
    run.csv("trace.csv", ["sweep", "max_decrease"], [(t["sweep"], t["max_decrease"]) for t in res.trace])
    run.json("trees.json", res.trees)
    run.json("report.json", res)


def _operator(arg):
    from .ornstein import OperatorFamily

    data = json.loads(Path(arg).read_text()) if isinstance(arg, str) else arg
    validate(data, "operator.schema.json")
    return OperatorFamily.from_dict(data)


def cmd_ornstein_check(p: dict, seed: int, run: Run) -> None:
    from .ornstein import assemble_symbol, factorize

    A1, A2 = _operator(p["a1"]), _operator(p["a2"])
    assemble_symbol(A1, seed=seed)
    assemble_symbol(A2, seed=seed)
    fac = factorize(A1, A2, p.get("c"))
    run.json("report.json", fac)
    if not fac.factors:
        run.negative("L1 inequality fails for every c (kernel witness)")
    elif fac.holds is False:
        run.negative(f"L1 inequality fails for c = {fac.c_bound}")


def cmd_ornstein_blowup(p: dict, seed: int, run: Run) -> None:
    from .ornstein import blowup_sequence, classical_pair

    A1, A2 = (_operator(p["a1"]), _operator(p["a2"])) if "a1" in p else classical_pair()
    res = blowup_sequence(A1, A2, float(p["c"]), int(p.get("depth", 1)), tuple(p.get("eps", [0.2, 0.1, 0.05])),
                          int(p.get("grid", 4096)))
    run.json("report.json", {"result": res, "test_maps": res.maps})
    run.csv("ratios.csv", ["eps", "j", "ratio", "numerator", "denominator", "certified"],
            [(s.eps, s.j, s.ratio, s.numerator, s.denominator, int(s.certified)) for s in res.steps])
    if res.status == "certified":
        run.negative(f"blow-up certified: ratio exceeds c = {res.c}")


def cmd_hessian_demo(p: dict, seed: int, run: Run) -> None:
    from .relaxation import certify_unbounded, hessian_demo_data

    F, mu0, d, e = hessian_demo_data()
    rows = []
    for M in p.get("M", [-10.0, -1e3, -1e6]):
        w = certify_unbounded(F, mu0, d, float(M), e)
        rows.append((float(M), w.t_star, w.value, abs(float(M)) / d.norm()))
    run.csv("witness.csv", ["M", "t_star", "value", "predicted_t"], rows)
    run.json("report.json", {"mu0": mu0, "d": d, "e": e, "d_norm": d.norm(),
                             "witnesses": [dict(zip(["M", "t_star", "value", "predicted_t"], r)) for r in rows]})


def cmd_recession(p: dict, seed: int, run: Run) -> None:
    import numpy as np

    from .dconvexity import recession

    f = build_field(p["function"])
    xs = np.asarray(p["x"], float).reshape(-1, f.dim)
    res = [recession(f, x, float(p.get("t_max", 1e8)), int(p.get("levels", 30))) for x in xs]
    run.csv("recession.csv", [f"x{i}" for i in range(f.dim)] + ["value", "converged"],
            [(*map(float, x), r.value, int(r.converged)) for x, r in zip(xs, res)])
    run.json("report.json", {"points": xs, "results": res})


HANDLERS = {
    "check-dconvex": cmd_check_dconvex,
    "subgradient": cmd_subgradient,
    "laminate-gen": cmd_laminate_gen,
    "envelope": cmd_envelope,
    "ornstein-check": cmd_ornstein_check,
    "ornstein-blowup": cmd_ornstein_blowup,
    "hessian-demo": cmd_hessian_demo,
    "recession": cmd_recession,
}


# execution --------------------------------------------------------------------------------

def versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": numpy.__version__, "scipy": scipy.__version__,
            "semicone": __version__}


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_config(config: dict, out_dir: Path, threads: int | None = None) -> int:
    """Validate and execute one experiment; always leaves a manifest when the config is valid."""
    validate(config, "experiment.schema.json")
    command = config.get("command")
    if command not in HANDLERS:
        raise ConfigError(f"missing or unknown command {command!r}")
    seed = int(config.get("seed", 0))
    out_dir.mkdir(parents=True, exist_ok=True)
    run = Run(out_dir)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    HANDLERS[command](config["params"], seed, run)
    manifest = {
        "command": command, "config": config, "seed": seed, "threads": threads, "versions": versions(),
        "started_at": started, "wall_time_s": time.perf_counter() - t0, "exit_code": run.exit_code,
        "verdict": run.verdict,
        "outputs": [{"file": f, "sha256": sha256(out_dir / f)} for f in run.files],
    }
    validate(manifest, "manifest.schema.json")
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return run.exit_code


# builtin suites -----------------------------------------------------------------------------

def smoke_configs() -> list[dict]:
    classical_a1 = {"k": 2, "n": 2, "V": 1, "W": 2, "coeffs": {"2,0": [[1.0], [0.0]], "0,2": [[0.0], [1.0]]}}
    classical_a2 = {"k": 2, "n": 2, "V": 1, "W": 1, "coeffs": {"1,1": [[1.0]]}}
    return [
        {"command": "check-dconvex", "params": {"function": {"name": "neg_det"}, "n_segments": 200}},
        {"command": "subgradient", "params": {"function": {"name": "frobenius"}, "x0": [0.5, 0.5, 0.5],
                                              "n_samples": 2000}},
        {"command": "laminate-gen", "params": {"n": 2, "k": 2, "xi": [1.0, 0.0, 0.0], "eta": [2.0, 1.0, 1.0],
                                               "lambda": 0.5, "eps": 0.2, "grid": 256}},
        {"command": "envelope", "params": {"function": {"name": "two_wells"}, "region": {"half_width": 1.0},
                                           "spacing": 0.25, "max_sweeps": 2, "queries": [[0.0, 0.0, 0.0]]}},
        {"command": "ornstein-check", "params": {"a1": classical_a1, "a2": classical_a2, "c": 10.0}},
        {"command": "ornstein-blowup", "params": {"c": 0.4, "eps": [0.2], "grid": 256}},
        {"command": "hessian-demo", "params": {"M": [-10.0, -1000.0]}},
        {"command": "recession", "params": {"function": {"name": "sqrt_one_plus_sq"}, "x": [[1.0, 0.0, 0.0]]}},
    ]


def paper_figures(out_dir: Path, scale: str = "full", seed: int = 0) -> int:
    """Regenerate the data behind every acceptance check as CSV files plus a summary."""
    from . import experiments as E

    out_dir.mkdir(parents=True, exist_ok=True)
    batteries = [
        ("certificates", lambda: E.certificates(scale, seed=seed)),
        ("laminate_suite", lambda: E.laminate_suite(scale, seed=seed)),
        ("growth_bounds", lambda: E.growth_bounds(seed=seed)),
        ("ornstein_classical", lambda: E.ornstein_classical(grid=4096 if scale == "full" else 1024)),
        ("ornstein_factorization", lambda: E.ornstein_factorization(seed=seed)),
        ("envelope_sanity", E.envelope_sanity),
        ("hessian_demo", E.hessian_demo),
        ("self_consistency", lambda: E.self_consistency(seed=seed, scale=scale)),
    ]
    from .jsonio import write_csv, write_json

    summary = []
    for name, fn in batteries:
        out = fn()
        if out.rows:
            header = list(out.rows[0].keys())
            write_csv(out_dir / f"{name}.csv", header, [[_cell(r.get(h)) for h in header] for r in out.rows])
        summary.append({"name": name, "passed": out.passed, "summary": out.summary})
        print(f"{'PASS' if out.passed else 'FAIL'} {name}: {out.summary}", file=sys.stderr)
    write_json(out_dir / "summary.json", summary)
    return 0 if all(s["passed"] for s in summary) else 2


def _cell(v):
    if isinstance(v, (list, tuple)):
        return json.dumps(v)
    if isinstance(v, bool):
        return int(v)
    return v


def builtin_suite(name: str, out_dir: Path, threads: int | None = None, scale: str = "full", seed: int = 0) -> int:
    if name == "smoke":
        codes = []
        for i, cfg in enumerate(smoke_configs()):
            cfg = dict(cfg, seed=seed)
            codes.append(run_config(cfg, out_dir / f"{i:02d}_{cfg['command']}", threads))
        return 1 if 1 in codes else 0
    if name == "paper-figures":
        return paper_figures(out_dir, scale, seed)
    raise ConfigError(f"unknown suite {name!r}")


# argument parsing ---------------------------------------------------------------------------

def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semicone", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP workers (env SEMICONE_THREADS)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with params (and optionally command, seed, output_dir)")
        p.add_argument("--output-dir", default=None)
        p.add_argument("--seed", type=int, default=None)

    common(sub.add_parser("run", help="run a full ExperimentConfig"))
    for name in COMMANDS:
        p = sub.add_parser(name)
        common(p)
        if name == "ornstein-check":
            p.add_argument("--a1", help="operator JSON file")
            p.add_argument("--a2", help="operator JSON file")
            p.add_argument("--c", type=float, default=None)
        if name == "ornstein-blowup":
            p.add_argument("--c", type=float, default=None)
            p.add_argument("--depth", type=int, default=None)
    s = sub.add_parser("suite", help="builtin batches: smoke, paper-figures")
    s.add_argument("name")
    s.add_argument("--output-dir", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", choices=["full", "reduced"], default="full")
    return ap


def _config_from_args(args) -> dict:
    config: dict = {"params": {}}
    if args.config:
        config = json.loads(Path(args.config).read_text())
        if "params" not in config or not isinstance(config.get("params"), dict):
            config = {"params": config}
    if args.command != "run":
        config["command"] = args.command
    if args.seed is not None:
        config["seed"] = args.seed
    for key in ("a1", "a2", "c", "depth"):
        val = getattr(args, key, None)
        if val is not None:
            config["params"][key] = val
    return config


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("SEMICONE_THREADS"):
        threads = int(os.environ["SEMICONE_THREADS"])
    if threads is not None:
        for var in THREAD_VARS:
            os.environ[var] = str(threads)
    try:
        if args.command == "suite":
            out = Path(args.output_dir or f"semicone-{args.name}")
            return builtin_suite(args.name, out, threads, args.scale, args.seed)
        config = _config_from_args(args)
        out = Path(args.output_dir or config.get("output_dir") or f"semicone-{config.get('command', 'run')}")
        return run_config(config, out, threads)
    except Exception as err:  # noqa: BLE001 - every failure becomes a structured exit-1 report
        report = {"error": type(err).__name__, "message": str(err)}
        if os.environ.get("SEMICONE_DEBUG"):
            report["traceback"] = traceback.format_exc()
        print(json.dumps(report), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
