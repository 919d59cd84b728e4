"""Command line driver: ``bilinred <command> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
failure. Independent (method, d) jobs run on ``BILINRED_WORKERS``
threads (default 1).
"""

import argparse
import concurrent.futures
import hashlib
import json
import logging
import os
import pathlib
import sys as _sys
import time

import numpy as np

from . import __version__
from .errors import InputError, NumericalError
from .io import load_extra, load_system, save_system
from .pipeline import DEFAULT_ETA, METHODS, Benchmark, ReductionRun, prepare
from .simulation import (compare_outputs, gaussian_pulse, integrate, spectrum_report,
                         write_columns)

log = logging.getLogger("bilinred")

WORKERS_ENV = "BILINRED_WORKERS"
TABLE1_ORDERS = (200, 100, 50, 25)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    if _workers() == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with concurrent.futures.ThreadPoolExecutor(_workers()) as ex:
        return list(ex.map(fn, items))


# -- manifests --------------------------------------------------------------------

def _hash(obj):
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _write_manifest(path, args, outputs, config=None):
    args_d = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {"command": args.command, "arguments": args_d,
                "config_hash": _hash({"args": args_d, "config": config}),
                "seed": getattr(args, "seed", None), "version": __version__,
                "outputs": sorted(str(p) for p in outputs)}
    path = pathlib.Path(path)
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def _manifest_path(out):
    out = pathlib.Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.stem + ".manifest.json")


# -- benchmarks ---------------------------------------------------------------------

def _read_config(path):
    if path is None:
        return {}
    try:
        data = json.loads(pathlib.Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"config: invalid JSON in {path} ({exc})") from exc
    if not isinstance(data, dict):
        raise InputError("config: top level must be an object")
    return data


def build_benchmark(model, config):
    if model == "fpe":
        from .fpe import FpeConfig
        from .pipeline import fpe_benchmark

        return fpe_benchmark(FpeConfig.from_dict(config))
    from .lvne import LvneConfig
    from .pipeline import lvne_benchmark

    return lvne_benchmark(LvneConfig.from_dict(config))


def _load_benchmark(directory):
    sys = load_system(directory)
    extra = load_extra(directory)
    if "model" not in extra or "weights" not in extra:
        raise InputError(f"bundle: {directory} was not written by 'build'")
    return Benchmark(sys, np.asarray(extra["weights"]), extra["model"], extra.get("config"))


def cmd_build(args):
    config = _read_config(args.config)
    for key in ("beta", "h", "gamma", "theta"):
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    bench = build_benchmark(args.model, config)
    out = pathlib.Path(args.out)
    save_system(bench.system, out, extra={"model": bench.model, "weights": bench.weights,
                                          "config": bench.config})
    print(f"{args.model}: n = {bench.system.n}, m = {bench.system.m}, l = {bench.system.l}")
    _write_manifest(out / "manifest.json", args, sorted(out.iterdir()), bench.config)
    return 0


def _prepared_run(args):
    bench = _load_benchmark(args.bundle)
    eta = args.eta if args.eta is not None else DEFAULT_ETA.get(bench.model, 1.0)
    prep = prepare(bench, stabilize=args.stabilize, eta=eta, alpha=args.alpha)
    return bench, prep, ReductionRun(prep.system)


def cmd_reduce(args):
    bench, prep, run = _prepared_run(args)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "full"]
    save_system(prep.system, out / "full", extra={"model": bench.model, "weights": bench.weights})
    for d in args.d:
        if not 1 <= d < prep.system.n:
            raise InputError(f"d: order {d} must satisfy 1 <= d < {prep.system.n}")
    if args.method in ("bt", "sp") or args.init == "bt":
        hsv = run.balanced.hsv_all
        write_columns(out / "hsv.csv", {"index": np.arange(1, hsv.size + 1), "hsv": hsv})
        outputs.append(out / "hsv.csv")

    def job(d):
        red = run.reduce(args.method, d, init=args.init, seed=args.seed)
        target = out / f"{args.method}_d{d}"
        save_system(red, target)
        return target

    outputs += _map(job, args.d)
    for p in outputs:
        print(p)
    _write_manifest(out / "manifest.json", args, outputs)
    return 0


def _control(args, m):
    a, t0, tau = args.pulse
    return gaussian_pulse(a, t0, tau, channel=args.channel, m=m)


def cmd_simulate(args):
    sys = load_system(args.bundle)
    u = _control(args, sys.m)
    traj = integrate(sys, u, t_span=(0.0, args.t_end), samples=args.samples, rtol=args.rtol,
                     atol=args.atol)
    traj.write(args.out)
    _write_manifest(_manifest_path(args.out), args, [args.out])
    return 0


def cmd_populations(args):
    """Simulate the full model and every reduced bundle of a reduce directory."""
    root = pathlib.Path(args.reduced)
    full = load_system(root / "full")
    u = _control(args, full.m)
    kw = dict(t_span=(0.0, args.t_end), samples=args.samples, rtol=args.rtol, atol=args.atol)
    ref = integrate(full, u, **kw)
    cols = {"t": ref.t}
    cols.update({f"full_y{k + 1}": ref.y[:, k].real for k in range(ref.y.shape[1])})
    report = {}
    bundles = sorted(p for p in root.iterdir() if p.is_dir() and p.name != "full")

    def job(path):
        return path.name, integrate(load_system(path), u, **kw)

    for name, traj in _map(job, bundles):
        cols.update({f"{name}_y{k + 1}": traj.y[:, k].real for k in range(traj.y.shape[1])})
        dev = compare_outputs(ref, traj)
        report[name] = {"normalized_max": dev.normalized_max, "max": dev.max_dev.tolist(),
                        "l2": dev.l2_dev.tolist()}
    out = pathlib.Path(args.out)
    write_columns(out, cols)
    side = out.with_suffix(".json")
    side.write_text(json.dumps(report, indent=2))
    for name, r in report.items():
        print(f"{name}: normalized max deviation {r['normalized_max']:.3e}")
    _write_manifest(_manifest_path(out), args, [out, side])
    return 0


def cmd_spectrum(args):
    sys = load_system(args.bundle)
    rep = spectrum_report(sys, k=args.k, path=args.out)
    for w in rep.eigenvalues:
        print(f"{w.real: .6f} {w.imag:+.6f}i")
    if args.out:
        _write_manifest(_manifest_path(args.out), args, [args.out])
    return 0


MACHINE_REL = 10 * np.finfo(float).eps


def cmd_h2curve(args):
    bench, prep, run = _prepared_run(args)
    norm = run.h2_norm
    rows = {"method": [], "d": [], "error": [], "relative": []}
    jobs = [(m, d) for m in args.methods for d in args.d]

    def job(md):
        m, d = md
        red = run.reduce(m, d, init=args.init, seed=args.seed)
        err = run.h2_error(red, route=args.route)
        return m, d, err

    if "bt" in args.methods or "sp" in args.methods or args.init == "bt":
        run.balanced  # noqa: B018  (compute once before fanning out)
    for m, d, err in _map(job, jobs):
        rel = err / norm if norm > 0 else np.nan
        # values at roundoff level carry no information
        if not err > MACHINE_REL * norm:
            err = rel = np.nan
        rows["method"].append(m)
        rows["d"].append(d)
        rows["error"].append(err)
        rows["relative"].append(rel)
        print(f"{m} d={d}: H2 error {err:.3e}")
    write_columns(pathlib.Path(args.out), rows)
    _write_manifest(_manifest_path(args.out), args, [args.out])
    return 0


def cmd_table1(args):
    bench = _load_benchmark(args.bundle)
    eta = args.eta if args.eta is not None else DEFAULT_ETA.get(bench.model, 1.0)
    prep = prepare(bench, stabilize=args.stabilize, eta=eta, alpha=args.alpha)
    run = ReductionRun(prep.system)
    k = 12
    cols = {"full": spectrum_report(bench.system, k=k).eigenvalues}
    for m in args.methods:
        for d in args.d:
            red = run.reduce(m, d, init=args.init, seed=args.seed)
            cols[f"{m}_d{d}"] = table_column(red, k)
    table = {"row": np.arange(1, k + 1)}
    for name, w in cols.items():
        table[f"{name}_re"] = w.real
        table[f"{name}_im"] = w.imag
    write_columns(pathlib.Path(args.out), table)
    for i in range(k):
        print(" ".join(f"{cols[c][i].real:8.4f}" for c in cols))
    _write_manifest(_manifest_path(args.out), args, [args.out])
    return 0


def table_column(red, k=12):
    """The `k` smallest-magnitude eigenvalues of a reduced model as a table column.

    The conserved mode (eigenvalue 0) is removed by the projection or
    sits at ``-alpha`` after discounting. It is unreachable, so balancing
    normally drops it, but at large orders rounding can leave a copy in
    the discounted model, which shows up within ``1e-2 * alpha`` of 0
    once the discount is added back. Such a copy is discarded and the
    mode is reported once as an exact 0, so the column lines up with the
    spectrum of the full generator.
    """
    w = spectrum_report(red).eigenvalues + red.alpha
    if red.alpha > 0:
        w = w[np.abs(w) > 1e-2 * red.alpha]
    w = w[np.argsort(np.abs(w), kind="stable")]
    return np.concatenate([[0.0], w[:k - 1]])


def cmd_verify_stability(args):
    bench, prep, run = _prepared_run(args)
    from .balancing import verify_stability

    rows = {"d": [], "max_re_A11": [], "max_re_A22": [], "max_re_schur": [], "threshold": [],
            "stable": [], "cluster_warning": []}
    failures = 0
    for d in args.d:
        rep = verify_stability(run.balanced, d)
        failures += not rep.stable
        for key, val in [("d", d), ("max_re_A11", rep.max_re_A11),
                         ("max_re_A22", rep.max_re_A22), ("max_re_schur", rep.max_re_schur),
                         ("threshold", rep.threshold), ("stable", int(rep.stable)),
                         ("cluster_warning", int(rep.cluster_warning))]:
            rows[key].append(val)
        print(f"d={d}: A11 {rep.max_re_A11:.3e}  A22 {rep.max_re_A22:.3e}  "
              f"Schur {rep.max_re_schur:.3e}  {'stable' if rep.stable else 'UNSTABLE'}")
    if args.out:
        write_columns(pathlib.Path(args.out), rows)
        _write_manifest(_manifest_path(args.out), args, [args.out])
    return 0 if failures == 0 else 2


# -- parser -------------------------------------------------------------------------

def _add_prepare(p):
    p.add_argument("bundle", help="bundle written by 'build'")
    p.add_argument("--stabilize", choices=("project", "shift"), default="project")
    p.add_argument("--eta", type=float, default=None,
                   help="control scaling (default: 10 for fpe, 20 for lvne)")
    p.add_argument("--alpha", type=float, default=None, help="discount for --stabilize shift")


def _add_pulse(p):
    p.add_argument("--pulse", type=float, nargs=3, metavar=("A", "T0", "TAU"), required=True,
                   help="Gaussian pulse amplitude, centre and full width at half maximum")
    p.add_argument("--channel", type=int, default=0, help="input channel of the pulse")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--rtol", type=float, default=1e-8)
    p.add_argument("--atol", type=float, default=1e-10)


def make_parser():
    parser = _Parser(prog="bilinred", description="Model reduction of bilinear systems")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="assemble a benchmark into a bundle")
    p.add_argument("model", choices=("fpe", "lvne"))
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--beta", type=float, help="inverse temperature (fpe)")
    p.add_argument("--h", type=float, help="mesh size (fpe)")
    p.add_argument("--gamma", type=float, help="reference relaxation rate (lvne)")
    p.add_argument("--theta", type=float, help="temperature (lvne)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("reduce", help="reduce a benchmark bundle")
    _add_prepare(p)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--d", type=_int_list, required=True, help="comma-separated orders")
    p.add_argument("--init", choices=("bt", "random"), default="bt", help="B-IRKA start")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("simulate", help="simulate one bundle under a Gaussian pulse")
    p.add_argument("bundle")
    _add_pulse(p)
    p.add_argument("--out", required=True, help="CSV file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("populations", help="full versus reduced trajectories")
    p.add_argument("reduced", help="directory written by 'reduce'")
    _add_pulse(p)
    p.add_argument("--out", required=True, help="CSV file")
    p.set_defaults(func=cmd_populations)

    p = sub.add_parser("spectrum", help="smallest-magnitude eigenvalues of A")
    p.add_argument("bundle")
    p.add_argument("--k", type=int, default=12)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("h2curve", help="H2 error versus reduced order")
    _add_prepare(p)
    p.add_argument("--methods", type=lambda s: s.split(","), default=["bt", "sp", "h2"])
    p.add_argument("--d", type=_int_list, required=True)
    p.add_argument("--route", choices=("exact", "trace"), default="exact")
    p.add_argument("--init", choices=("bt", "random"), default="bt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_h2curve)

    p = sub.add_parser("table1", help="smallest eigenvalues of full and reduced generators")
    _add_prepare(p)
    p.add_argument("--methods", type=lambda s: s.split(","), default=["bt", "h2"])
    p.add_argument("--d", type=_int_list, default=list(TABLE1_ORDERS))
    p.add_argument("--init", choices=("bt", "random"), default="bt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("verify-stability", help="check the blocks of the balanced system")
    _add_prepare(p)
    p.add_argument("--d", type=_int_list, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_stability)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for name in ("methods",):
        for m in getattr(args, name, None) or []:
            if m not in METHODS:
                parser.error(f"--{name}: unknown method {m!r}")
    t = time.perf_counter()
    try:
        code = args.func(args)
    except np.linalg.LinAlgError as exc:
        print(f"bilinred: numerical failure: {exc}", file=_sys.stderr)
        return 2
    except (InputError, ValueError, FileNotFoundError) as exc:
        print(f"bilinred: error: {exc}", file=_sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"bilinred: numerical failure: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return 2
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t)
    return code


if __name__ == "__main__":
    _sys.exit(main())
