"""Command-line entry point: ``pathsplit <subcommand> [options]``.

Settings are resolved as built-in defaults < ``--config`` file < flags.
Verification subcommands exit with 0 (pass), 1 (statistical failure) or
2 (failure of an exact identity).
"""

import argparse
import json
import sys

import numpy as np

from .brownian import StepIncrement, dump_increments, sample_increment, stream_for
from .config import experiment_from_values, load_config
from .errors import PathSplitError
from .harness import (THREADS_ENV, build_model, convergence_study, error_ratio_study,
                      write_atomic)
from .paths import PathKind, verify_conditions
from .solvers import OdeSubstepConfig, SchemeSpec, simulate
from .verify import verify_brownian, verify_estimators, verify_moments

EXIT_OK, EXIT_STAT, EXIT_EXACT = 0, 1, 2


def _kv(text):
    key, sep, val = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key.strip(), val.strip()


def _common(p):
    g = p.add_argument_group("experiment")
    g.add_argument("--config", metavar="FILE", help="flat key = value settings file")
    g.add_argument("--model", help="oscillator, linear, cir, fhn, uld, uld-logistic")
    g.add_argument("--param", metavar="KEY=VALUE", type=_kv, action="append", default=[],
                   help="model parameter (repeatable), same as model.KEY in a config file")
    g.add_argument("--scheme", help="scheme name, e.g. shifted-ralston, cir-splitting, sort")
    g.add_argument("--path-kind", help="splitting path for path-splitting / shifted-ralston")
    g.add_argument("--T", type=float, help="time horizon")
    g.add_argument("--N", help="step counts: '8,16,32' or '2^3..2^8'")
    g.add_argument("--fine-factor", type=int, help="fine steps per coarse step (power of two, >= 16)")
    g.add_argument("--paths", type=lambda v: int(float(v)), metavar="M", help="Monte Carlo paths")
    g.add_argument("--seed", type=int)
    g.add_argument("--batch-size", type=int, help="paths per RNG batch (changes the random streams)")
    g.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    g.add_argument("--y0", help="initial state, comma separated")
    g.add_argument("--out", metavar="FILE", help="write the report here (atomically)")
    g.add_argument("--format", choices=("csv", "json"))
    g.add_argument("--tol", metavar="NAME=VALUE", type=_kv, action="append", default=[])
    g.add_argument("--debug", action="store_true", default=None, help="check coupling invariants")


def build_parser():
    parser = argparse.ArgumentParser(prog="pathsplit",
                                     description="Path-based splitting schemes for SDEs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate endpoints or trajectories")
    _common(p)
    p.add_argument("--trajectory", action="store_true", help="write every step, not just endpoints")
    p.add_argument("--dump-increments", metavar="FILE", help="also save the Brownian increments")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("convergence", help="strong error S_N against N and fitted order")
    _common(p)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("ratio", help="paired error ratio S_N(a) / S_N(b)")
    _common(p)
    p.add_argument("--scheme-b", help="denominator scheme")
    p.add_argument("--path-kind-b")
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("verify-paths", help="iterated-integral conditions of splitting paths")
    _common(p)
    p.add_argument("--samples", type=lambda v: int(float(v)), help="increments (default 1e5)")
    p.add_argument("--h", type=float, help="step size (default 0.37)")
    p.add_argument("--dim", type=int, help="noise dimension (default 1)")
    p.add_argument("kinds", nargs="*", help="path kinds (default all)")
    p.set_defaults(func=cmd_verify_paths)

    p = sub.add_parser("verify-estimators", help="conditional estimator invariants")
    _common(p)
    p.add_argument("--samples", type=lambda v: int(float(v)), help="scaled samples (default 1e6)")
    p.add_argument("--oracle-paths", type=lambda v: int(float(v)), help="fine paths (default 2e4)")
    p.add_argument("--substeps", type=int, help="sub-steps per oracle path (default 4096)")
    p.set_defaults(func=cmd_verify_estimators)

    p = sub.add_parser("verify-moments", help="CIR one-step moments against closed forms")
    _common(p)
    p.add_argument("--samples", type=lambda v: int(float(v)), help="Monte Carlo samples (default 1e7)")
    p.add_argument("--h", type=float, help="step size (default 0.1)")
    p.set_defaults(func=cmd_verify_moments)

    p = sub.add_parser("verify-brownian", help="Brownian step sampler and dyadic tree checks")
    _common(p)
    p.add_argument("--samples", type=lambda v: int(float(v)), help="samples (default 1e6)")
    p.add_argument("--oracle-paths", type=lambda v: int(float(v)), help="fine paths (default 0)")
    p.add_argument("--substeps", type=int, help="sub-steps per oracle path (default 4096)")
    p.set_defaults(func=cmd_verify_brownian)
    return parser


_FLAG_KEYS = ("model", "scheme", "scheme_b", "path_kind", "path_kind_b", "T", "N", "fine_factor",
              "paths", "seed", "batch_size", "threads", "y0", "out", "format", "debug",
              "samples", "h", "dim", "oracle_paths", "substeps")


def resolve(args):
    """Merge config file values with command-line flags (flags win)."""
    values = load_config(args.config) if args.config else {}
    for key in _FLAG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    for k, v in args.param:
        values["model." + k] = v
    for k, v in args.tol:
        values["tol." + k] = v
    return values


def _emit(text, out):
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _report_rows_csv(results):
    lines = ["check,category,value,tolerance,passed,expected"]
    for r in results:
        lines.append(f"\"{r.name}\",{r.category},{r.value!r},{r.tolerance!r},{r.passed},{r.expected}")
    return "\n".join(lines) + "\n"


def _finish_verify(reports, values):
    for rep in reports:
        print(rep.title)
        print(rep.table())
        print()
    results = [r for rep in reports for r in rep.results]
    if values.get("out"):
        if values.get("format", "csv") == "json":
            body = [{"check": r.name, "category": r.category, "value": r.value,
                     "tolerance": r.tolerance, "passed": r.passed, "expected": r.expected,
                     "detail": r.detail} for r in results]
            write_atomic(values["out"], json.dumps(body, indent=2) + "\n")
        else:
            write_atomic(values["out"], _report_rows_csv(results))
    code = max(rep.exit_code() for rep in reports) if reports else EXIT_OK
    print("overall:", "PASS" if code == EXIT_OK else ("FAIL (statistical)" if code == EXIT_STAT
                                                      else "FAIL (exact identity)"))
    return code


def _get(values, key, conv, default):
    v = values.get(key)
    return default if v is None else conv(v)


def _num(conv):
    return lambda v: conv(float(v)) if isinstance(v, str) else conv(v)


# ---------------------------------------------------------------------------


def cmd_simulate(args):
    values = resolve(args)
    cfg = experiment_from_values(values)
    model, y0 = build_model(cfg.model, cfg.model_params)
    y0 = np.asarray(cfg.y0, dtype=float) if cfg.y0 is not None else y0
    N = int(cfg.N[0])
    h = cfg.T / N
    ode = OdeSubstepConfig(substeps=int(cfg.model_params.get("substeps", 1)))
    scheme = SchemeSpec(cfg.scheme, cfg.path_kind, ode).build(model)
    paths = int(cfg.paths) if "paths" in values else 1
    header = ["path"] + (["t"] if args.trajectory else []) + [f"y{i}" for i in range(model.dim_state)]
    lines = [",".join(header)]
    dumps = []
    for b, b0 in enumerate(range(0, paths, cfg.batch_size)):
        size = min(cfg.batch_size, paths - b0)

        def source(k, hh, b=b, size=size):
            inc = sample_increment(stream_for(cfg.seed, b, k, 0), hh, model.dim_noise,
                                   scheme.needs_k, size=size)
            if args.dump_increments:
                dumps.append((b0, k, inc))
            return inc

        y = np.broadcast_to(y0, (size, model.dim_state)).copy()
        res = simulate(model, scheme, y, cfg.T, N, source, trajectory=args.trajectory)
        if args.trajectory:
            _, traj = res
            for p in range(size):
                for k in range(N + 1):
                    row = [str(b0 + p), repr(k * h)] + [repr(float(v)) for v in traj[k, p]]
                    lines.append(",".join(row))
        else:
            for p in range(size):
                lines.append(",".join([str(b0 + p)] + [repr(float(v)) for v in res[p]]))
    if args.dump_increments:
        _dump(args.dump_increments, dumps)
    _emit("\n".join(lines) + "\n", cfg.out)
    return EXIT_OK


def _dump(path, dumps):
    # dumps holds (first path id, step, increment of shape (size, d)) in generation order
    by_batch = {}
    for b0, k, inc in dumps:
        by_batch.setdefault(b0, []).append(inc)
    parts = []
    for b0 in sorted(by_batch):
        steps = by_batch[b0]
        parts.append(StepIncrement(
            steps[0].h, np.stack([i.w for i in steps], axis=1), np.stack([i.hst for i in steps], axis=1),
            np.stack([i.n for i in steps], axis=1), None,
            np.stack([i.k for i in steps], axis=1) if steps[0].has_k else None))
    cat = StepIncrement(parts[0].h, *(np.concatenate([getattr(p, f) for p in parts])
                                      for f in ("w", "hst", "n")), None,
                        np.concatenate([p.k for p in parts]) if parts[0].has_k else None)
    dump_increments(path, cat)


def cmd_convergence(args):
    cfg = experiment_from_values(resolve(args))
    rep = convergence_study(cfg)
    print(f"{'N':>7s} {'h':>12s} {'S_N':>12s} {'stderr':>11s} {'M':>9s}", file=sys.stderr)
    for r in rep.rows:
        print(f"{r.N:7d} {r.h:12.5e} {r.S_N:12.5e} {r.stderr:11.3e} {r.M:9d}", file=sys.stderr)
    slope = "n/a" if rep.slope is None else f"{rep.slope:.4f} (residual {rep.residual:.3g})"
    print(f"slope: {slope}" + (f"  excluded N={rep.excluded}" if rep.excluded else "")
          + (f"  [{rep.flag}]" if rep.flag else ""), file=sys.stderr)
    _emit(rep.to_json() if cfg.format == "json" else rep.to_csv(), cfg.out)
    return EXIT_OK


def cmd_ratio(args):
    cfg = experiment_from_values(resolve(args))
    rep = error_ratio_study(cfg)
    for r in rep.rows:
        tag = "  unstable" if r.unstable else ""
        print(f"N={r.N:6d}  ratio {r.ratio:.4f} +- {r.ratio_stderr:.4f}  "
              f"({r.S_a:.4e} / {r.S_b:.4e}){tag}", file=sys.stderr)
    _emit(rep.to_json() if cfg.format == "json" else rep.to_csv(), cfg.out)
    return EXIT_OK


def cmd_verify_paths(args):
    values = resolve(args)
    kinds = [PathKind.parse(k) for k in args.kinds] or (
        [PathKind.parse(values["path_kind"])] if values.get("path_kind") else list(PathKind))
    samples = _get(values, "samples", _num(int), 100_000)
    h = _get(values, "h", float, 0.37)
    dim = _get(values, "dim", int, 1)
    seed = _get(values, "seed", int, 0)
    tol = {k[4:]: float(v) for k, v in values.items() if k.startswith("tol.")}
    reports = []
    for i, kind in enumerate(kinds):
        rep = verify_conditions(kind, samples, h, stream_for(seed, i, 0, 0), dim,
                                exact_tol=tol.get("exact", 1e-12), rel_tol=tol.get("relative", 1e-10),
                                nsig=tol.get("nsig", 4.0))
        rep.title = f"verify-paths {kind.value}: h = {h}, {samples} samples, d = {dim}"
        reports.append(rep)
    return _finish_verify(reports, values)


def cmd_verify_estimators(args):
    values = resolve(args)
    rep = verify_estimators(_get(values, "samples", _num(int), 1_000_000),
                            _get(values, "oracle_paths", _num(int), 20_000),
                            _get(values, "substeps", int, 4096), _get(values, "seed", int, 0),
                            float(values.get("tol.nsig", 4.0)))
    return _finish_verify([rep], values)


def cmd_verify_moments(args):
    values = resolve(args)
    mp = {k[6:]: float(v) for k, v in values.items() if k.startswith("model.")}
    y0 = values.get("y0")
    y0 = float(str(y0).split(",")[0]) if y0 is not None else mp.get("y0", 1.0)
    rep = verify_moments(mp.get("a", 1.0), mp.get("b", 1.0), mp.get("sigma", 1.0), y0,
                         _get(values, "h", float, 0.1), _get(values, "samples", _num(int), 10_000_000),
                         _get(values, "seed", int, 0), float(values.get("tol.nsig", 4.0)))
    return _finish_verify([rep], values)


def cmd_verify_brownian(args):
    values = resolve(args)
    rep = verify_brownian(_get(values, "samples", _num(int), 1_000_000), _get(values, "seed", int, 0),
                          _get(values, "oracle_paths", _num(int), 0), _get(values, "substeps", int, 4096),
                          float(values.get("tol.nsig", 4.0)))
    return _finish_verify([rep], values)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PathSplitError, OSError) as exc:
        print(f"pathsplit: error: {exc}", file=sys.stderr)
        return EXIT_EXACT


if __name__ == "__main__":
    sys.exit(main())
