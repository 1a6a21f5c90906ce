"""Command-line entry point: ``psilvm <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Diagnostics go to stderr; results go to the run directory only.
"""
import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio
from . import kernels as kern
from .errors import ConfigError, NotPositiveDefinite, OptimizerDiverged, OrderTooLarge, PsilvmError
from .evalkit import bench_csv_lines, bench_psi
from .expectation import GH_CAP, eval_budget, parse_scheme
from .gauss import DiagGaussian
from .psi import CSV_HEADER, LatentBatch, psi_analytic, psi_error_report

log = logging.getLogger("psilvm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("bench-psi", "psi-check", "dimred", "freesim", "predict")


def _keys_epilog():
    width = max(len(k) for k in dataio.DEFAULTS)
    lines = ["config keys (set with --set key=value or in a --config file):"]
    lines += [f"  {k.ljust(width)}  default: {v if v != '' else '(empty)'}" for k, v in dataio.DEFAULTS.items()]
    return "\n".join(lines)


def _parse_dims(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out or min(out) < 1:
        raise ConfigError(f"bad dimension list {text!r}")
    return out


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="random seed (overrides the seed key)")
    common.add_argument("--out", default="runs", help="root directory for run folders (default: runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="psilvm", description="Bayesian GPLVM with quadrature psi-statistics",
                                     epilog=_keys_epilog(), formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench-psi", parents=[common], epilog=_keys_epilog(), formatter_class=fmt,
                       help="time psi-statistics per scheme and latent dimension")
    p.add_argument("--schemes", default="ut,gh:2,mc:200")
    p.add_argument("--dims", default="1..12", help="e.g. 1..12 or 2,4,8")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--psi2", action="store_true", help="include Psi2 in the timing")

    p = sub.add_parser("psi-check", parents=[common], epilog=_keys_epilog(), formatter_class=fmt,
                       help="psi-statistic errors of each scheme against the RBF closed form")
    p.add_argument("--schemes", default="ut,gh:2,gh:5,gh:10,mc:200")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--latent-var", type=float, default=1.0)

    sub.add_parser("dimred", parents=[common], epilog=_keys_epilog(), formatter_class=fmt,
                   help="fit a GPLVM and score 1-NN accuracy on the two most relevant latent dimensions")
    sub.add_parser("freesim", parents=[common], epilog=_keys_epilog(), formatter_class=fmt,
                   help="GP-NARX fit and free simulation of a monthly series")

    p = sub.add_parser("predict", parents=[common], epilog=_keys_epilog(), formatter_class=fmt,
                       help="predict from a saved model at (optionally uncertain) test inputs")
    p.add_argument("--model", required=True, help="model JSON written by dimred")
    p.add_argument("--inputs", required=True, help="CSV of test input means")
    p.add_argument("--input-var", type=float, default=0.0, help="diagonal input variance (0 = certain)")
    return parser


def _config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return dataio.build_config(args.config, overrides)


def _finish(run_dir, manifest, t0, status="ok"):
    manifest.wall_time = time.perf_counter() - t0
    manifest.finished = dataio.now_stamp()
    manifest.status = status
    manifest.write(run_dir)
    print(run_dir, file=sys.stderr)


def cmd_bench_psi(args, cfg):
    schemes = [parse_scheme(s) for s in args.schemes.split(",") if s.strip()]
    dims = _parse_dims(args.dims)
    for s in schemes:
        if s.kind == "analytic":
            raise ConfigError("bench-psi times quadrature schemes only")
        for d in dims:
            if s.kind == "gh" and eval_budget(s, d) > GH_CAP:
                log.warning("%s at D=%d exceeds the %d-point cap; row marked capped", s.tag, d, GH_CAP)
    rows = bench_psi(dims, [s.tag for s in schemes], repeats=args.repeats, seed=cfg["seed"], with_psi2=args.psi2)
    run_dir = dataio.make_run_dir(args.out, "bench-psi")
    (run_dir / "bench.csv").write_text("\n".join(bench_csv_lines(rows)) + "\n", encoding="utf-8")
    # eval counts are exact; timings are not reproducible and stay out of metrics.csv
    metrics = {f"eval_count.{r.scheme}.D{r.dim}": r.eval_count for r in rows}
    dataio.write_metrics(run_dir / "metrics.csv", metrics)
    return run_dir, metrics, ",".join(s.tag for s in schemes), ""


def cmd_psi_check(args, cfg):
    rng = np.random.default_rng(cfg["seed"])
    if args.n == 1 and args.m == 1:
        means, Z = np.zeros((1, args.dim)), np.zeros((1, args.dim))
    else:
        means, Z = rng.normal(size=(args.n, args.dim)), rng.normal(size=(args.m, args.dim))
    latent = LatentBatch(means, np.full_like(means, args.latent_var), Z)
    kernel = kern.rbf(args.dim)
    reference = psi_analytic(kernel, latent)
    lines, metrics = [CSV_HEADER], {}
    for s in args.schemes.split(","):
        scheme = parse_scheme(s)
        try:
            rep = psi_error_report(kernel, latent, scheme, reference)
        except OrderTooLarge as exc:
            log.warning("%s skipped: %s", scheme.tag, exc)
            continue
        lines.append(rep.csv_row())
        metrics.update({f"{rep.scheme}.psi0_err": rep.psi0_err, f"{rep.scheme}.psi1_err": rep.psi1_err,
                        f"{rep.scheme}.psi2_err": rep.psi2_err, f"{rep.scheme}.evals": rep.evals})
    run_dir = dataio.make_run_dir(args.out, "psi-check")
    (run_dir / "psi_errors.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    dataio.write_metrics(run_dir / "metrics.csv", metrics)
    return run_dir, metrics, args.schemes, ""


def cmd_dimred(args, cfg):
    from .experiments import load_labelled, run_dimred

    if not cfg["dataset.path"]:
        raise ConfigError("dimred needs dataset.path")
    try:
        ds = load_labelled(cfg)
    except FileNotFoundError as exc:
        raise ConfigError(f"dataset unavailable: {exc}") from None
    if ds.labels is None:
        raise ConfigError("dimred needs a labelled dataset")
    run_dir = dataio.make_run_dir(args.out, "dimred")
    args._run_dir, args._dataset_hash = run_dir, ds.content_hash
    res = run_dimred(ds.features, ds.labels, cfg)
    dataio.write_matrix(run_dir / "latent.csv", res.latent2, labels=res.labels)
    if res.trace:
        dataio.write_csv(run_dir / "trace.csv", ["iter", "elbo", "grad_norm", "wall_time"],
                         [(r["iter"], r["elbo"], r["grad_norm"], r["wall_time"]) for r in res.trace])
    if res.model is not None:
        dataio.save_model(run_dir / "model.json", res.model)
    metrics = res.metrics()
    dataio.write_metrics(run_dir / "metrics.csv", metrics)
    return run_dir, metrics, cfg["scheme"], ds.content_hash


def cmd_freesim(args, cfg):
    from .experiments import run_freesim

    try:
        ds = dataio.load_series(cfg["dataset.path"] or None)
    except FileNotFoundError as exc:
        raise ConfigError(f"dataset unavailable: {exc}") from None
    run_dir = dataio.make_run_dir(args.out, "freesim")
    args._run_dir, args._dataset_hash = run_dir, ds.content_hash
    res = run_freesim(ds.series, cfg)
    res.trace.write_csv(run_dir / "forecast.csv")
    dataio.write_metrics(run_dir / "metrics.csv", res.metrics)
    return run_dir, res.metrics, cfg["scheme"], ds.content_hash


def cmd_predict(args, cfg):
    from .gplvm import Posterior, predict_certain, predict_uncertain

    try:
        model = dataio.load_model(args.model)
        ds = dataio.load_csv_features(args.inputs)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    X = ds.features
    if X.shape[1] != model.latent_dim:
        raise ConfigError(f"inputs have {X.shape[1]} columns, model expects {model.latent_dim}")
    post = Posterior(model)
    means, variances = [], []
    for row in X:
        if args.input_var > 0:
            pred = predict_uncertain(model, DiagGaussian(row, np.full(row.size, args.input_var)), post)
        else:
            pred = predict_certain(model, row, post)
        means.append(np.ravel(pred.mean))
        variances.append(np.ravel(pred.var))
    run_dir = dataio.make_run_dir(args.out, "predict")
    M, V = np.array(means), np.array(variances)
    dy = M.shape[1]
    header = [f"mean{j}" for j in range(dy)] + [f"var{j}" for j in range(V.shape[1])]
    dataio.write_csv(run_dir / "predictions.csv", header, np.hstack([M, V]).tolist())
    metrics = {"n": int(X.shape[0]), "mean_var": float(np.mean(V))}
    dataio.write_metrics(run_dir / "metrics.csv", metrics)
    return run_dir, metrics, model.scheme.tag, ds.content_hash


HANDLERS = {"bench-psi": cmd_bench_psi, "psi-check": cmd_psi_check, "dimred": cmd_dimred,
            "freesim": cmd_freesim, "predict": cmd_predict}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    started = dataio.now_stamp()
    try:
        cfg = _config(args)
        run_dir, metrics, scheme, dhash = HANDLERS[args.command](args, cfg)
    except (ConfigError, OrderTooLarge) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OptimizerDiverged, NotPositiveDefinite, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        run_dir = getattr(args, "_run_dir", None)
        if run_dir is not None:
            manifest = dataio.RunManifest(args.command, cfg, cfg["seed"], cfg["scheme"],
                                          getattr(args, "_dataset_hash", ""), started=started)
            _finish(run_dir, manifest, t0, status=f"failed: {exc}")
        return EXIT_NUMERIC
    except (PsilvmError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = dataio.RunManifest(args.command, cfg, cfg["seed"], scheme, dhash, metrics=metrics, started=started)
    _finish(Path(run_dir), manifest, t0)
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
