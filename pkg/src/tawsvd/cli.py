"""Command-line entry point: ``tawsvd gen-toy | compress | eval | verify | compare``.

Exit codes: 0 success, 1 numerical failure, 2 usage error, 3 IO/format error.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import logging
import shutil
import sys
import tempfile
from pathlib import Path

from . import io
from .calibration import CalibrationSet, CalibrationSource, generate_calibration
from .compressor import FactoredLayer, measured_loss
from .config import CompressionConfig
from .errors import FormatError, NumericalError, ShapeError
from .model import generate_toy_model, output_deviation
from .pipeline import COMPARE_METHODS, CompressionFailed, ExperimentConfig, compare_methods, compress_model, summarize
from .verify import DEFAULT_SIZES, parse_sizes, run_all

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
CALIB_NAME = "calib.lrt"

log = logging.getLogger("tawsvd")


class UsageError(Exception):
    pass


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def cmd_gen_toy(args) -> int:
    dims = args.dims or [args.width] * (args.depth + 1)
    if len(dims) != args.depth + 1:
        raise UsageError(f"--dims needs depth + 1 = {args.depth + 1} entries, got {len(dims)}")
    model = generate_toy_model(args.depth, dims, args.activation, args.seed)
    calib = generate_calibration(dims[0], args.calib_count, args.seed, args.calib_source)
    out = Path(args.out)
    # build next to the target and swap in, so a failed run leaves nothing half-written
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        io.save_model(model, staging, extra={
            "calibration": {"file": CALIB_NAME, "seed": args.seed, "source": calib.source.value,
                            "count": calib.count},
            "generator": {"depth": args.depth, "dims": dims, "seed": args.seed},
        })
        io.write_tensor(staging / CALIB_NAME, calib.inputs)
        if out.exists():
            shutil.rmtree(out)
        staging.rename(out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    print(f"wrote {args.depth}-layer model ({'x'.join(map(str, dims))}) and {calib.count} calibration "
          f"columns to {out}")
    return EXIT_OK


def _load_calibration(path, model_dir, seed) -> CalibrationSet:
    if path is None:
        path = Path(model_dir) / CALIB_NAME
    return CalibrationSet(io.read_tensor(path), seed, CalibrationSource.FILE)


def cmd_compress(args) -> int:
    model = io.load_model(args.model)
    calib = _load_calibration(args.calib, args.model, args.seed)
    if calib.dim != model.input_dim:
        raise UsageError(f"calibration has {calib.dim} rows, model expects {model.input_dim}")
    try:
        config = CompressionConfig(ratio=args.ratio, method=args.method, update=args.update,
                                   damping_rel=args.damping, ridge=args.ridge, seed=args.seed,
                                   calib_count=calib.count)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    report_path = Path(args.report) if args.report else out / "report.json"
    try:
        result = compress_model(model, calib, config)
    except CompressionFailed as exc:
        io.write_json(report_path, exc.report.to_dict())
        print(f"compression failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    io.save_model(result.model, out, extra={"compression": config.to_dict()})
    if args.dump_whitening:
        dump = Path(args.dump_whitening)
        for name, s in zip(model.names, result.whitenings):
            io.write_tensor(dump / f"{name}.whitening.lrt", s.s)
    report = result.report.to_dict()
    io.write_json(report_path, report)
    _print_report(report)
    return EXIT_OK


def _print_report(report) -> None:
    print(f"{'layer':<10}{'shape':>10}{'rank':>6}{'predicted':>13}{'measured':>13}{'eps':>10}  updated")
    for rec in report["layers"]:
        shape = f"{rec['out_dim']}x{rec['in_dim']}"
        pred = "-" if rec["predicted_loss"] is None else f"{rec['predicted_loss']:.6g}"
        meas = "-" if rec["measured_loss"] is None else f"{rec['measured_loss']:.6g}"
        print(f"{rec['name']:<10}{shape:>10}{rec['rank']:>6}{pred:>13}{meas:>13}"
              f"{rec['epsilon_used']:>10.2g}  {rec['updated']}")
    m = report["model"]
    print(f"params {m['param_count_before']} -> {m['param_count_after']}; "
          f"deviation calib={m['output_deviation_calib']:.4g} holdout={m['output_deviation_holdout']:.4g}; "
          f"cache ratio={m['cache_ratio']:.4g}")


def evaluate(original, compressed, calib_inputs, probe) -> dict:
    """Per-layer and end-to-end losses of ``compressed`` against ``original``."""
    if original.depth != compressed.depth:
        raise ShapeError(f"models differ in depth: {original.depth} vs {compressed.depth}")
    for i, (a, b) in enumerate(zip(original.layers, compressed.layers)):
        if (a.out_dim, a.in_dim) != (b.out_dim, b.in_dim):
            raise ShapeError(f"layer {i}: {a.out_dim}x{a.in_dim} vs {b.out_dim}x{b.in_dim}")
    xs = original.layer_inputs(calib_inputs)
    xs_drift = compressed.layer_inputs(calib_inputs)
    layers = []
    for i, (name, a, b) in enumerate(zip(original.names, original.layers, compressed.layers)):
        layers.append({
            "name": name,
            "rank": b.rank if isinstance(b, FactoredLayer) else min(b.out_dim, b.in_dim),
            "calib_loss": measured_loss(a.dense(), b.dense(), xs[i]),
            "propagated_loss": measured_loss(a.dense(), b.dense(), xs_drift[i]),
        })
    return {
        "layers": layers,
        "output_deviation_calib": output_deviation(original, compressed, calib_inputs),
        "output_deviation_holdout": output_deviation(original, compressed, probe),
    }


def cmd_eval(args) -> int:
    original = io.load_model(args.original)
    compressed = io.load_model(args.compressed)
    calib = _load_calibration(args.calib, args.original, 0)
    count = args.probe_count or calib.count
    probe = generate_calibration(original.input_dim, count, args.probe_seed).inputs
    res = evaluate(original, compressed, calib.inputs, probe)
    if args.json:
        io.write_json(args.json, res)
    print(f"{'layer':<10}{'rank':>6}{'calib loss':>14}{'propagated':>14}")
    for rec in res["layers"]:
        print(f"{rec['name']:<10}{rec['rank']:>6}{rec['calib_loss']:>14.6g}{rec['propagated_loss']:>14.6g}")
    print(f"end-to-end deviation: calib={res['output_deviation_calib']:.6g} "
          f"holdout={res['output_deviation_holdout']:.6g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    sizes = parse_sizes(args.sizes) if args.sizes else DEFAULT_SIZES
    results = run_all(args.seed, sizes, whiten=not args.disable_whitening)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_compare(args) -> int:
    cfg = ExperimentConfig(depth=args.depth, width=args.width, activation=args.activation,
                           ratios=args.ratios, calib_count=args.calib_count,
                           calib_source=args.calib_source, seed=args.seed)
    rows = compare_methods(cfg, args.trials, tuple(args.methods))
    if args.csv:
        buf = _io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        Path(args.csv).write_text(buf.getvalue())
    print(f"{'ratio':>6} {'method':<12}{'trials':>7}{'calib loss':>13}{'propagated':>13}"
          f"{'dev calib':>11}{'dev holdout':>13}")
    for s in summarize(rows):
        print(f"{s['ratio']:>6.2f} {s['method']:<12}{s['trials']:>7}{s['median_calib_loss']:>13.5g}"
              f"{s['median_propagated_loss']:>13.5g}{s['median_deviation_calib']:>11.4f}"
              f"{s['median_deviation_holdout']:>13.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tawsvd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-toy", help="write a seeded toy model and calibration set")
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--dims", type=_int_list, default=None, help="comma-separated layer widths (depth + 1)")
    g.add_argument("--width", type=int, default=32, help="uniform width when --dims is absent")
    g.add_argument("--activation", choices=["identity", "relu", "tanh"], default="relu")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--calib-count", type=int, default=256)
    g.add_argument("--calib-source", choices=["synthetic-gaussian", "synthetic-heavytail"],
                   default="synthetic-gaussian")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_toy)

    c = sub.add_parser("compress", help="compress a model directory")
    c.add_argument("--model", required=True)
    c.add_argument("--calib", default=None, help="calibration tensor (default: MODEL/calib.lrt)")
    c.add_argument("--ratio", type=float, required=True)
    c.add_argument("--method", choices=["svd", "asvd", "svdllm"], default="svdllm")
    c.add_argument("--update", choices=["auto", "on", "off"], default="auto")
    c.add_argument("--damping", type=float, default=1e-6)
    c.add_argument("--ridge", type=float, default=0.0)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--report", default=None, help="report path (default: OUT/report.json)")
    c.add_argument("--dump-whitening", default=None, metavar="DIR")
    c.set_defaults(func=cmd_compress)

    e = sub.add_parser("eval", help="compare a compressed model against the original")
    e.add_argument("--original", required=True)
    e.add_argument("--compressed", required=True)
    e.add_argument("--calib", default=None)
    e.add_argument("--probe-seed", type=int, default=1)
    e.add_argument("--probe-count", type=int, default=None)
    e.add_argument("--json", default=None, help="also write the results as JSON")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the invariant battery")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--sizes", default=None, help="e.g. 2x3,8x5,32x64")
    v.add_argument("--disable-whitening", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    k = sub.add_parser("compare", help="seeded sweep over methods and ratios")
    k.add_argument("--depth", type=int, default=3)
    k.add_argument("--width", type=int, default=32)
    k.add_argument("--activation", choices=["identity", "relu", "tanh"], default="relu")
    k.add_argument("--ratios", type=_float_list, default=(0.2, 0.4, 0.6))
    k.add_argument("--methods", nargs="+", choices=COMPARE_METHODS, default=list(COMPARE_METHODS))
    k.add_argument("--trials", type=int, default=5)
    k.add_argument("--calib-count", type=int, default=256)
    k.add_argument("--calib-source", choices=["synthetic-gaussian", "synthetic-heavytail"],
                   default="synthetic-gaussian")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--csv", default=None)
    k.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (FormatError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
