"""Command line interface.

    kinsurf synth --shape bent-helix --noise 0.005 --out helix.xyzn
    kinsurf fit --in helix.xyzn --order 2 --report fit.json
    kinsurf coreline --report fit.json --out core.vtk
    kinsurf classify --in fit.json

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import formats
from .errors import DataError, IoError, KinsurfError
from .features import CoreLineConfig, ParallelMode, default_bounds, extract_core_lines, projection_metric
from .field import Order, streamline_integrate
from .fitting import FitConfig, fit
from .report import dumps, load_report, params_from_dict, report_to_dict
from .synthetic import ShapeKind, ShapeSpec, generate, merge_with_outlier

log = logging.getLogger("kinsurf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _vector(n):
    def parse(text):
        try:
            vals = [float(x) for x in text.split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers") from None
        if len(vals) != n or not np.all(np.isfinite(vals)):
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers")
        return vals
    return parse


def _key_value(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError("expected key=value")
    try:
        return key, float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    p = _Parser(prog="kinsurf", description="Kinematic surface fitting for oriented point clouds.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", parents=[common], help="fit a first- or second-order field")
    f.add_argument("--in", dest="input", default="-", help="cloud file, '-' for stdin")
    f.add_argument("--format", choices=[c.value for c in formats.CloudFormat])
    f.add_argument("--order", type=int, choices=(1, 2), default=2)
    f.add_argument("--robust", action="store_true", help="Student-t reweighting")
    f.add_argument("--wp", type=float, default=0.001, help="gradient weight w_p")
    f.add_argument("--iters", type=int, default=15)
    f.add_argument("--report", default="-", help="JSON report path, '-' for stdout")
    f.add_argument("--weights-out", help="write one weight z_i per line")

    s = sub.add_parser("streamline", parents=[common], help="trace a streamline of a fitted field")
    s.add_argument("--report", required=True)
    seed = s.add_mutually_exclusive_group(required=True)
    seed.add_argument("--seed", type=_vector(3), help="x,y,z in input units")
    seed.add_argument("--slab", type=_vector(6), help="px,py,pz,nx,ny,nz: seed at a cross-section centroid")
    s.add_argument("--in", dest="input", help="cloud for --slab")
    s.add_argument("--thickness", type=float, help="slab thickness in input units")
    s.add_argument("--step", type=float, default=0.01)
    s.add_argument("--steps", type=int, default=5000)
    s.add_argument("--out", required=True, help="polyline file (legacy VTK)")

    c = sub.add_parser("coreline", parents=[common], help="extract core lines of a fitted field")
    c.add_argument("--report", required=True)
    c.add_argument("--mode", choices=[m.value for m in ParallelMode], default=ParallelMode.HIGHER_ORDER.value)
    c.add_argument("--res", type=int, default=64)
    c.add_argument("--strength", type=float, default=1e-3, help="minimum mean swirl strength")
    c.add_argument("--min-length", type=float, default=0.0, help="minimum arc length in input units")
    c.add_argument("--bounds", type=_vector(6), help="lox,loy,loz,hix,hiy,hiz in input units")
    c.add_argument("--out", required=True)

    y = sub.add_parser("synth", parents=[common], help="write a synthetic oriented point cloud")
    y.add_argument("--shape", required=True, choices=[k.value for k in ShapeKind])
    y.add_argument("--samples", type=int, default=4000)
    y.add_argument("--noise", type=float, default=0.0)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--param", type=_key_value, action="append", default=[], help="geometry override key=value")
    y.add_argument("--center", type=_vector(3), default=[0.0, 0.0, 0.0])
    y.add_argument("--axis", type=_vector(3), default=[0.0, 0.0, 1.0])
    y.add_argument("--outlier-samples", type=int, default=0, help="add a cylindrical outlier cluster")
    y.add_argument("--outlier-center", type=_vector(3), default=[0.5, 0.0, 1.5])
    y.add_argument("--outlier-axis", type=_vector(3), default=[0.0, 1.0, 0.0])
    y.add_argument("--outlier-radius", type=float, default=0.4)
    y.add_argument("--outlier-height", type=float, default=3.0)
    y.add_argument("--outlier-seed", type=int, default=7)
    y.add_argument("--format", choices=[c.value for c in formats.CloudFormat])
    y.add_argument("--labels-out", help="write 1 (base) / 0 (outlier) per point")
    y.add_argument("--out", default="-")

    k = sub.add_parser("classify", parents=[common], help="CSV of the projection of t on r (signed and absolute) per report")
    k.add_argument("--in", dest="inputs", nargs="+", required=True)
    k.add_argument("--out", default="-")
    return p


def _write(path, text):
    formats._write_text(path, text)


def _cmd_fit(args):
    cloud = formats.load_cloud(args.input, args.format)
    config = FitConfig(order=Order(args.order), w_p=args.wp, iterations=args.iters, robust=args.robust)
    report = fit(cloud, config)
    q = report.transform.apply(cloud.positions)
    _write(args.report, dumps(report_to_dict(report, (q.min(axis=0), q.max(axis=0)))))
    if args.weights_out:
        z = report.weights if report.weights is not None else np.ones(len(cloud))
        _write(args.weights_out, "".join(format(float(v), ".17g") + "\n" for v in z))
    log.info("rmse %.6g (order %d)", report.rmse, args.order)


def _field_box(d, margin):
    b = d.get("bounds")
    if b is None:
        return (-2.0 * np.ones(3), 2.0 * np.ones(3))
    return default_bounds(np.array([b["lo"], b["hi"]]), margin)


def _cmd_streamline(args):
    d = load_report(args.report)
    params, tr = params_from_dict(d)
    if args.slab is not None:
        if not args.input:
            raise UsageError("--slab needs --in")
        cloud = formats.load_cloud(args.input)
        seed = formats.select_seed(cloud, args.slab[:3], args.slab[3:], args.thickness)
    else:
        seed = np.array(args.seed)
    line = streamline_integrate(params, tr.apply(seed), args.step, args.steps, bounds=_field_box(d, 1.5))
    log.info("streamline: %d points, halt=%s", len(line), line.meta["halt"])
    formats.export_polylines([line], args.out, tr)


def _cmd_coreline(args):
    d = load_report(args.report)
    params, tr = params_from_dict(d)
    if args.bounds is not None:
        bounds = (tr.apply(args.bounds[:3]), tr.apply(args.bounds[3:]))
    else:
        bounds = _field_box(d, 0.25)
    config = CoreLineConfig(
        bounds=bounds,
        grid_resolution=args.res,
        strength_threshold=args.strength,
        min_length=args.min_length / tr.scale,
        mode=args.mode,
    )
    lines = extract_core_lines(params, config)
    log.info("%d core lines", len(lines))
    if not lines:
        raise DataError("no core lines found (try lowering --strength or --min-length)")
    formats.export_polylines(lines, args.out, tr)


def _cmd_synth(args):
    spec = ShapeSpec(args.shape, args.samples, args.noise, args.seed, dict(args.param),
                     tuple(args.center), tuple(args.axis))
    cloud = generate(spec)
    if args.outlier_samples:
        out = generate(ShapeSpec(
            ShapeKind.CYLINDER_OUTLIER, args.outlier_samples, args.noise, args.outlier_seed,
            {"radius": args.outlier_radius, "height": args.outlier_height},
            tuple(args.outlier_center), tuple(args.outlier_axis),
        ))
        cloud = merge_with_outlier(cloud, out)
    fmt = args.format or (None if args.out != "-" else formats.CloudFormat.XYZN)
    formats.save_cloud(cloud, args.out, fmt)
    if args.labels_out:
        labels = cloud.labels if cloud.labels is not None else np.ones(len(cloud), bool)
        _write(args.labels_out, "".join(f"{int(v)}\n" for v in labels))


def _cmd_classify(args):
    rows = ["report,order,proj_r_t,abs_proj_r_t\n"]
    for path in args.inputs:
        params, _ = params_from_dict(load_report(path))
        value = float(projection_metric(params.as_second())) + 0.0
        rows.append(f"{path},{int(params.order)},{value!r},{abs(value)!r}\n")
    _write(args.out, "".join(rows))


_COMMANDS = {
    "fit": _cmd_fit,
    "streamline": _cmd_streamline,
    "coreline": _cmd_coreline,
    "synth": _cmd_synth,
    "classify": _cmd_classify,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="kinsurf: %(message)s", stream=sys.stderr)
    try:
        _COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        # ValueError here comes from option validation in the config types
        print(f"kinsurf {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, IoError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"kinsurf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KinsurfError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"kinsurf {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
