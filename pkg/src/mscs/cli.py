"""Command-line entry point: ``mscs <command> ...``.

Exit status is 0 on success, 2 on bad flags or arguments, 1 on any other
failure.  Output is deterministic: every random draw is seeded and floats
are printed with ``repr`` so CSV and JSON round-trip exactly.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Sequence

from .ctxmask import MaskError, four_adjacency_count, stage_mask
from .gaussfield import DEFAULT_RHO, DEFAULT_SIGMA2, FieldModel, OrderScore, sample_field
from .latgrid import LatentDims, OrderError, format_order, pad_image_dims, parse_order, raster_order
from .mscodec import REPORT_FIELDS, CodecError, CodecMode, encode, measure_rates, quantize
from .ordersearch import (
    SearchError,
    branch_and_bound_search,
    dp_search,
    exhaustive_search,
    score_order,
)
from .parsim import (
    LatencyModel,
    ScheduleError,
    build_schedule,
    fit_overhead,
    parse_schedule_mode,
    read_fit_table,
    simulate_latency,
)

ORDER_FIELDS = ("order", "total_bits", "per_stage_bits", "method", "sigma2", "rho", "cov")
SIMULATE_FIELDS = ("mode", "height", "width", "num_stages", "positions_per_stage", "lanes", "t0", "t1", "latency")
FIT_FIELDS = (
    "mode", "height", "width", "measured", "predicted", "residual", "relative_residual",
    "lanes", "t0", "t1", "weighting",
)
PAD_FIELDS = ("n", "height", "width", "padded_height", "padded_width", "overhead")

USAGE_ERRORS = (OrderError, MaskError, CodecError, ScheduleError, SearchError, ValueError)

EPILOG = f"""\
CSV columns
  orders:           {",".join(ORDER_FIELDS)}
  codec bench:      {",".join(REPORT_FIELDS)}
  simulate:         {",".join(SIMULATE_FIELDS)}
  simulate --fit-table: {",".join(FIT_FIELDS)}
  pad:              {",".join(PAD_FIELDS)}
per_stage_bits is ';'-joined.  JSON output carries the same fields.
MSCS_THREADS caps worker processes (0 or unset = one per CPU).
"""


class UsageError(ValueError):
    pass


def _workers() -> int:
    raw = os.environ.get("MSCS_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MSCS_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("MSCS_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def _model(args) -> FieldModel:
    return FieldModel(args.sigma2, args.rho, args.cov)


def _emit(rows: list[dict], fields: Sequence[str], fmt: str, out) -> None:
    if fmt == "json":
        out.write(json.dumps([{k: r[k] for k in fields} for r in rows], indent=2) + "\n")
        return
    if fmt == "text":
        for r in rows:
            out.write("  ".join(f"{k}={r[k]}" for k in fields) + "\n")
        return
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in fields})
    out.write(buf.getvalue())


def _score_row(s: OrderScore, method: str, args) -> dict:
    return {
        "order": format_order(s.order),
        "total_bits": s.total_bits_per_position,
        "per_stage_bits": ";".join(repr(b) for b in s.per_stage_bits),
        "method": method,
        "sigma2": args.sigma2,
        "rho": args.rho,
        "cov": args.cov,
    }


# --- orders ---------------------------------------------------------------


def cmd_orders(args, out) -> int:
    model = _model(args)
    if args.action == "score":
        if not args.order:
            raise UsageError("orders score needs --order")
        order = parse_order(args.order)
        if args.n is not None and args.n != order.n:
            raise UsageError(f"--order has {order.n * order.n} digits but --n is {args.n}")
        rows = [_score_row(score_order(order, model), "score", args)]
    elif args.action == "enumerate":
        n = args.n or 2
        if n > 3:
            raise UsageError("enumerate is limited to n <= 3; use 'orders optimize'")
        scores = exhaustive_search(n, model, worst=args.worst, allow_n3=args.allow_n3)
        rows = [_score_row(s, "exhaustive", args) for s in scores]
    else:
        n = args.n or 2
        if args.method == "exhaustive":
            best = exhaustive_search(n, model, worst=args.worst, allow_n3=args.allow_n3)[0]
        elif args.method == "dfs":
            if args.worst:
                raise UsageError("the dfs method only minimizes; use --method dp for --worst")
            best = branch_and_bound_search(n, model).score
        else:
            best = dp_search(n, model, worst=args.worst).score
        rows = [_score_row(best, args.method, args)]
    _emit(rows, ORDER_FIELDS, args.format, out)
    return 0


# --- masks ----------------------------------------------------------------


def cmd_masks(args, out) -> int:
    order = parse_order(args.order) if args.order else raster_order(args.n or 2)
    if args.n is not None and args.n != order.n:
        raise UsageError(f"--order has {order.n * order.n} digits but --n is {args.n}")
    mask = stage_mask(order, args.stage)
    offsets = " ".join(f"({dy},{dx})" for dy, dx in mask.offsets()) or "none"
    out.write(f"order {format_order(order)} stage {args.stage}\n")
    out.write(mask.render() + "\n")
    out.write(f"available ({len(mask)}): {offsets}\n")
    out.write(f"four-adjacent: {four_adjacency_count(mask)}\n")
    return 0


# --- codec ----------------------------------------------------------------


def _resolve_order(choice: str, n: int, model: FieldModel):
    if choice == "raster":
        return raster_order(n)
    if choice in ("best", "worst"):
        return dp_search(n, model, worst=choice == "worst").score.order
    order = parse_order(choice)
    if order.n != n:
        raise UsageError(f"--order has {order.n * order.n} digits but --n is {n}")
    return order


def cmd_codec(args, out) -> int:
    if args.seeds_count < 1:
        raise UsageError("--seeds-count must be >= 1")
    model = _model(args)
    dims = LatentDims(args.height, args.width)
    if args.mode == "multistage":
        mode = CodecMode.multistage(_resolve_order(args.order, args.n, model))
    else:
        mode = CodecMode(args.mode)
    mode.check_dims(dims)
    seeds = range(args.seed, args.seed + args.seeds_count)
    reports = measure_rates(dims, model, [mode], seeds, verify=args.verify, workers=_workers())
    if args.out:
        bs = encode(quantize(sample_field(model, dims, args.seed), model), mode, model)
        with open(args.out, "wb") as fh:
            fh.write(bs.to_bytes())
    _emit([r.row() for r in reports], REPORT_FIELDS, args.report, out)
    if args.verify and any(r.round_trip != "ok" for r in reports):
        print("error: decoded grid differs from the input", file=sys.stderr)
        return 1
    return 0


# --- pad / simulate -------------------------------------------------------


def cmd_pad(args, out) -> int:
    ph, pw, overhead = pad_image_dims(args.height, args.width, args.n)
    row = {"n": args.n, "height": args.height, "width": args.width,
           "padded_height": ph, "padded_width": pw, "overhead": overhead}
    _emit([row], PAD_FIELDS, args.format, out)
    return 0


def cmd_simulate(args, out) -> int:
    if args.fit_table:
        if args.fit_table == "-":
            text = sys.stdin.read()
        else:
            with open(args.fit_table, encoding="utf-8") as fh:
                text = fh.read()
        fit = fit_overhead(read_fit_table(text), lanes=args.lanes, weighting=args.weighting)
        lm = fit.model
        table = read_fit_table(text)
        rows = [
            {"mode": lab, "height": d.height, "width": d.width, "measured": m, "predicted": p,
             "residual": r, "relative_residual": rr,
             "lanes": lm.lanes, "t0": lm.t0, "t1": lm.t1, "weighting": args.weighting}
            for lab, (_, d, _), m, p, r, rr in zip(
                fit.labels, table, fit.measured, fit.predicted, fit.residuals, fit.relative_residuals
            )
        ]
        _emit(rows, FIT_FIELDS, args.format, out)
        return 0
    mode = parse_schedule_mode(args.mode, args.n)
    sched = build_schedule(mode, LatentDims(args.height, args.width))
    lm = LatencyModel(args.lanes, args.t0, args.t1)
    per = sorted(set(sched.positions_per_stage))
    row = {
        "mode": mode.label, "height": args.height, "width": args.width,
        "num_stages": sched.num_stages,
        "positions_per_stage": ";".join(str(p) for p in per),
        "lanes": lm.lanes, "t0": lm.t0, "t1": lm.t1,
        "latency": simulate_latency(sched, lm),
    }
    _emit([row], SIMULATE_FIELDS, args.format, out)
    return 0


# --- parser ---------------------------------------------------------------


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sigma2", type=float, default=DEFAULT_SIGMA2, help="field variance (default 25)")
    p.add_argument("--rho", type=float, default=DEFAULT_RHO, help="per-step correlation (default 0.9)")
    p.add_argument("--cov", choices=("separable", "isotropic"), default="separable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mscs",
        description="Decoding-order search, context masks and a multistage latent codec.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("orders", help="score, rank or optimize within-patch decoding orders",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("action", choices=("enumerate", "optimize", "score"))
    p.add_argument("--n", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--order", help="hex order, one digit per cell in row-major order")
    p.add_argument("--worst", action="store_true", help="rank or optimize for the highest rate")
    p.add_argument("--method", choices=("dp", "dfs", "exhaustive"), default="dp")
    p.add_argument("--allow-n3", action="store_true", help="permit enumerating all 9! orders of n=3")
    p.add_argument("--format", choices=("csv", "json", "text"), default="csv")
    _model_flags(p)
    p.set_defaults(func=cmd_orders)

    p = sub.add_parser("masks", help="show the context mask of one stage")
    p.add_argument("action", choices=("show",))
    p.add_argument("--n", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--order", help="hex order (default: raster)")
    p.add_argument("--stage", type=int, required=True)
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("codec", help="encode sampled grids and report measured rates",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("action", choices=("bench",))
    p.add_argument("--mode", choices=("multistage", "checkerboard", "ar", "nocontext"), default="multistage")
    p.add_argument("--n", type=int, choices=(1, 2, 3, 4), default=4)
    p.add_argument("--order", default="best", help="hex order or one of best, worst, raster")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds-count", type=int, default=1)
    p.add_argument("--out", help="write the bitstream of the first seed here")
    p.add_argument("--report", choices=("csv", "json"), default="csv")
    p.add_argument("--verify", action="store_true", help="decode and compare before reporting")
    _model_flags(p)
    p.set_defaults(func=cmd_codec)

    p = sub.add_parser("pad", help="image padding needed for n x n latent patches")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--format", choices=("csv", "json", "text"), default="csv")
    p.set_defaults(func=cmd_pad)

    p = sub.add_parser("simulate", help="stage schedule and latency, or fit the latency model",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--mode", default="multistage",
                   help="ar, checkerboard, nocontext, multistage (with --n) or multistage:<n>")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--lanes", type=int, default=1024)
    p.add_argument("--t0", type=float, default=1.0, help="per-stage overhead")
    p.add_argument("--t1", type=float, default=0.001, help="per-position cost")
    p.add_argument("--fit-table", help="CSV with mode,height,width,latency ('-' for stdin)")
    p.add_argument("--weighting", choices=("absolute", "relative"), default="absolute")
    p.add_argument("--format", choices=("csv", "json", "text"), default="csv")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
