"""Command line front end: fit, export, simulate, report."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from typing import Optional, Sequence

import numpy as np

from .activations import ASYMPTOTE, FREE, SWEEP_FUNCTIONS, ActivationSpec
from .errors import (CapacityError, ConfigurationError, DivergedError, FlexSfuError, InvalidArgumentError,
                     InvalidInputError, NotReadyError)
from .fitter import FitterConfig, fit
from .formats import FP8_E4M3, FP16, FP32, decode, encode, parse_format
from .metrics import (SWEEP_COUNTS, compute_metrics, content_hash, improvement_per_doubling, records_to_csv,
                      report_json, soa_comparison, sweep_breakpoints, uniform_vs_nonuniform)
from .pwl import PwlModel
from .sfu import SfuState, build_lut_image, exe_af, load_all, perf_sweep, read_lut, write_lut

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_DIVERGED = 3
EXIT_CAPACITY = 4
EXIT_FORMAT = 5

_RAW_DTYPES = {8: "<u1", 16: "<u2", 32: "<u4"}
_PERF_FORMATS = {8: FP8_E4M3, 16: FP16, 32: FP32}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _Exit(EXIT_ARGS, f"{self.prog}: error: {message}")


class _Exit(Exception):
    def __init__(self, code, message=""):
        super().__init__(message)
        self.code = code


def _config(args) -> FitterConfig:
    extra = {}
    for name in ("lr", "max_inner_steps", "max_outer_iters"):
        val = getattr(args, name, None)
        if val is not None:
            extra[name] = val
    return FitterConfig(grid_points=args.grid, seed=args.seed, **extra)


def _write(path: Optional[str], text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_fit(args) -> int:
    spec = ActivationSpec.parse(args.fn)
    interval = tuple(args.interval) if args.interval else spec.default_interval
    if args.n < 2:
        raise InvalidArgumentError("--n must be at least 2")
    config = _config(args)
    model, report = fit(spec, interval, args.n, config, args.left_mode, args.right_mode)
    metrics = compute_metrics(model, spec, interval, config.grid_points)
    _write(args.out, model.to_json(indent=2, sort_keys=True) + "\n")
    body = report.to_dict()
    body.pop("wall_time")
    body.update(function=str(spec), interval=list(interval), n=args.n, seed=config.seed,
                config=asdict(config), metrics=metrics.to_dict(), model_hash=content_hash(model))
    report_path = args.report or (os.path.splitext(args.out)[0] + ".report.json")
    _write(report_path, _dump(body))
    print(f"{spec} n={args.n} mse={report.final_loss:.6e} -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_export(args) -> int:
    with open(args.model) as fh:
        model = PwlModel.from_json(fh.read())
    image = build_lut_image(model, parse_format(args.fmt), args.depth)
    write_lut(image, args.out)
    return EXIT_OK


def _read_input(path: str, fmt, kind: Optional[str]):
    kind = kind or ("csv" if path.endswith((".csv", ".txt")) else "raw")
    if kind == "csv":
        vals = []
        with open(path) as fh:
            for line in fh:
                for tok in line.replace(",", " ").split():
                    try:
                        vals.append(float(tok))
                    except ValueError:
                        raise InvalidInputError(f"not a number: {tok!r}") from None
        x = np.array(vals, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("input contains NaN or infinity")
        return encode(x, fmt), kind
    raw = np.fromfile(path, dtype=np.uint8)
    width = fmt.total_bits // 8
    if raw.size % width:
        raise ConfigurationError(f"raw input length {raw.size} is not a multiple of {width} bytes")
    return raw.view(_RAW_DTYPES[fmt.total_bits]).astype(np.int64), kind


def cmd_simulate(args) -> int:
    image = read_lut(args.lut)
    fmt = image.fmt
    if args.fmt and parse_format(args.fmt) != fmt:
        raise ConfigurationError(f"--fmt {args.fmt} does not match the image format {fmt}")
    x, kind = _read_input(args.input, fmt, args.input_format)
    state = SfuState(image.d, args.nc, args.clock_mhz)
    load_all(state, image)
    out, perf = exe_af(state, x, args.element_bits)
    if kind == "csv":
        y = decode(out, fmt)
        _write(args.out, "".join(f"{v!r}\n" for v in y.tolist()))
    else:
        with open(args.out, "wb") as fh:
            fh.write(out.astype(_RAW_DTYPES[fmt.total_bits]).tobytes())
    body = perf.to_dict()
    body.update(fmt=str(fmt), lut=os.path.basename(args.lut))
    _write(args.report or (os.path.splitext(args.out)[0] + ".perf.json"), _dump(body))
    return EXIT_OK


def _sizes(text: str) -> list[int]:
    if ".." in text:
        lo, hi = (int(t) for t in text.split(".."))
        out, s = [], lo
        while s <= hi:
            out.append(s)
            s *= 2
        return out
    return [int(t) for t in text.split(",")]


def cmd_report(args) -> int:
    config = _config(args)
    if args.study == "soa":
        rows = [r.record() for r in soa_comparison(config)]
    elif args.study == "sweep":
        names = [args.fn] if args.fn else list(SWEEP_FUNCTIONS)
        rows = []
        for name in names:
            spec = ActivationSpec.parse(name)
            interval = tuple(args.interval) if args.interval else spec.default_interval
            fits = sweep_breakpoints(spec, interval, args.counts, config)
            gm = improvement_per_doubling([f.mse for f in fits])
            for f in fits:
                rec = f.record()
                rec["improvement_per_doubling"] = gm
                rows.append(rec)
    elif args.study == "fig2":
        spec = ActivationSpec.parse(args.fn or "gelu")
        interval = tuple(args.interval) if args.interval else (-2.0, 2.0)
        n = args.n or 5
        mu, mf, ratio = uniform_vs_nonuniform(spec, interval, n, config)
        rows = [{"function": str(spec), "interval": list(interval), "n": n,
                 "mse_uniform": mu, "mse_fitted": mf, "ratio": ratio}]
    else:
        state = SfuState(args.depth, args.nc, args.clock_mhz)
        # timing does not depend on the table contents, an identity line will do
        line = PwlModel(p=[-1.0, 1.0], v=[-1.0, 1.0], m_l=1.0, m_r=1.0)
        load_all(state, build_lut_image(line, _PERF_FORMATS[args.bits], args.depth))
        rows = [r.to_dict() for r in perf_sweep(state, _sizes(args.sizes), args.bits)]
    if args.json:
        _write(args.out, report_json(rows, config if args.study != "perf" else None, study=args.study))
    else:
        _write(args.out, records_to_csv(rows))
    return EXIT_OK


def _add_fit_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=100_001, help="quadrature grid points")
    p.add_argument("--lr", type=float)
    p.add_argument("--max-inner-steps", type=int, dest="max_inner_steps")
    p.add_argument("--max-outer-iters", type=int, dest="max_outer_iters")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="flexsfu", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a PWL model")
    p.add_argument("--fn", required=True, help="function name, e.g. gelu or leaky_relu:0.02")
    p.add_argument("--interval", type=float, nargs=2, metavar=("A", "B"))
    p.add_argument("--n", type=int, required=True, help="breakpoint count")
    p.add_argument("--left-mode", choices=(ASYMPTOTE, FREE))
    p.add_argument("--right-mode", choices=(ASYMPTOTE, FREE))
    p.add_argument("--out", default="model.json")
    p.add_argument("--report")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("export", help="quantize a model into a LUT image")
    p.add_argument("--model", required=True)
    p.add_argument("--fmt", default="fp16")
    p.add_argument("--depth", type=int, default=32)
    p.add_argument("--out", default="lut.hex")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("simulate", help="run an input tensor through the SFU model")
    p.add_argument("--lut", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--input-format", choices=("csv", "raw"))
    p.add_argument("--fmt", help="expected element format; must match the image")
    p.add_argument("--element-bits", type=int, choices=(8, 16, 32))
    p.add_argument("--nc", type=int, default=1, help="SFU clusters")
    p.add_argument("--clock-mhz", type=float, default=600.0)
    p.add_argument("--out", default="out.csv")
    p.add_argument("--report")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="accuracy and timing studies as CSV or JSON")
    p.add_argument("study", choices=("soa", "sweep", "fig2", "perf"))
    p.add_argument("--fn")
    p.add_argument("--interval", type=float, nargs=2, metavar=("A", "B"))
    p.add_argument("--n", type=int)
    p.add_argument("--counts", type=int, nargs="+", default=list(SWEEP_COUNTS))
    p.add_argument("--sizes", default="2..8192", help="LO..HI (powers of two) or a comma list")
    p.add_argument("--bits", type=int, choices=(8, 16, 32), default=32)
    p.add_argument("--depth", type=int, default=64)
    p.add_argument("--nc", type=int, default=1)
    p.add_argument("--clock-mhz", type=float, default=600.0)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except _Exit as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except (InvalidInputError, ConfigurationError, NotReadyError) as exc:
        print(f"flexsfu: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except CapacityError as exc:
        print(f"flexsfu: capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except DivergedError as exc:
        print(f"flexsfu: fit diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidArgumentError, FlexSfuError, OSError, KeyError) as exc:
        print(f"flexsfu: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
