"""Command line front end.

    rbm <experiment> --dim D --size L --band W --psi NAME --energy E \
        --eta X[,X2,...] --trials N --seed S --flow-time T --out DIR \
        --format csv|json [--config FILE] [--workers K]
    rbm rerun --manifest PATH [--out DIR] [--workers K]

Exit codes: 0 success, 2 validation error, 3 capacity error, 4 numeric
failure.  --config points at a flat key=value file; explicit flags win.
"""

import argparse
import sys

from .errors import CapacityError, NumericError, ParameterError, ValidationError
from .harness import EXPERIMENTS, ExperimentConfig, parse_config_file, rerun, run

_FLAG_FIELDS = {
    "dim": ("d", int),
    "size": ("L", int),
    "band": ("W", float),
    "psi": ("psi", str),
    "energy": ("E", float),
    "eta": ("eta", None),
    "trials": ("trials", int),
    "seed": ("seed", int),
    "flow_time": ("flow_time", float),
    "out": ("out", str),
    "format": ("fmt", str),
}


def _parse_eta(text) -> tuple:
    try:
        values = tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise ValidationError(f"bad eta list {text!r}") from None
    if not values:
        raise ValidationError(f"bad eta list {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbm", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("experiment", choices=sorted(EXPERIMENTS) + ["rerun"])
    p.add_argument("--dim", type=int, help="lattice dimension d")
    p.add_argument("--size", type=int, help="lattice side length L")
    p.add_argument("--band", type=float, help="band width W")
    p.add_argument("--psi", help="shape function name (or 'mean-field')")
    p.add_argument("--energy", type=float, help="spectral parameter E")
    p.add_argument("--eta", help="comma-separated eta grid")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--flow-time", dest="flow_time", type=float)
    p.add_argument("--out", help="output directory for manifest and metrics")
    p.add_argument("--format", choices=["csv", "json"], help="metrics format")
    p.add_argument("--config", help="key=value config file (flags override)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--manifest", help="manifest.json to rerun")
    return p


def _config_from_args(args) -> ExperimentConfig:
    values = {"experiment": args.experiment}
    if args.config:
        raw = parse_config_file(args.config)
        for key, val in raw.items():
            if key == "experiment":
                values["experiment"] = val
            elif key == "eta":
                values["eta"] = _parse_eta(val)
            elif key in ("d", "L", "trials", "seed"):
                values[key] = int(val)
            elif key in ("W", "E", "flow_time"):
                values[key] = float(val)
            elif key in ("psi", "out", "fmt"):
                values[key] = val
            else:
                raise ValidationError(f"unknown config key {key!r}")
    for flag, (field_name, cast) in _FLAG_FIELDS.items():
        val = getattr(args, flag)
        if val is None:
            continue
        values[field_name] = _parse_eta(val) if field_name == "eta" else cast(val)
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.experiment == "rerun":
            if not args.manifest:
                raise ValidationError("rerun requires --manifest")
            record = rerun(args.manifest, out=args.out, workers=args.workers)
        else:
            record = run(_config_from_args(args), workers=args.workers)
    except (ValidationError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4

    report = record.report
    print(f"{report.name}: {len(report.metrics)} metrics in {record.wall_time:.2f}s")
    for name in sorted(report.metrics):
        m = report.metrics[name]
        extra = f" +- {m.stderr:.3g}" if m.stderr is not None else ""
        print(f"  {name} = {m.value:.9g}{extra}")
    if record.config.out:
        print(f"wrote {record.config.out}/manifest.json and metrics.{record.config.fmt}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
