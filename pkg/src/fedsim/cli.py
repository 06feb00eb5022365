"""Command-line entry point.

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import FedSimError, RangeError, SchemaError
from .harness import config_from_dict, run_experiment, run_sweep, summary_csv, sweep_from_dict

_FLAG_KEYS = {
    "algorithm": "algorithm",
    "clients": "clients",
    "select_frac": "select_frac",
    "local_iters": "local_iters",
    "rounds": "rounds",
    "lr": "lr",
    "seed": "seed",
    "eval_every": "eval_every",
    "output": "output",
}


def _lr(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsim", description="Federated optimization under intermittent availability.")
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--sweep", type=Path, help="JSON sweep specification; writes the summary CSV")
    p.add_argument("--output", help="trace path (run) or CSV path (sweep); CSV goes to stdout if omitted")
    p.add_argument("--algorithm", choices=["fedlaavg", "fedavg", "fedsgd", "fedprox", "seqsgd"])
    p.add_argument("--clients", type=int)
    p.add_argument("--select-frac", dest="select_frac", type=float)
    p.add_argument("--local-iters", dest="local_iters", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--lr", type=_lr, help="learning rate, or 'auto' / 'inv_sqrt'")
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    return p


def _overrides(args: argparse.Namespace) -> dict:
    return {key: getattr(args, attr) for attr, key in _FLAG_KEYS.items() if getattr(args, attr) is not None}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.sweep is not None:
            doc = json.loads(args.sweep.read_text())
            base = doc.get("base")
            if isinstance(base, str):
                base = json.loads((args.sweep.parent / base).read_text())
            if isinstance(base, dict):
                flags = _overrides(args)
                flags.pop("output", None)
                doc["base"] = {**base, **flags}
            spec = sweep_from_dict(doc)
        else:
            doc = json.loads(args.config.read_text()) if args.config else {}
            config = config_from_dict({**doc, **_overrides(args)})
    except (SchemaError, RangeError, json.JSONDecodeError, OSError) as exc:
        print(f"fedsim: configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.sweep is not None:
            rows = run_sweep(spec)
            text = summary_csv(rows)
            if args.output:
                Path(args.output).write_text(text)
            else:
                sys.stdout.write(text)
        else:
            trace = run_experiment(config)
            f = trace.footer
            print(f"final_loss={f['final_loss']:.6g} min_loss={f['min_loss']:.6g} records={len(trace.records)}")
    except (FedSimError, FloatingPointError, OSError, ValueError) as exc:
        print(f"fedsim: run failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
