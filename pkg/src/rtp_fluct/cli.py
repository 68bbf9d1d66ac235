"""Command line interface.

    rtp-fluct run --config cfg.json [--seed S] [--workers N] [--out DIR]
    rtp-fluct validate --config cfg.json
    rtp-fluct list-experiments

Exit codes: 0 experiment passed, 1 experiment thresholds failed, 2 invalid
config or usage.  RTP_FLUCT_WORKERS sets the default worker count (numba
thread pool); results are identical for any worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    EXPERIMENTS,
    config_hash,
    emit_outputs,
    run,
    validate_config,
)


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc


def _cmd_run(args):
    raw = _load_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = validate_config(raw)  # raises ConfigError -> exit 2
    out_dir = args.out or raw.get("out_dir") or "results"
    out_path = Path(out_dir)
    try:
        out_path.mkdir(parents=True, exist_ok=True)
        probe = out_path / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError([f"output directory not writable: {exc}"]) from exc
    workers = args.workers or int(os.environ.get("RTP_FLUCT_WORKERS", "0") or 0)
    if workers:
        import numba

        numba.set_num_threads(workers)
    record = run(raw)
    emit_outputs(record, out_path)
    status = "PASS" if record.passed else "FAIL"
    print(f"{record.experiment}: {status} ({len(record.rows)} rows, "
          f"{record.wall_time_s:.1f}s, hash {record.config_hash[:12]})")
    for row in record.rows:
        if not row.get("pass", True):
            print(f"  FAIL row: {json.dumps(row, default=str)}")
    return 0 if record.passed else 1


def _cmd_validate(args):
    raw = _load_config(args.config)
    validate_config(raw)
    print(f"config ok (experiment {raw['experiment']}, hash {config_hash(raw)[:12]})")
    return 0


def _cmd_list(_args):
    for name in EXPERIMENTS:
        print(name)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="rtp-fluct", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(fn=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a config without running")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(fn=_cmd_validate)

    p_list = sub.add_parser("list-experiments", help="list experiment names")
    p_list.set_defaults(fn=_cmd_list)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
