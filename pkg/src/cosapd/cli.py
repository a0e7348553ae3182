"""Command-line entry point: run experiments and write CSV metric tables."""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

from . import __version__
from .experiments import EXPERIMENTS, ConfigError, load_config, snr_gap_knee

ORDER = ["gram", "pfa", "roc", "system-pfa", "detect-snr", "success", "calls", "sidelobe", "clutter"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cosapd", description="CoSaPD Monte-Carlo experiments (CSV output).")
    p.add_argument("command", choices=ORDER + ["all"], help="experiment to run")
    p.add_argument("--config", help="INI file overriding the preset")
    p.add_argument("--seed", type=int, help="master seed (default from config, 0)")
    p.add_argument("--out", default=None, help="output directory (default: config output_path)")
    p.add_argument("--scale", choices=["desk", "full"], default=None)
    p.add_argument("--trials", type=int, default=None, help="override the trial count")
    return p


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def run(command: str, config, out_dir: str, log=sys.stderr) -> dict:
    """Run one experiment (or all) and write its CSVs; returns manifest extras."""
    os.makedirs(out_dir, exist_ok=True)
    names = ORDER if command == "all" else [command]
    extras = {}
    for name in names:
        t0 = time.perf_counter()
        table = EXPERIMENTS[name](config)
        for metric in sorted({r[3] for r in table.rows}):
            sub = type(table)(table.experiment, [r for r in table.rows if r[3] == metric])
            sub.write_csv(os.path.join(out_dir, f"{table.experiment}_{metric}.csv"))
        if name == "detect-snr":
            knee = snr_gap_knee(table, max(config.cs_fractions))
            extras["detect_snr_gap_knee_db"] = "none" if knee is None else repr(knee)
        extras[f"elapsed_{name}_s"] = f"{time.perf_counter() - t0:.1f}"
        print(f"{name}: done in {extras[f'elapsed_{name}_s']} s", file=log)
    return extras


def write_manifest(path: str, command: str, config, extras: dict) -> None:
    with open(path, "w") as fh:
        fh.write(f"# cosapd run manifest\ncommand = {command}\nversion = {version_string()}\n")
        fh.write(f"master_seed = {config.master_seed}\nsnr_knee_db = {config.snr_knee_db!r}\n")
        for k in sorted(extras):
            fh.write(f"{k} = {extras[k]}\n")
        fh.write("\n" + config.to_ini())


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        overrides = {} if args.trials is None else {"trials": args.trials}
        config = load_config(args.config, args.scale, args.seed, **overrides)
    except ConfigError as exc:
        print(f"cosapd: config error: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out or config.output_path
    try:
        extras = run(args.command, config, out_dir)
        write_manifest(os.path.join(out_dir, f"manifest_{args.command}.txt"), args.command, config, extras)
    except ConfigError as exc:
        print(f"cosapd: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 2
        print(f"cosapd: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
