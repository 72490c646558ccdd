"""Command-line front end.

    carleman-rte <partition|forward|carleman|stability|reconstruct> --config PATH
                 [--out DIR] [--seed N] [--threads N]

``--config`` takes a YAML config or a previous run's manifest.json (replay).
Without ``--out`` the run goes to ``$CARLEMAN_RTE_OUT/<experiment>`` (or
``./runs/<experiment>``).  Exit codes: 0 success, 2 invalid input, 3
numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import yaml

from . import __version__
from .config import EXPERIMENTS, load_config
from .errors import CarlemanRTEError
from .experiments import RUNNERS
from .tables import render_csv, sha256, write_atomic, write_json

log = logging.getLogger("carleman_rte")
OUT_ENV = "CARLEMAN_RTE_OUT"


def parser():
    p = argparse.ArgumentParser(prog="carleman-rte", description=__doc__.split("\n\n")[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="YAML config or manifest.json to replay")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<experiment>)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for ensemble members")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def output_dir(args):
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / args.experiment


def run(experiment, config_path, out_dir, seed=None, threads=1):
    """Execute one experiment and write its artifacts; returns the manifest dict."""
    t0 = time.perf_counter()
    cfg = load_config(config_path)
    if cfg.experiment != experiment:
        cfg = dataclasses.replace(cfg, experiment=experiment)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    outcome = RUNNERS[experiment](cfg, threads=threads)

    # all compute is done; only now touch the output directory
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inventory = []
    for name in sorted(outcome.tables):
        path = write_atomic(out_dir / name, render_csv(outcome.tables[name]))
        inventory.append({"path": name, "rows": len(outcome.tables[name]), "sha256": sha256(path)})
    block = yaml.safe_dump(outcome.partition, sort_keys=False)
    write_atomic(out_dir / "partition.yaml", block)
    inventory.append({"path": "partition.yaml", "sha256": sha256(out_dir / "partition.yaml")})
    manifest = {
        "tool": "carleman-rte",
        "version": __version__,
        "experiment": experiment,
        "resolved_config": cfg.to_dict(),
        "partition": outcome.partition,
        "summary": outcome.summary,
        "outputs": inventory,
        "wall_clock_s": time.perf_counter() - t0,
    }
    write_json(out_dir / "manifest.json", manifest)
    return manifest


def main(argv=None):
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out_dir = output_dir(args)
    try:
        manifest = run(args.experiment, args.config, out_dir, args.seed, args.threads)
    except CarlemanRTEError as exc:
        print(f"carleman-rte: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    for entry in manifest["outputs"]:
        log.info("wrote %s", out_dir / entry["path"])
    print(f"{args.experiment}: {len(manifest['outputs'])} files in {out_dir} ({manifest['wall_clock_s']:.1f} s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
