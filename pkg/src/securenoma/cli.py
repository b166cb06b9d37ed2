"""Command-line entry point for the Monte Carlo sweeps.

Flags override environment variables, which override the config file:
SECURENOMA_CONFIG, SECURENOMA_EXPERIMENT, SECURENOMA_TRIALS, SECURENOMA_SEED,
SECURENOMA_SCHEMES, SECURENOMA_OUT, SECURENOMA_WORKERS.

Exit codes: 0 success, 1 configuration error, 2 every run failed.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, load_scenario, parse_schemes, read_config_file
from .experiments import PRESETS, ExperimentConfig, export, run_sweep, summarize

ENV_PREFIX = "SECURENOMA_"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="securenoma", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="scenario file (.toml or .json)")
    p.add_argument("--experiment", choices=["fig2a", "fig2b", "fig2c", "custom"])
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--schemes", help="comma-separated: noma-jamming,noma-nojam,oma-tdma")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--no-extract", action="store_true", help="skip rank-one extraction")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _setting(args, name, cast=str):
    val = getattr(args, name)
    if val is None:
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            try:
                val = cast(env)
            except ValueError as exc:
                raise ConfigError(f"bad value for {ENV_PREFIX}{name.upper()}: {env!r}") from exc
    return val


def make_config(args) -> ExperimentConfig:
    path = _setting(args, "config")
    scenario = load_scenario(path)
    exp = read_config_file(path).get("experiment", {}) if path else {}
    name = _setting(args, "experiment") or exp.get("name", "custom")
    if name not in ("fig2a", "fig2b", "fig2c", "custom"):
        raise ConfigError(f"unknown experiment {name!r}")
    preset = PRESETS.get(name, {})
    sweep = preset.get("sweep", exp.get("sweep", "Ks"))
    values = preset["values"] if "values" in preset else exp.get("values", [scenario.topology.Ks])
    schemes = _setting(args, "schemes") or exp.get("schemes") or preset.get("schemes")
    trials = _setting(args, "trials", int) or exp.get("trials", 100)
    seed = _setting(args, "seed", int)
    seed = exp.get("seed", 0) if seed is None else seed
    out = _setting(args, "out") or exp.get("out") or os.path.join("results", name)
    workers = _setting(args, "workers", int) or 1
    try:
        return ExperimentConfig(scenario=scenario, sweep=sweep, values=values, trials=int(trials),
                                schemes=parse_schemes(schemes) if schemes else list(PRESETS["fig2a"]["schemes"]),
                                master_seed=int(seed), out_dir=out, name=name,
                                extract=not args.no_extract, workers=int(workers), config_path=path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = make_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    def progress(done, total):
        if args.verbose or done == total:
            print(f"\r{done}/{total} runs", end="\n" if done == total else "", file=sys.stderr)

    records = run_sweep(config, progress)
    summary = summarize(records)
    paths = export(records, summary, config)
    for key, path in paths.items():
        print(f"{key}: {path}")
    if not any(r.status == "converged" for r in records):
        print("every run failed or was infeasible", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
