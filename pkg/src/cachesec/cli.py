"""Batch experiment front end.

A run is described by one ``key = value`` file holding system parameters
and experiment keys side by side; command-line flags override the file.
Example::

    experiment = "cache_sweep"
    schemes = ["proposed+greedy", "preference+greedy"]
    capacity_grid = [25, 50, 75]
    n_trials = 100
    num_bs = 3
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import evaluate
from .delivery import dump_trial
from .model import (CONFIG_KEYS, REDUCED_OVERRIDES, ConfigError, SystemConfig,
                    config_from_mapping, parse_key_values)

log = logging.getLogger(__name__)

KINDS = ("cache_sweep", "csi_error_sweep", "antenna_sweep", "single_trial", "selftest")


@dataclass
class ExperimentSpec:
    kind: str = "cache_sweep"
    schemes: tuple = ("proposed+greedy",)
    capacity_grid: tuple = (0.0, 25.0, 50.0, 75.0, 100.0)
    csi_error_grid: tuple = (0.01, 0.03, 0.05, 0.07)
    antenna_grid: tuple = (2, 4, 6)
    n_trials: int = 100
    master_seed: int = 0
    output: str = "results.csv"
    config_path: str | None = None
    dump_dir: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"experiment must be one of {KINDS}, got {self.kind!r}")
        if isinstance(self.schemes, str):
            self.schemes = (self.schemes,)
        self.schemes = tuple(self.schemes)
        if not self.schemes:
            raise ConfigError("schemes must list at least one caching+delivery pair")
        for s in self.schemes:
            try:
                evaluate.split_scheme(s)
            except ValueError as exc:
                raise ConfigError(f"schemes: {exc}") from None
        for key, kind in (("capacity_grid", float), ("csi_error_grid", float),
                          ("antenna_grid", int)):
            grid = getattr(self, key)
            if isinstance(grid, (int, float)):
                grid = (grid,)
            try:
                grid = tuple(kind(v) for v in grid)
            except (TypeError, ValueError):
                raise ConfigError(f"{key} must be a list of numbers, got {grid!r}") from None
            if not grid:
                raise ConfigError(f"{key} must be non-empty")
            if list(grid) != sorted(grid):
                raise ConfigError(f"{key} must be sorted ascending, got {list(grid)}")
            setattr(self, key, grid)
        if any(not 0 <= p <= 100 for p in self.capacity_grid):
            raise ConfigError("capacity_grid entries are percentages in [0, 100]")
        if any(v < 0 for v in self.csi_error_grid):
            raise ConfigError("csi_error_grid entries must be >= 0")
        if any(v < 1 for v in self.antenna_grid):
            raise ConfigError("antenna_grid entries must be >= 1")
        if int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise ConfigError(f"n_trials must be an integer >= 1, got {self.n_trials!r}")
        self.n_trials = int(self.n_trials)
        if int(self.master_seed) != self.master_seed or not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"master_seed must be an unsigned 64-bit integer, "
                              f"got {self.master_seed!r}")
        self.master_seed = int(self.master_seed)


# keys of the config file that describe the experiment rather than the system
SPEC_KEYS = {"experiment": "kind", "schemes": "schemes", "capacity_grid": "capacity_grid",
             "csi_error_grid": "csi_error_grid", "antenna_grid": "antenna_grid",
             "n_trials": "n_trials", "master_seed": "master_seed", "output": "output",
             "reduced": None}


def parse_config(path=None, text: str | None = None, reduced: bool = False,
                 **overrides) -> tuple:
    """``(SystemConfig, ExperimentSpec)`` from a config file.

    Omitted system keys take the full-scale defaults, or the desk-scale ones
    when ``reduced`` (or ``reduced = True`` in the file) is set. Unknown keys
    are errors. ``overrides`` are spec fields that win over the file.
    """
    if text is None:
        text = "" if path is None else Path(path).read_text()
    values = parse_key_values(text)
    unknown = sorted(set(values) - set(CONFIG_KEYS) - set(SPEC_KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    system = {k: v for k, v in values.items() if k in CONFIG_KEYS}
    if values.get("reduced", False) or reduced:
        system = {**REDUCED_OVERRIDES, **system}
    config = config_from_mapping(system)
    spec_kw = {SPEC_KEYS[k]: v for k, v in values.items() if SPEC_KEYS.get(k)}
    spec_kw.update({k: v for k, v in overrides.items() if v is not None})
    if path is not None:
        spec_kw["config_path"] = str(path)
    try:
        spec = ExperimentSpec(**spec_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return config, spec


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _summary(row) -> str:
    if row.untrained:
        return f"{row.capacity_pct:7.2f}% {row.scheme:<28s} untrained: {row.untrained}"
    return (f"{row.capacity_pct:7.2f}% {row.scheme:<28s} feasible {row.n_feasible}/{row.n_trials}"
            f"  power {row.avg_power_dBm:8.3f} dBm  p_out {row.p_out:.3f}"
            f"  coop {row.avg_coop_bs:.3f}")


def _trial_dump(result) -> str:
    doc = json.loads(dump_trial(result.decision, result.solution))
    doc["result"] = {"scheme": result.scheme, "seed": result.seed,
                     "cache_capacity_bits": result.cache_capacity, "feasible": result.feasible,
                     "outage": result.outage, "min_secrecy_rate": result.min_secrecy_rate,
                     "avg_coop_bs": evaluate._fmt(result.avg_coop_bs)}
    if result.worst_case_er_rate is not None:
        doc["result"]["worst_case_er_rate"] = [float(v) for v in result.worst_case_er_rate]
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def run_experiment(config: SystemConfig, spec: ExperimentSpec, echo=print) -> int:
    """Run ``spec`` and write its CSV; returns the process exit status."""
    out = Path(spec.output)
    if spec.kind == "selftest":
        from .selftest import run_selftest

        report = run_selftest(spec.master_seed, echo=echo)
        _atomic_write(out, evaluate.rows_to_csv(report.rows))
        echo(f"selftest: {report.passed} passed, {report.failed} failed")
        return 0 if report.failed == 0 else 1

    on_trial = None
    if spec.dump_dir is not None:
        dump_dir = Path(spec.dump_dir)

        def on_trial(gi, label, t, result):
            _atomic_write(dump_dir / f"{gi:02d}_{_safe(label)}_{t:05d}.json", _trial_dump(result))

    kw = dict(on_trial=on_trial, on_row=lambda row: echo(_summary(row)))
    if spec.kind == "cache_sweep":
        rows = evaluate.run_cache_sweep(config, spec.schemes, spec.capacity_grid, spec.n_trials,
                                        spec.master_seed, **kw)
    elif spec.kind == "csi_error_sweep":
        rows = evaluate.run_csi_error_sweep(config, spec.schemes, spec.csi_error_grid,
                                            spec.n_trials, spec.master_seed, **kw)
    elif spec.kind == "antenna_sweep":
        rows = evaluate.run_antenna_sweep(config, spec.schemes, spec.antenna_grid,
                                          spec.n_trials, spec.master_seed, **kw)
    else:
        rows = evaluate.run_sweep(config, spec.schemes, None, None, 1, spec.master_seed, **kw)
    _atomic_write(out, evaluate.rows_to_csv(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cachesec",
                                description="Secure cache-enabled delivery experiments.")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--experiment", choices=KINDS, help="experiment kind")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--trials", type=int, help="delivery trials per grid point")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--dump-trials", metavar="DIR", help="write one JSON file per trial")
    p.add_argument("--reduced", action="store_true",
                   help="desk-scale defaults: 3 BSs, 2 antennas, 2 LRs, 4 files, 10 scenarios")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config, spec = parse_config(args.config, reduced=args.reduced, kind=args.experiment,
                                    master_seed=args.seed, n_trials=args.trials,
                                    output=args.out)
        spec = dataclasses.replace(spec, dump_dir=args.dump_trials)
    except (ConfigError, OSError) as exc:
        print(f"cachesec: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return run_experiment(config, spec)
    except Exception as exc:  # noqa: BLE001 - any failure aborts the run
        log.debug("run failed", exc_info=True)
        print(f"cachesec: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
