"""Per-round records, CSV persistence, and parameter sweeps."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import RoleConfig

CSV_FIELDS = ("round", "mtas", "mtans", "gap", "mean_selfish_loss", "attack_started")

SWEEP_PARAMETERS = ("lambda", "rho", "selfish_fraction", "epsilon", "interval", "num_clients")


@dataclass(frozen=True)
class ExperimentRecord:
    """Metrics of one round.

    ``mtas``/``mtans`` are the mean test accuracies of the selfish and
    non-selfish clients on the shared test set; ``gap`` is their difference.
    """

    round: int
    mtas: float
    mtans: float
    gap: float
    mean_selfish_loss: float
    attack_started: bool

    def __post_init__(self) -> None:
        if abs(self.gap - (self.mtas - self.mtans)) > 1e-12:
            raise ValueError("gap must equal mtas - mtans")


def compute_metrics(models, roles: RoleConfig, test) -> tuple[float, float, float]:
    """(mtas, mtans, gap) of per-client models on a shared test set."""
    from .simulation import group_accuracy

    mtas = group_accuracy([models[i] for i in roles.selfish_ids], test)
    mtans = group_accuracy([models[i] for i in roles.non_selfish_ids], test)
    return mtas, mtans, mtas - mtans


def write_records(records, path: str) -> None:
    """Write records as CSV with six-decimal floats and lowercase booleans."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for rec in records:
            writer.writerow([
                rec.round,
                f"{rec.mtas:.6f}",
                f"{rec.mtans:.6f}",
                f"{rec.gap:.6f}",
                f"{rec.mean_selfish_loss:.6f}",
                "true" if rec.attack_started else "false",
            ])


def read_records(path: str) -> list[ExperimentRecord]:
    """Parse a records CSV written by :func:`write_records`."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            records.append(
                ExperimentRecord(
                    round=int(row["round"]),
                    mtas=float(row["mtas"]),
                    mtans=float(row["mtans"]),
                    gap=float(row["gap"]),
                    mean_selfish_loss=float(row["mean_selfish_loss"]),
                    attack_started=row["attack_started"] == "true",
                )
            )
    return records


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """One swept parameter, the values to try, and repeats per value."""

    parameter: str
    values: tuple
    repeats: int = 3

    def __post_init__(self) -> None:
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(
                f"unknown sweep parameter {self.parameter!r}, expected one of {SWEEP_PARAMETERS}"
            )
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")


def apply_parameter(cfg, parameter: str, value):
    """Return a copy of ``cfg`` with one swept parameter applied."""
    if parameter == "lambda":
        return dataclasses.replace(cfg, attack=dataclasses.replace(cfg.attack, lam=float(value)))
    if parameter == "rho":
        return dataclasses.replace(cfg, partition=dataclasses.replace(cfg.partition, rho=float(value)))
    if parameter == "epsilon":
        return dataclasses.replace(cfg, attack=dataclasses.replace(cfg.attack, epsilon=float(value)))
    if parameter == "interval":
        return dataclasses.replace(cfg, attack=dataclasses.replace(cfg.attack, interval=int(value)))
    if parameter == "selfish_fraction":
        total = cfg.roles.total
        m = max(1, int(round(float(value) * total)))
        return dataclasses.replace(cfg, roles=RoleConfig(n=total - m, m=m))
    if parameter == "num_clients":
        total = int(value)
        fraction = cfg.roles.m / cfg.roles.total
        m = max(1, int(round(fraction * total)))
        return dataclasses.replace(cfg, roles=RoleConfig(n=total - m, m=m))
    raise ValueError(f"unknown sweep parameter {parameter!r}")


def _sweep_cell(args):
    from .simulation import run_experiment

    cfg, parameter, value, repeat = args
    cell_cfg = apply_parameter(cfg, parameter, value)
    cell_cfg = dataclasses.replace(cell_cfg, seed=cfg.seed + repeat)
    return value, repeat, run_experiment(cell_cfg)


def run_sweep(
    cfg,
    spec: SweepSpec,
    out_dir: str | None = None,
    jobs: int = 1,
    config_doc: dict | None = None,
) -> dict:
    """Run the sweep and return its summary.

    Per value, ``spec.repeats`` experiments run with seeds
    ``cfg.seed + 0 .. cfg.seed + repeats - 1``; the summary averages the
    final-round metrics over repeats.  With ``out_dir`` set, each cell's
    records land in ``<parameter>_<value>_rep<k>.csv``.  ``config_doc`` is
    echoed into the summary so results stay reproducible.
    """
    tasks = [(cfg, spec.parameter, value, repeat) for value in spec.values for repeat in range(spec.repeats)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_cell, tasks))
    else:
        outcomes = [_sweep_cell(task) for task in tasks]

    finals: dict = {value: [] for value in spec.values}
    for value, repeat, records in outcomes:
        finals[value].append(records[-1])
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            name = f"{spec.parameter}_{value}_rep{repeat}.csv"
            write_records(records, os.path.join(out_dir, name))

    summary = {
        "parameter": spec.parameter,
        "values": list(spec.values),
        "mean_gap": [float(np.mean([r.gap for r in finals[v]])) for v in spec.values],
        "mean_mtas": [float(np.mean([r.mtas for r in finals[v]])) for v in spec.values],
        "mean_mtans": [float(np.mean([r.mtans for r in finals[v]])) for v in spec.values],
    }
    if config_doc is not None:
        summary["config"] = config_doc
    if out_dir is not None:
        with open(os.path.join(out_dir, "sweep_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
    return summary
