"""
Experiment drivers for fiberheom.

Runs single trajectories (decay, dd), (eta, L_c) grids (map, dd-map), the
engine-vs-oracle validation and the hierarchy convergence check. Grid cells
are independent and run on a process pool; results are always returned in
ascending (eta, L_c) order.
"""

from __future__ import annotations

import functools
import logging
import os
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Any

import numpy as np

from fiberheom import __version__
from fiberheom.analysis import (
    SweepResult,
    Trajectory,
    dd_advantage,
    distance_to_threshold,
    is_monotone_nonincreasing,
    non_markovianity,
    oracle_for_model,
)
from fiberheom.config import Experiment, RunConfig, ScheduleConfig
from fiberheom.control import PulseKind
from fiberheom.heom import IntegratorConfig, convergence_check, evolve
from fiberheom.model import ModelConfig, derive_params, distance_to_time
from fiberheom.writers import render_csv

logger = logging.getLogger(__name__)

DECAY_FIELDS = ["distance_km", "time_us", "concurrence"]
DD_FIELDS = [*DECAY_FIELDS, "pulses_applied"]
MAP_FIELDS = ["eta", "lc_km", "distance_to_threshold_km", "non_markovianity", "error"]
DD_MAP_FIELDS = ["eta", "lc_km", "c_nodd", "c_cpmg", "c_udd", "dd_advantage", "error"]
VALIDATE_FIELDS = [
    "eta",
    "lc_km",
    "max_deviation",
    "monotone",
    "non_markovianity",
    "status",
    "error",
]
CONVERGE_FIELDS = [
    "max_depth",
    "reference_depth",
    "max_difference",
    "final_concurrence",
    "reference_final_concurrence",
]

VALIDATION_TOL = 1e-3
VALIDATION_ETAS = (0.0, 0.01, 0.1)
VALIDATION_LCS_KM = (0.01, 0.1, 1.0)


@dataclass
class ExperimentResult:
    """Rows of one experiment plus the metadata needed for the sidecar."""

    experiment: Experiment
    fieldnames: list[str]
    rows: list[dict[str, Any]]
    cells: list[dict[str, Any]] = field(default_factory=list)
    passed: bool | None = None

    def to_csv(self) -> str:
        return render_csv(self.fieldnames, self.rows)


@dataclass(frozen=True)
class CellTask:
    """One (eta, L_c) grid point; picklable for the worker pool."""

    model: ModelConfig
    integrator: IntegratorConfig
    eta: float
    lc_km: float
    total_distance_km: float
    threshold: float
    schedule: ScheduleConfig | None = None


# -------------------------
# Helpers
# -------------------------


def cell_model(model: ModelConfig, eta: float, lc_km: float) -> ModelConfig:
    """Copy of ``model`` with the fiber retuned to coupling eta and length lc_km."""
    fiber = model.fiber.model_copy(
        update={
            "birefringence_std": eta * model.fiber.mean_birefringence,
            "correlation_length_km": lc_km,
        }
    )
    return model.model_copy(update={"fiber": fiber})


def _context(model: ModelConfig) -> str:
    derived = derive_params(model.fiber)
    return f"eta={derived.eta:.6g}, lc_km={model.fiber.correlation_length_km:.6g}"


def _trajectory_rows(traj: Trajectory) -> list[dict[str, Any]]:
    rows = []
    for i in range(len(traj)):
        row = {
            "distance_km": float(traj.distances[i]),
            "time_us": float(traj.times[i]),
            "concurrence": float(traj.concurrences[i]),
        }
        if traj.pulses_applied is not None:
            row["pulses_applied"] = int(traj.pulses_applied[i])
        rows.append(row)
    return rows


def _task_time(task: CellTask) -> float:
    return distance_to_time(task.total_distance_km, derive_params(task.model.fiber).v_f)


def _failed_row(task: CellTask, fields: list[str], error: Exception) -> dict[str, Any]:
    logger.warning(f"Cell eta={task.eta}, lc_km={task.lc_km} failed: {error}")
    row: dict[str, Any] = {name: float("nan") for name in fields}
    row.update(eta=task.eta, lc_km=task.lc_km, error=f"{type(error).__name__}: {error}")
    return row


def _call_indexed(func: Callable[[CellTask], dict[str, Any]], item: tuple[int, CellTask]):
    index, task = item
    return index, func(task)


def _run_cells(
    func: Callable[[CellTask], dict[str, Any]],
    tasks: list[CellTask],
    workers: int,
) -> list[dict[str, Any]]:
    """Run cell tasks inline or on a process pool; results in task order."""
    results: list[dict[str, Any] | None] = [None] * len(tasks)
    workers = max(1, min(workers, len(tasks)))
    logger.info(f"Running {len(tasks)} cells on {workers} worker(s)")

    if workers == 1:
        for done, task in enumerate(tasks, start=1):
            results[done - 1] = func(task)
            logger.info(f"completed {done}/{len(tasks)} cells")
    else:
        with Pool(processes=workers) as pool:
            runner = functools.partial(_call_indexed, func)
            for done, (index, row) in enumerate(
                pool.imap_unordered(runner, list(enumerate(tasks))), start=1
            ):
                results[index] = row
                logger.info(f"completed {done}/{len(tasks)} cells")

    return [row for row in results if row is not None]


def _grid_tasks(
    cfg: RunConfig, etas, lcs, schedule: ScheduleConfig | None = None
) -> list[CellTask]:
    return [
        CellTask(
            model=cell_model(cfg.model, float(eta), float(lc)),
            integrator=cfg.integrator,
            eta=float(eta),
            lc_km=float(lc),
            total_distance_km=cfg.total_distance_km,
            threshold=cfg.threshold,
            schedule=schedule,
        )
        for eta in etas
        for lc in lcs
    ]


def _sweep(
    func: Callable[[CellTask], dict[str, Any]],
    cfg: RunConfig,
    etas,
    lcs,
    schedule: ScheduleConfig | None = None,
) -> list[dict[str, Any]]:
    tasks = _grid_tasks(cfg, etas, lcs, schedule)
    rows = _run_cells(func, tasks, cfg.workers or os.cpu_count() or 1)
    cells = [rows[i * len(lcs) : (i + 1) * len(lcs)] for i in range(len(etas))]
    return SweepResult(eta_values=etas, lc_values=lcs, cells=cells).rows()


def _cell_metadata(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    return [
        {
            "eta": row["eta"],
            "lc_km": row["lc_km"],
            "seconds": row.get("seconds"),
            "error": row["error"],
        }
        for row in rows
    ]


# -------------------------
# Cell workers
# -------------------------


def _map_cell(task: CellTask) -> dict[str, Any]:
    start = time.perf_counter()
    try:
        traj = evolve(task.model, task.integrator, _task_time(task))
        row = {
            "eta": task.eta,
            "lc_km": task.lc_km,
            "distance_to_threshold_km": distance_to_threshold(traj, task.threshold),
            "non_markovianity": non_markovianity(traj),
            "error": "",
        }
    except Exception as e:
        row = _failed_row(task, MAP_FIELDS, e)
    row["seconds"] = time.perf_counter() - start
    return row


def _dd_map_cell(task: CellTask) -> dict[str, Any]:
    start = time.perf_counter()
    total_time = _task_time(task)
    try:
        c_nodd = evolve(task.model, task.integrator, total_time).final_concurrence
        c_cpmg, c_udd = (
            evolve(
                task.model,
                task.integrator,
                total_time,
                task.schedule.to_sequence(total_time, kind=kind),
            ).final_concurrence
            for kind in (PulseKind.CPMG, PulseKind.UDD)
        )
        row = {
            "eta": task.eta,
            "lc_km": task.lc_km,
            "c_nodd": c_nodd,
            "c_cpmg": c_cpmg,
            "c_udd": c_udd,
            "dd_advantage": dd_advantage(c_cpmg, c_udd),
            "error": "",
        }
    except Exception as e:
        row = _failed_row(task, DD_MAP_FIELDS, e)
    row["seconds"] = time.perf_counter() - start
    return row


def _validate_cell(task: CellTask) -> dict[str, Any]:
    start = time.perf_counter()
    try:
        traj = evolve(task.model, task.integrator, _task_time(task))
        oracle = oracle_for_model(task.model, traj.times)
        deviation = float(np.max(np.abs(traj.concurrences - oracle)))
        row = {
            "eta": task.eta,
            "lc_km": task.lc_km,
            "max_deviation": deviation,
            "monotone": is_monotone_nonincreasing(traj, tol=1e-9),
            "non_markovianity": non_markovianity(traj),
            "status": "PASS" if deviation <= VALIDATION_TOL else "FAIL",
            "error": "",
        }
    except Exception as e:
        row = _failed_row(task, VALIDATE_FIELDS, e)
        row.update(monotone="", status="ERROR")
    row["seconds"] = time.perf_counter() - start
    return row


# -------------------------
# Experiments
# -------------------------


def run_decay(cfg: RunConfig) -> ExperimentResult:
    """
    Single no-control trajectory over total_distance_km.

    Raises:
        RuntimeError: If the solver fails, with the cell parameters in the message
    """
    try:
        traj = evolve(cfg.model, cfg.integrator, cfg.total_time_us)
    except RuntimeError as e:
        raise RuntimeError(f"decay run failed ({_context(cfg.model)}): {e}") from e
    return ExperimentResult(Experiment.DECAY, DECAY_FIELDS, _trajectory_rows(traj))


def run_dd(cfg: RunConfig) -> ExperimentResult:
    """
    Single trajectory under the configured CPMG or UDD schedule.

    Raises:
        ScheduleError: If the schedule does not fit the run
        RuntimeError: If the solver fails, with the cell parameters in the message
    """
    total_time = cfg.total_time_us
    sequence = cfg.schedule.to_sequence(total_time)
    spacings = sequence.spacings_km(derive_params(cfg.model.fiber).v_f)
    logger.info(
        f"{sequence.kind.value.upper()} with {sequence.n_pulses} {sequence.mode.value} pulses"
        + (f", mean waveplate spacing {np.mean(spacings) * 1e3:.1f} m" if spacings.size else "")
    )
    try:
        traj = evolve(cfg.model, cfg.integrator, total_time, sequence)
    except RuntimeError as e:
        raise RuntimeError(f"dd run failed ({_context(cfg.model)}): {e}") from e
    return ExperimentResult(Experiment.DD, DD_FIELDS, _trajectory_rows(traj))


def run_map(cfg: RunConfig) -> ExperimentResult:
    """Distance to threshold and non-Markovianity over the (eta, L_c) grid."""
    rows = _sweep(_map_cell, cfg, cfg.sweep.eta_list, cfg.sweep.lc_list_km)
    return ExperimentResult(Experiment.MAP, MAP_FIELDS, rows, cells=_cell_metadata(rows))


def run_dd_map(cfg: RunConfig) -> ExperimentResult:
    """Residual concurrence without control, with CPMG and with UDD over the grid."""
    rows = _sweep(_dd_map_cell, cfg, cfg.sweep.eta_list, cfg.sweep.lc_list_km, cfg.schedule)
    return ExperimentResult(Experiment.DD_MAP, DD_MAP_FIELDS, rows, cells=_cell_metadata(rows))


def run_validate(cfg: RunConfig) -> ExperimentResult:
    """
    Compare the hierarchy solver with the pure-dephasing oracle on a grid.

    Every cell passes when max |C_heom - C_oracle| <= 1e-3. The report also
    records whether each computed trace is monotone.

    Raises:
        ValueError: If the model lies outside the oracle's validity
    """
    if cfg.model.exponents is not None:
        raise ValueError("validate requires the single fiber correlation exponent")

    etas = cfg.sweep.eta_list if cfg.sweep is not None else list(VALIDATION_ETAS)
    lcs = cfg.sweep.lc_list_km if cfg.sweep is not None else list(VALIDATION_LCS_KM)
    rows = _sweep(_validate_cell, cfg, etas, lcs)

    passed = all(row["status"] == "PASS" for row in rows)
    worst = max((row["max_deviation"] for row in rows), default=float("nan"))
    monotone = all(row["monotone"] is True for row in rows)
    logger.info(
        f"Validation {'PASS' if passed else 'FAIL'}: worst deviation {worst:.3e} "
        f"(tolerance {VALIDATION_TOL:g})"
    )
    logger.info(
        f"All computed traces monotone: {monotone}; "
        f"max non-Markovianity {max(row['non_markovianity'] for row in rows):.3e}"
    )
    return ExperimentResult(
        Experiment.VALIDATE, VALIDATE_FIELDS, rows, cells=_cell_metadata(rows), passed=passed
    )


def run_converge(cfg: RunConfig) -> ExperimentResult:
    """Hierarchy convergence report for the configured model."""
    report = convergence_check(cfg.model, cfg.integrator, cfg.total_time_us)
    row = {
        "max_depth": report.max_depth,
        "reference_depth": report.reference_depth,
        "max_difference": report.max_difference,
        "final_concurrence": report.final_concurrence,
        "reference_final_concurrence": report.reference_final_concurrence,
    }
    return ExperimentResult(Experiment.CONVERGE, CONVERGE_FIELDS, [row])


_RUNNERS: dict[Experiment, Callable[[RunConfig], ExperimentResult]] = {
    Experiment.DECAY: run_decay,
    Experiment.DD: run_dd,
    Experiment.MAP: run_map,
    Experiment.DD_MAP: run_dd_map,
    Experiment.VALIDATE: run_validate,
    Experiment.CONVERGE: run_converge,
}


def run_experiment(cfg: RunConfig) -> ExperimentResult:
    """Dispatch to the driver named by ``cfg.experiment``."""
    logger.info(f"Running experiment: {cfg.experiment.value}")
    start = time.perf_counter()
    result = _RUNNERS[cfg.experiment](cfg)
    logger.info(
        f"Experiment {cfg.experiment.value} completed in {time.perf_counter() - start:.2f}s "
        f"({len(result.rows)} rows)"
    )
    return result


def build_metadata(cfg: RunConfig, result: ExperimentResult, seconds: float) -> dict[str, Any]:
    """Sidecar contents: resolved config, version and timings."""
    metadata: dict[str, Any] = {
        "version": __version__,
        "experiment": cfg.experiment.value,
        "config": cfg.model_dump(mode="json"),
        "wall_clock_s": seconds,
        "cells": result.cells,
    }
    if result.passed is not None:
        metadata["passed"] = result.passed
    return metadata
