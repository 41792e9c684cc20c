"""Grid x seed sweeps with a deterministic CSV sink."""

from __future__ import annotations

import csv
import io
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ExperimentConfig
from .engine import DeploymentConfig
from .pipeline import run_algorithm

CSV_COLUMNS = (
    "run_id", "algo", "N", "delta", "radius_m", "seed", "duration_s",
    "sent", "succ", "pdr", "energy_j", "eer", "train_updates", "status",
)
THREADS_ENV = "HEATLAB_THREADS"


@dataclass(frozen=True)
class Cell:
    algo: str
    n_nodes: int
    delta: float
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.algo}-N{self.n_nodes}-d{self.delta:g}-s{self.seed}"


def sweep_cells(cfg: ExperimentConfig, algorithms: Optional[Sequence[str]] = None) -> list[Cell]:
    algos = tuple(algorithms) if algorithms else cfg.experiment["algorithms"]
    return [
        Cell(a, n, d, s)
        for a in algos
        for n, d in cfg.grid
        for s in cfg.experiment["seeds"]
    ]


def thread_cap(env: Optional[dict] = None) -> int:
    raw = (env if env is not None else os.environ).get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def blank_row(cfg: ExperimentConfig, cell: Cell) -> dict:
    exp = cfg.experiment
    return {
        "run_id": cell.run_id, "algo": cell.algo, "N": cell.n_nodes, "delta": float(cell.delta),
        "radius_m": float(exp["radius_m"]), "seed": cell.seed, "duration_s": float(exp["duration_s"]),
        "sent": None, "succ": None, "pdr": None, "energy_j": None, "eer": None, "train_updates": None,
        "status": "ok",
    }


def run_cell_report(cfg: ExperimentConfig, cell: Cell, trace: bool = False, offline_buffer=None):
    exp = cfg.experiment
    dep = DeploymentConfig(cell.n_nodes, exp["radius_m"], cell.delta, exp["duration_s"], cell.seed)
    return run_algorithm(
        cell.algo, dep,
        agent_params=cfg.agent_params(),
        adr_params=cfg.adr_params(),
        train_every=exp["train_every"],
        offline_minutes=exp["offline_minutes"],
        offline_buffer=offline_buffer,
        sim_kwargs=cfg.sim_kwargs(),
        trade_off_lambda=cfg.get("env", "trade_off_lambda"),
        history_smoothing=cfg.get("env", "history_smoothing"),
        trace=trace,
    )


def fill_row(row: dict, rep) -> dict:
    m = rep.metrics
    row.update(
        sent=m.total_sent, succ=m.total_succ, pdr=m.pdr, energy_j=m.total_energy, eer=m.eer,
        train_updates=rep.train_updates,
    )
    return row


def run_cell(cfg: ExperimentConfig, cell: Cell, trace: bool = False) -> dict:
    """One CSV row; failures are reported in ``status`` instead of raised."""
    row = blank_row(cfg, cell)
    try:
        fill_row(row, run_cell_report(cfg, cell, trace))
    except Exception as exc:  # a failed cell must not stop the sweep
        last = traceback.extract_tb(exc.__traceback__)[-1]
        row["status"] = f"error: {type(exc).__name__}: {exc} ({Path(last.filename).name}:{last.lineno})"
    return row


def _run_cell_args(args):
    return run_cell(*args)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def run_sweep(
    cfg: ExperimentConfig,
    out_path=None,
    algorithms: Optional[Sequence[str]] = None,
    threads: Optional[int] = None,
) -> list[dict]:
    """Run every (algorithm, N, delta, seed) cell; rows come back in grid order
    whatever the parallelism, and are written in one go by the caller's process."""
    cells = sweep_cells(cfg, algorithms)
    threads = thread_cap() if threads is None else threads
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(cells))) as pool:
            rows = list(pool.map(_run_cell_args, [(cfg, c) for c in cells]))
    else:
        rows = [run_cell(cfg, c) for c in cells]
    if out_path is not None:
        Path(out_path).write_text(rows_to_csv(rows), encoding="utf-8")
    return rows
