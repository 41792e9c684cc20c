"""Command line entry point: simulate, collect-offline, train, sweep, dump-tables.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ALGORITHMS, ConfigError, ExperimentConfig, describe, parse_config
from .engine import DeploymentConfig, trace_rows
from .env import BufferFormatError, NotReady, load_buffer, save_buffer
from .nn.checkpoint import CheckpointError
from .phy import SF_RANGE, LinkBudgetParams, tables_as_rows, time_on_air
from .pipeline import collect_behaviour_buffer
from .sweep import Cell, blank_row, fill_row, rows_to_csv, run_cell_report, run_sweep, thread_cap

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, algo: bool = True) -> None:
    p.add_argument("--config", help="INI experiment file (defaults apply when omitted)")
    if algo:
        p.add_argument("--algo", choices=ALGORITHMS, help="algorithm, overrides [experiment] algorithms")
    p.add_argument("--seed", type=int, help="master seed, overrides [experiment] seeds")
    p.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="heatlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="one run on the first grid cell, metrics as a one-row CSV")
    _common(p)
    p.add_argument("--trace", help="write per-uplink verdicts to this CSV")

    p = sub.add_parser("collect-offline", help="random-uniform behaviour buffer (JSON lines)")
    _common(p, algo=False)

    p = sub.add_parser("train", help="pretrain and run the online phase, then save a checkpoint")
    _common(p)
    p.add_argument("--buffer", help="offline buffer to reuse instead of collecting one")
    p.add_argument("--trace", help="write per-uplink verdicts to this CSV")

    p = sub.add_parser("sweep", help="every grid cell and seed, one CSV row each")
    _common(p)

    p = sub.add_parser("dump-tables", help="SF profiles, orthogonality, airtimes and config keys")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.add_argument("--config", help="use this config's link parameters")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg.set("experiment", "seeds", (args.seed,))
    if getattr(args, "algo", None):
        cfg.set("experiment", "algorithms", (args.algo,))
    return cfg


def _first_cell(cfg: ExperimentConfig) -> DeploymentConfig:
    exp = cfg.experiment
    n, d = cfg.grid[0]
    return DeploymentConfig(n, exp["radius_m"], d, exp["duration_s"], exp["seeds"][0])


def _write_trace(path, outcomes) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["time", "node", "channel", "sf", "verdict", "rssi_dbm", "sinr_db"])
        for r in trace_rows(outcomes):
            w.writerow([repr(r.time), r.node, r.channel, r.sf, r.verdict, repr(r.rssi), repr(r.sinr)])


def _cell(cfg: ExperimentConfig) -> Cell:
    exp = cfg.experiment
    n, d = cfg.grid[0]
    return Cell(exp["algorithms"][0], n, d, exp["seeds"][0])


def cmd_simulate(args) -> int:
    cfg = _load(args)
    cell = _cell(cfg)
    rep = run_cell_report(cfg, cell, trace=bool(args.trace))
    if args.trace:
        _write_trace(args.trace, rep.result.outcomes)
    text = rows_to_csv([fill_row(blank_row(cfg, cell), rep)])
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_collect(args) -> int:
    cfg = _load(args)
    dep = _first_cell(cfg)
    buf = collect_behaviour_buffer(dep, cfg.experiment["offline_minutes"], cfg.sim_kwargs(),
                                   cfg.get("env", "trade_off_lambda"))
    out = args.out or "offline_buffer.jsonl"
    save_buffer(buf, out)
    print(json.dumps({"transitions": len(buf), "nodes": buf.n_nodes, "path": out}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    cell = _cell(cfg)
    if cell.algo not in ("heat", "heat-online"):
        raise ConfigError(f"train needs a learning algorithm (heat or heat-online), got {cell.algo}")
    offline = load_buffer(args.buffer) if args.buffer else None
    if offline is not None and offline.n_nodes != cell.n_nodes:
        raise ConfigError(f"buffer holds {offline.n_nodes} nodes, the scenario has {cell.n_nodes}")
    rep = run_cell_report(cfg, cell, trace=bool(args.trace), offline_buffer=offline)
    if args.trace:
        _write_trace(args.trace, rep.result.outcomes)
    out = args.out or "heat.ckpt"
    rep.extras["agent"].save(out)
    m = rep.metrics
    print(json.dumps({
        "algo": cell.algo, "pdr": m.pdr, "eer": m.eer, "sent": m.total_sent, "succ": m.total_succ,
        "train_updates": rep.train_updates, "checkpoint": out,
    }))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    threads = thread_cap()
    out = args.out or cfg.experiment["output"]
    rows = run_sweep(cfg, out, threads=threads)
    failed = [r for r in rows if r["status"] != "ok"]
    print(json.dumps({"rows": len(rows), "failed": len(failed), "path": out}))
    for r in failed:
        print(f"{r['run_id']}: {r['status']}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def dump_tables(link: LinkBudgetParams, payload: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in tables_as_rows():
        w.writerow(row)
    w.writerow(["airtime", "sf", "payload_bytes", "seconds"])
    for sf in SF_RANGE:
        toa = time_on_air(sf, payload, link.preamble_symbols, link.bandwidth_hz, link.coding_rate)
        w.writerow(["airtime", sf, payload, repr(toa)])
    w.writerow(["noise_floor_dbm", repr(link.noise_dbm)])
    return buf.getvalue() + "\n# configuration keys and defaults\n" + describe() + "\n"


def cmd_dump_tables(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    text = dump_tables(cfg.link(), cfg.get("mac", "payload_bytes"))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "collect-offline": cmd_collect,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "dump-tables": cmd_dump_tables,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, BufferFormatError, CheckpointError) as exc:
        print(f"heatlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotReady as exc:
        print(f"heatlab: not ready: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"heatlab: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
