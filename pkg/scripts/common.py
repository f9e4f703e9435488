"""Shared runner for the experiment scripts: run a config, write results and cell means."""
import argparse
import json
import logging
import time
from pathlib import Path

from ppcurves import io
from ppcurves.experiment import ExperimentConfig, ResultRecord, cell_means, run_cell

log = logging.getLogger("scripts")


def base_parser(description: str, out: str, repeats: int = 6) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, nargs="+", default=list(range(repeats)))
    p.add_argument("--out", default=out)
    p.add_argument("--quick", action="store_true", help="tiny sizes for a smoke run")
    return p


def run(config: ExperimentConfig, out) -> list:
    """Run every task of ``config`` in order and write results.csv and cells.csv to ``out``."""
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    records = []
    tasks = config.tasks()
    for i, (_, cell, method, seed) in enumerate(tasks):
        t0 = time.perf_counter()
        rec = run_cell(config, cell, method, seed, cache_dir=out / "cache")
        records.append(rec)
        log.info("[%d/%d] %s %s seed=%d raw=%.4f rev=%.4f %s (%.1f s)", i + 1, len(tasks), method,
                 cell, seed, rec.kendall_error_raw, rec.kendall_error_up_to_reversal, rec.status,
                 time.perf_counter() - t0)
    io.write_table(out / "results.csv", ResultRecord.COLUMNS, [r.row() for r in records])
    cols, rows = cell_means(config, records)
    io.write_table(out / "cells.csv", cols, rows)
    for r in rows:
        print(dict(zip(cols, r)))
    return records
