"""Run the 10x10 grid preset and reduce it to a mean-error table per (w_scale, b_scale, method)."""

import csv
import json
import logging
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from beliefopt.harness import PRESETS, read_cells, sweep

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)


def summarize(cells_path: Path, out_path: Path) -> dict:
    errors = defaultdict(list)
    converged = defaultdict(int)
    for row in read_cells(cells_path):
        key = (float(row["w_scale"]), float(row["b_scale"]), row["method"])
        errors[key].append(float(row["mean_err"]))
        converged[key] += int(row["converged"])

    table = []
    for (w_scale, b_scale, method), values in sorted(errors.items()):
        table.append(
            {
                "w_scale": w_scale,
                "b_scale": b_scale,
                "method": method,
                "mean_err": float(np.nanmean(values)),
                "converged": converged[(w_scale, b_scale, method)],
                "instances": len(values),
            }
        )
    with open(out_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(table[0]))
        writer.writeheader()
        writer.writerows(table)

    by_method = defaultdict(list)
    for entry in table:
        by_method[entry["method"]].append(entry["mean_err"])
    return {method: float(np.nanmean(values)) for method, values in by_method.items()}


def main():
    out_dir = Path("results")
    out_dir.mkdir(exist_ok=True)
    cells_path = out_dir / "grid_cells.csv"

    spec = replace(PRESETS["grid-10x10"], methods=("mf", "tap", "bp", "bo-grad"), workers=4)
    sweep(spec, cells_path, beliefs_path=out_dir / "grid_beliefs.jsonl")

    overall = summarize(cells_path, out_dir / "grid_table.csv")
    logger.info("Mean error over the grid: %s", json.dumps(overall))
    print(json.dumps(overall, indent=2))


if __name__ == "__main__":
    main()
