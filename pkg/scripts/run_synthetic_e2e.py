"""Synthetic end-to-end run: generate, preprocess, train, sample, evaluate.

    python scripts/run_synthetic_e2e.py --out runs/e2e [--config configs/synthetic_e2e.json]

Every stage goes through the command-line interface, so the output directory
holds exactly the artifacts an operator would get.  A one-line summary of the
headline checks is printed at the end.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from voldiff import cli
from voldiff.arbitrage import total_penalty
from voldiff.dataprep import read_surface_csv
from voldiff.evaluation import read_samples_csv

ROOT = Path(__file__).resolve().parents[1]


def stage(name: str, *argv) -> None:
    start = time.perf_counter()
    code = cli.main([*map(str, argv)])
    print(f"[{name}] exit {code} in {time.perf_counter() - start:.1f}s", flush=True)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/e2e")
    parser.add_argument("--config", default=str(ROOT / "configs" / "synthetic_e2e.json"))
    parser.add_argument("--days", type=int, default=400)
    parser.add_argument("--k", type=int, default=100)
    args = parser.parse_args()

    out, cfg = Path(args.out), args.config
    raw, data, train = out / "raw", out / "data.json", out / "train"
    stage("gen-data", "gen-data", "--config", cfg, "--days", args.days, "--out", raw)
    stage("preprocess", "preprocess", "--config", cfg, "--surfaces", raw / "surfaces.csv",
          "--market", raw / "market.csv", "--out", data)
    stage("train", "train", "--config", cfg, "--data", data, "--out", train)
    stage("sample", "sample", "--config", cfg, "--checkpoint", train / "checkpoint.json", "--data", data,
          "--k", args.k, "--out", out / "samples.csv")
    stage("evaluate", "evaluate", "--config", cfg, "--truth", raw / "surfaces.csv",
          "--samples", out / "samples.csv", "--out", out / "report")
    stage("arb-audit", "arb-audit", "--config", cfg, "--surfaces", raw / "surfaces.csv", "--out", out / "audit.csv")

    summary = json.loads((out / "report" / "summary.json").read_text())
    data_phi = float(np.mean(total_penalty(read_surface_csv(raw / "surfaces.csv")[1])))
    atm = np.mean([v["breach_pct"] for k, v in summary["slices"].items() if k.startswith("ATM")])
    positive = all(np.all(s > 0) for s in read_samples_csv(out / "samples.csv").values())
    print(
        f"MAPE {summary['overall_mape_pct']:.2f}%  ATM breach {atm:.1f}%  "
        f"Phi generated/data {summary['mean_generated_phi']:.2e}/{data_phi:.2e}  all positive {positive}"
    )


if __name__ == "__main__":
    main()
