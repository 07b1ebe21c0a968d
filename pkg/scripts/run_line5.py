#!/usr/bin/env python3
"""Run the five-agent line-graph comparison and print a result table.

Equivalent to `dactd run --config configs/line5.yaml` plus a compact
console summary of the algorithm ranking (mean final-100-episode team
return across seeds, and the gaps used in the robustness analysis).
"""
import argparse
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from dactd.cli import EXIT_OK, cmd_run
from dactd.config import load_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config",
                        default=str(Path(__file__).resolve().parents[1]
                                    / "configs" / "line5.yaml"))
    parser.add_argument("--out", default=None)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    ns = argparse.Namespace(config=args.config, seed=None, out=args.out,
                            dry_run=False, jobs=args.jobs)
    code = cmd_run(ns)
    if code != EXIT_OK:
        return code

    cfg = load_config(args.config)
    out_dir = Path(args.out if args.out is not None else cfg.out_dir)
    rows = (out_dir / "summary.csv").read_text().strip().splitlines()[1:]
    by_alg = defaultdict(list)
    for row in rows:
        alg, seed, final = row.split(",")
        by_alg[alg].append(float(final))

    print("\nmean final-100-episode team return over seeds:")
    ranked = sorted(by_alg.items(), key=lambda kv: -np.mean(kv[1]))
    for alg, vals in ranked:
        print(f"  {alg:16s} {np.mean(vals):7.3f}  "
              f"(per-seed: {', '.join(f'{v:.2f}' for v in vals)})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
