"""Planted-support sweep over several sample sizes and seeds.

Writes one CSV of per-K minima for every method and a JSON-lines summary
(FE-minimizing K, whether the planted support was recovered, CVE trend).

    python scripts/run_vma.py --p 700 30 --seeds 10 --sweeps 100000 --out runs/vma
"""

import argparse
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from ksparse.evaluator import CriteriaConfig
from ksparse.io import write_jsonl
from ksparse.vma import MethodsConfig, VmaConfig, run_vma_experiment, write_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, nargs="+", default=[700, 30])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--sweeps", type=int, default=100_000)
    ap.add_argument("--k-max", type=int, default=7)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)

    def one(cell):
        p, seed = cell
        cfg = VmaConfig(p=p, seed=seed, k_range=tuple(range(1, args.k_max + 1)))
        mc = MethodsConfig(remc_sweeps=args.sweeps, criteria=CriteriaConfig(seed=seed))
        return run_vma_experiment(cfg, mc)

    cells = [(p, s) for p in args.p for s in range(args.seeds)]
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(one, cells))

    write_rows([r for res in results for r in res.rows], args.out / "results.csv")
    write_jsonl([res.summary() for res in results], args.out / "summary.jsonl")
    for p in args.p:
        mine = [res for res in results if res.config.p == p]
        print(f"p={p}: recovered {sum(r.recovered for r in mine)}/{len(mine)}, "
              f"FE-argmin K {[r.fe_argmin_k for r in mine]}, "
              f"CVE non-increasing {sum(r.cve_nonincreasing for r in mine)}/{len(mine)}")


if __name__ == "__main__":
    main()
