"""Full analysis of one dataset: exhaustive search for small K, replica
exchange for larger K, and the LASSO baseline.

    python scripts/real_data_pipeline.py data.csv --es-max-k 3 --k-max 6 --out runs/real
"""

import argparse
import logging
import math
from pathlib import Path

from ksparse.aesk import RemcConfig, TemperatureLadder, run_remc, wham
from ksparse.data import load_dataset
from ksparse.esk import Binning, exhaustive_search
from ksparse.evaluator import CriteriaConfig
from ksparse.io import ranked_records, write_aes_dos_csv, write_dos_csv, write_json, write_jsonl
from ksparse.lasso import LassoConfig, run_lasso
from ksparse.vma import remc_seed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data", type=Path)
    ap.add_argument("--es-max-k", type=int, default=3)
    ap.add_argument("--k-max", type=int, default=6)
    ap.add_argument("--sweeps", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)

    d = load_dataset(args.data)
    cfg = CriteriaConfig(seed=args.seed)
    ev = cfg.evaluator(d)
    best = {}
    for k in range(1, args.k_max + 1):
        if k <= args.es_max_k:
            res = exhaustive_search(d, k, cfg, jobs=args.jobs, evaluator=ev, override_budget=True)
            for crit in ("fe", "cve"):
                write_jsonl(ranked_records(res, crit, d), args.out / f"es{k}_ranked_{crit}.jsonl")
            write_dos_csv(res.dos2d, args.out / f"es{k}_dos2d.csv")
            top = res.top_fe[0]
            best[k] = {"method": "es", "names": top[0].names(d.column_names), "fe": top[1].fe, "cve": top[1].cve}
            continue
        for crit in ("fe", "cve"):
            rc = RemcConfig(k=k, criterion=crit, ladder=TemperatureLadder.default(crit),
                            sweeps=args.sweeps, seed=remc_seed(args.seed, k, crit), criteria=cfg)
            tr = run_remc(d, rc, evaluator=ev)
            est = wham(tr).normalized(math.comb(d.n_features, k))
            binning = Binning.covering(est.energies, 400)
            write_aes_dos_csv(binning.edges, est.rebin(binning).log_g, args.out / f"aes{k}_dos_{crit}.csv")
            best.setdefault(k, {"method": "aes"})[crit] = tr.best[1]
            best[k][f"names_{crit}"] = tr.best[0].names(d.column_names)

    prob, path, choice, scan = run_lasso(d, LassoConfig(), cfg)
    write_json({
        "lambda_min": choice.lambda_min,
        "lambda_1se": choice.lambda_1se,
        "support_min": [d.column_names[j] for j in choice.support_min],
        "support_1se": [d.column_names[j] for j in choice.support_1se],
        "scan_fe_minima": {k: e.values.fe for k, e in scan.minima("fe").items()},
    }, args.out / "lasso.json")
    write_json(best, args.out / "best_by_k.json")
    for k, b in best.items():
        print(k, b)


if __name__ == "__main__":
    main()
