"""Plot-ready exports (CSV / JSON lines) and run manifests."""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .criteria import NumericalError, fit_wls
from .data import Dataset, SupportSet
from .esk import Binning, DensityOfStates, ESKResult

DOS1_FIELDS = ["bin_lo", "bin_hi", "count"]
DOS2_FIELDS = ["cve_lo", "cve_hi", "fe_lo", "fe_hi", "count"]
AES_FIELDS = ["bin_lo", "bin_hi", "E_bin_center", "g", "log10_g"]


def _f(x) -> str:
    return repr(float(x))


def write_dos_csv(dos: DensityOfStates, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if len(dos.axes) == 1:
            w.writerow(DOS1_FIELDS)
            e = dos.axes[0].edges
            for i, c in enumerate(dos.counts):
                w.writerow([_f(e[i]), _f(e[i + 1]), int(c)])
        else:
            w.writerow(DOS2_FIELDS)
            ec, ef = dos.axes[0].edges, dos.axes[1].edges
            for i in range(dos.counts.shape[0]):
                for j in range(dos.counts.shape[1]):
                    w.writerow([_f(ec[i]), _f(ec[i + 1]), _f(ef[j]), _f(ef[j + 1]), int(dos.counts[i, j])])


def write_aes_dos_csv(edges, log_g, path) -> None:
    """Reconstructed density of states per bin; empty bins have g = 0."""
    edges = np.asarray(edges)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AES_FIELDS)
        for i, lg in enumerate(log_g):
            if np.isfinite(lg):
                # beyond float range g is written as inf; log10_g stays exact
                g = math.exp(lg) if lg < 709.0 else math.inf
                l10 = lg / math.log(10)
            else:
                g, l10 = 0.0, float("nan")
            w.writerow([_f(edges[i]), _f(edges[i + 1]), _f(0.5 * (edges[i] + edges[i + 1])), _f(g), _f(l10)])


def write_histograms_csv(edges, H, betas, path) -> None:
    edges = np.asarray(edges)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi"] + [f"beta_{b!r}" for b in betas])
        for i in range(H.shape[1]):
            w.writerow([_f(edges[i]), _f(edges[i + 1])] + [int(h) for h in H[:, i]])


@dataclass
class DosTable:
    """A 1D density of states read back from CSV, as log counts (natural log)."""

    lo: np.ndarray
    hi: np.ndarray
    log_g: np.ndarray
    counts: np.ndarray | None  # exact counts when the file holds them

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.lo, self.hi[-1])


def read_dos_csv(path) -> DosTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty density-of-states file")
    cols = rows[0].keys()
    lo = np.array([float(r["bin_lo"]) for r in rows])
    hi = np.array([float(r["bin_hi"]) for r in rows])
    if "count" in cols:
        counts = np.array([float(r["count"]) for r in rows])
        with np.errstate(divide="ignore"):
            return DosTable(lo, hi, np.log(counts), counts)
    if "log10_g" in cols:
        l10 = np.array([float(r["log10_g"]) for r in rows])
        return DosTable(lo, hi, np.where(np.isfinite(l10), l10 * math.log(10), -np.inf), None)
    raise ValueError(f"{path}: expected a 'count' or 'log10_g' column")


@dataclass
class DosComparison:
    centers: np.ndarray
    deviation: np.ndarray  # log_b + offset - log_a, natural log, on compared bins
    offset: float
    max_abs_deviation: float
    n_bins: int


def compare_dos(a: DosTable, b: DosTable, min_count: float = 50) -> DosComparison:
    """Align b to a by a least-squares offset in log space and report per-bin deviations.

    Bins compared: finite in both and, when a holds exact counts, count >= min_count.
    """
    if a.lo.size != b.lo.size or not (np.allclose(a.lo, b.lo, rtol=1e-12, atol=0) and np.allclose(a.hi, b.hi, rtol=1e-12, atol=0)):
        raise ValueError("density-of-states files use different bins")
    mask = np.isfinite(a.log_g) & np.isfinite(b.log_g)
    if a.counts is not None:
        mask &= a.counts >= min_count
    if not mask.any():
        raise ValueError("no comparable bins")
    diff = a.log_g[mask] - b.log_g[mask]
    offset = float(diff.mean())
    dev = b.log_g[mask] + offset - a.log_g[mask]
    centers = 0.5 * (a.lo + a.hi)[mask]
    return DosComparison(centers, dev, offset, float(np.max(np.abs(dev))), int(mask.sum()))


def write_comparison_csv(cmp: DosComparison, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["E_bin_center", "deviation"])
        for c, v in zip(cmp.centers, cmp.deviation):
            w.writerow([_f(c), _f(v)])


def ranked_records(res: ESKResult, criterion: str, d: Dataset) -> list[dict]:
    """Top supports with names, both criteria and unpenalized refit coefficients."""
    top = res.top_fe if criterion == "fe" else res.top_cve
    out = []
    for i, (s, pair) in enumerate(top, 1):
        try:
            coef = [float(c) for c in fit_wls(d, s).beta]
        except NumericalError:
            coef = None
        out.append({
            "rank": i,
            "criterion": criterion,
            "support": list(s.indices),
            "names": s.names(d.column_names),
            "cve": float(pair.cve),
            "fe": float(pair.fe),
            "coefficients": coef,
        })
    return out


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def support_str(s) -> str:
    return " ".join(str(i) for i in (s.indices if isinstance(s, SupportSet) else s))


def write_path_csv(path_obj, cve_lambda, scan, path) -> None:
    """One row per lambda: shrunk-predictor CV error and the scanned values of its support.

    ``cve_lambda`` or ``scan`` may be None, leaving those columns empty.
    """
    by_support = {e.support.indices: e for e in scan.entries} if scan is not None else {}
    if cve_lambda is None:
        cve_lambda = [None] * len(path_obj.lambdas)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "n_nonzero", "support", "cve_lambda", "cve_support", "fe_support"])
        for lam, s, cl in zip(path_obj.lambdas, path_obj.supports, cve_lambda):
            e = by_support.get(tuple(s))
            w.writerow([_f(lam), len(s), support_str(s), _f(cl) if cl is not None else "",
                        _f(e.values.cve) if e else "", _f(e.values.fe) if e else ""])


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seeds: dict
    version: str
    dataset_fingerprint: str | None = None
    wall_clock_s: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    started: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S"))
    python: str = field(default_factory=platform.python_version)

    def write(self, path) -> None:
        write_json(asdict(self), path)

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
