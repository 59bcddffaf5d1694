"""K-sparse exhaustive search and exact densities of states."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _kernels as K_
from .criteria import CriterionPair
from .data import Dataset, SupportSet
from .evaluator import CriteriaConfig, SupportEvaluator

log = logging.getLogger(__name__)

BLOCK_SIZE = 4096
DEFAULT_BUDGET = 10**8


class BudgetExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# combinatorics


def unrank(n: int, k: int, rank: int) -> SupportSet:
    """The ``rank``-th k-subset of range(n) in lexicographic order."""
    total = math.comb(n, k)
    if not 0 <= rank < total:
        raise ValueError(f"rank {rank} outside [0, {total})")
    out, x, r = [], 0, rank
    for i in range(k):
        while r >= (c := math.comb(n - x - 1, k - i - 1)):
            r -= c
            x += 1
        out.append(x)
        x += 1
    return SupportSet(out)


def rank(s: SupportSet, n: int) -> int:
    s.check_bounds(n)
    k, r, prev = s.k, 0, -1
    for i, v in enumerate(s.indices):
        r += sum(math.comb(n - x - 1, k - i - 1) for x in range(prev + 1, v))
        prev = v
    return r


def enumerate_supports(n: int, k: int, start: int = 0) -> Iterator[SupportSet]:
    """All k-subsets of range(n) in lexicographic order, from rank ``start`` on."""
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    total = math.comb(n, k)
    if start >= total:
        return
    idx = list(unrank(n, k, start).indices)
    while True:
        yield SupportSet(idx)
        i = k - 1
        while i >= 0 and idx[i] == n - k + i:
            i -= 1
        if i < 0:
            return
        idx[i] += 1
        for j in range(i + 1, k):
            idx[j] = idx[j - 1] + 1


# ---------------------------------------------------------------------------
# densities of states


@dataclass(frozen=True)
class Binning:
    lo: float
    hi: float
    n_bins: int

    def __post_init__(self):
        if not (self.hi > self.lo and self.n_bins >= 1):
            raise ValueError(f"invalid binning {self}")

    @classmethod
    def covering(cls, values, n_bins: int) -> "Binning":
        v = np.asarray(values, dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            raise ValueError("no finite values to bin")
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        return cls(lo, hi, n_bins)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def extended(self, values) -> "Binning":
        v = np.asarray(values, dtype=float)
        return Binning(min(self.lo, float(v.min())), max(self.hi, float(v.max())), self.n_bins)

    def index(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if np.any(v < self.lo) or np.any(v > self.hi) or not np.all(np.isfinite(v)):
            raise ValueError(f"values outside binning range [{self.lo}, {self.hi}]")
        i = np.floor((v - self.lo) / (self.hi - self.lo) * self.n_bins).astype(np.int64)
        return np.minimum(i, self.n_bins - 1)


@dataclass
class DensityOfStates:
    """Histogram of criterion values over supports, 1D or 2D (cve, fe)."""

    axes: tuple[Binning, ...]
    counts: np.ndarray

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def log_scale_view(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.counts > 0, np.log10(np.where(self.counts > 0, self.counts, 1)), np.nan)

    def marginal(self, axis: int) -> "DensityOfStates":
        """1D density along ``axis`` (0 = cve, 1 = fe for the joint density)."""
        other = 1 - axis
        return DensityOfStates((self.axes[axis],), self.counts.sum(axis=other))


def _binning(values, binning, n_bins, auto_extend) -> Binning:
    if binning is None:
        return Binning.covering(values, n_bins)
    if auto_extend:
        return binning.extended(values)
    return binning


def histogram1d(values, binning: Binning | None = None, n_bins: int = 200, auto_extend: bool = True) -> DensityOfStates:
    values = np.asarray(values, dtype=float)
    b = _binning(values, binning, n_bins, auto_extend)
    return DensityOfStates((b,), np.bincount(b.index(values), minlength=b.n_bins).astype(np.int64))


def joint_density(
    values: Sequence[CriterionPair] | tuple[np.ndarray, np.ndarray],
    binning: tuple[Binning, Binning] | None = None,
    n_bins: int = 200,
    auto_extend: bool = True,
) -> DensityOfStates:
    """Exact 2D occupancy over (cve, fe)."""
    if isinstance(values, tuple) and len(values) == 2 and isinstance(values[0], np.ndarray):
        cve, fe = (np.asarray(v, dtype=float) for v in values)
    else:
        if len(values) == 0:
            raise ValueError("no values")
        cve = np.array([v.cve for v in values], dtype=float)
        fe = np.array([v.fe for v in values], dtype=float)
    bc = _binning(cve, None if binning is None else binning[0], n_bins, auto_extend)
    bf = _binning(fe, None if binning is None else binning[1], n_bins, auto_extend)
    flat = bc.index(cve) * bf.n_bins + bf.index(fe)
    counts = np.bincount(flat, minlength=bc.n_bins * bf.n_bins).reshape(bc.n_bins, bf.n_bins)
    return DensityOfStates((bc, bf), counts.astype(np.int64))


# ---------------------------------------------------------------------------


@dataclass
class ESKResult:
    k: int
    n_evaluated: int
    top_fe: list[tuple[SupportSet, CriterionPair]]
    top_cve: list[tuple[SupportSet, CriterionPair]]
    dos_fe: DensityOfStates | None
    dos_cve: DensityOfStates | None
    dos2d: DensityOfStates | None
    n_features: int
    skipped_ranks: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, np.int64))
    skipped_status: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, np.int8))
    # per-rank values; NaN where skipped or not computed
    fe: np.ndarray = field(repr=False, default=None)
    cve: np.ndarray = field(repr=False, default=None)

    @property
    def n_skipped(self) -> int:
        return int(self.skipped_ranks.size)

    @property
    def skipped(self) -> list[tuple[SupportSet, str]]:
        """(support, reason) for every support excluded from the densities."""
        return [
            (unrank(self.n_features, self.k, int(r)), K_.STATUS_TEXT[int(st)])
            for r, st in zip(self.skipped_ranks, self.skipped_status)
        ]

    @property
    def min_fe(self) -> float:
        return self.top_fe[0][1].fe if self.top_fe else math.nan

    @property
    def min_cve(self) -> float:
        return self.top_cve[0][1].cve if self.top_cve else math.nan

    def value(self, s: SupportSet, criterion: str) -> float:
        arr = self.fe if criterion == "fe" else self.cve
        return float(arr[rank(s, self.n_features)])


def evaluate_all(ev: SupportEvaluator, k: int, do_fe: bool, do_cve: bool, jobs: int = 1, block_size: int = BLOCK_SIZE):
    """FE/CVE/status arrays over all C(n, k) supports, indexed by lexicographic rank."""
    n = ev.n
    total = math.comb(n, k)
    binom = K_.binomial_table(n, k)
    fe = np.full(total, np.nan)
    cve = np.full(total, np.nan)
    status = np.zeros(total, dtype=np.int8)
    fe_args, cve_args = ev.fe_args, ev.cve_args

    def work(start):
        cnt = min(block_size, total - start)
        sl = slice(start, start + cnt)
        K_.eval_block(start, cnt, n, k, binom, do_fe, do_cve, *fe_args, *cve_args, fe[sl], cve[sl], status[sl])

    starts = range(0, total, block_size)
    if jobs <= 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(jobs) as pool:
            list(pool.map(work, starts))
    return fe, cve, status


def _top(values, valid, top_t, other, n, k, crit):
    ranks = np.flatnonzero(valid)
    order = ranks[np.lexsort((ranks, values[ranks]))][:top_t]
    out = []
    for r in order:
        s = unrank(n, k, int(r))
        fe, cve = (values[r], other[r]) if crit == "fe" else (other[r], values[r])
        out.append((s, CriterionPair(cve=float(cve), fe=float(fe))))
    return out


def exhaustive_search(
    d: Dataset,
    k: int,
    config: CriteriaConfig | None = None,
    criteria: Sequence[str] = ("fe", "cve"),
    top_t: int = 10,
    n_bins: int = 200,
    jobs: int = 1,
    budget: int = DEFAULT_BUDGET,
    override_budget: bool = False,
    evaluator: SupportEvaluator | None = None,
) -> ESKResult:
    """Evaluate every k-subset of the columns of ``d`` under FE and/or CVE.

    Results do not depend on ``jobs``: supports are processed in fixed
    blocks and each value is written to its rank's slot.
    """
    config = config or CriteriaConfig()
    n = d.n_features
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    if k > d.p:
        raise ValueError(f"k={k} exceeds the number of samples p={d.p}")
    total = math.comb(n, k)
    if total > budget and not override_budget:
        raise BudgetExceeded(
            f"C({n},{k}) = {total} evaluations exceeds the budget of {budget}; "
            "use the approximate (REMC) search or override the budget"
        )
    do_fe, do_cve = "fe" in criteria, "cve" in criteria
    ev = evaluator or config.evaluator(d, need_folds=do_cve)
    fe, cve, status = evaluate_all(ev, k, do_fe, do_cve, jobs)
    valid = status == K_.OK
    skipped = np.flatnonzero(~valid)
    if skipped.size:
        log.info("k=%d: %d of %d supports skipped", k, skipped.size, total)
    dos_fe = dos_cve = dos2d = None
    if valid.any():
        if do_fe and do_cve:
            dos2d = joint_density((cve[valid], fe[valid]), n_bins=n_bins)
            dos_cve, dos_fe = dos2d.marginal(0), dos2d.marginal(1)
        elif do_fe:
            dos_fe = histogram1d(fe[valid], n_bins=n_bins)
        else:
            dos_cve = histogram1d(cve[valid], n_bins=n_bins)
    return ESKResult(
        k=k,
        n_evaluated=total,
        top_fe=_top(fe, valid, top_t, cve, n, k, "fe") if do_fe else [],
        top_cve=_top(cve, valid, top_t, fe, n, k, "cve") if do_cve else [],
        dos_fe=dos_fe,
        dos_cve=dos_cve,
        dos2d=dos2d,
        n_features=n,
        skipped_ranks=skipped,
        skipped_status=status[skipped],
        fe=fe,
        cve=cve,
    )
