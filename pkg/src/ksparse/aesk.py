"""Approximate exhaustive search: fixed-K replica exchange plus multiple histograms.

Replicas sample supports of fixed size K from exp(-E/T) at a ladder of
temperatures, neighbouring replicas swap states, and the post burn-in
energy histograms of all temperatures are merged into one density of
states g(E) by alternating the two self-consistent multiple-histogram
equations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from . import _kernels as K_
from .data import Dataset, SupportSet
from .esk import Binning
from .evaluator import CriteriaConfig, SupportEvaluator

log = logging.getLogger(__name__)

CHUNK_SWEEPS = 1000


@dataclass(frozen=True)
class TemperatureLadder:
    """Inverse temperatures, coldest first (T_1 < ... < T_Omega)."""

    betas: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("ladder needs at least one temperature")
        if not np.all(np.isfinite(b)) or np.any(b <= 0):
            raise ValueError("inverse temperatures must be positive and finite")
        if np.any(np.diff(b) >= 0):
            raise ValueError("inverse temperatures must be strictly decreasing")
        object.__setattr__(self, "betas", tuple(float(x) for x in b))

    @classmethod
    def log_spaced(cls, beta_min: float, beta_max: float, n: int = 15) -> "TemperatureLadder":
        if n == 1:
            return cls((beta_max,))
        return cls(tuple(np.logspace(np.log10(beta_max), np.log10(beta_min), n)))

    @classmethod
    def default(cls, criterion: str) -> "TemperatureLadder":
        """15 log-spaced inverse temperatures: 1e-3..1e1 for FE, 1e0..1e4 for CVE."""
        if criterion == "fe":
            return cls.log_spaced(1e-3, 1e1, 15)
        if criterion == "cve":
            return cls.log_spaced(1e0, 1e4, 15)
        raise ValueError(f"no default ladder for criterion {criterion!r}")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.betas)

    @property
    def temperatures(self) -> np.ndarray:
        return 1.0 / self.array

    def __len__(self):
        return len(self.betas)


@dataclass(frozen=True)
class RemcConfig:
    k: int
    criterion: str = "fe"
    ladder: TemperatureLadder | None = None
    sweeps: int = 100_000
    burn_in: int | None = None
    exchange_interval: int = 1
    seed: int = 0
    n_bins: int = 400
    criteria: CriteriaConfig = CriteriaConfig()

    def __post_init__(self):
        if self.criterion not in ("fe", "cve"):
            raise ValueError("criterion must be 'fe' or 'cve'")
        if self.ladder is None:
            object.__setattr__(self, "ladder", TemperatureLadder.default(self.criterion))
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.sweeps // 2)
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError("need 0 <= burn_in < sweeps")
        if self.exchange_interval < 1:
            raise ValueError("exchange_interval must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class ReplicaTrace:
    """Post burn-in energies per temperature plus run diagnostics."""

    betas: np.ndarray
    energies: np.ndarray  # (n_post, Omega); column w = samples at betas[w]
    best: tuple[SupportSet, float]
    move_acceptance: np.ndarray
    exchange_acceptance: np.ndarray
    final_states: list[SupportSet] = field(default_factory=list)

    @property
    def n(self) -> np.ndarray:
        return np.isfinite(self.energies).sum(axis=0)

    def histograms(self, binning: Binning | None = None):
        """(energy levels, H) with H[w, l] = samples at temperature w in level l.

        Without ``binning`` the levels are the distinct sampled energies, so
        the histograms are exact for a discrete state space; otherwise the
        levels are bin centers.
        """
        E = self.energies
        ok = np.isfinite(E)
        if binning is None:
            levels, inv = np.unique(E[ok], return_inverse=True)
        else:
            levels = binning.centers
            inv = binning.index(E[ok])
        W = E.shape[1]
        col = np.broadcast_to(np.arange(W), E.shape)[ok]
        H = np.zeros((W, levels.size))
        np.add.at(H, (col, inv), 1.0)
        return levels, H

    def diagnostics(self) -> dict:
        return {
            "betas": self.betas.tolist(),
            "n_samples": self.n.tolist(),
            "move_acceptance": self.move_acceptance.tolist(),
            "exchange_acceptance": self.exchange_acceptance.tolist(),
            "best_support": list(self.best[0].indices),
            "best_energy": self.best[1],
        }


# ---------------------------------------------------------------------------
# reference single steps


def metropolis_sweep(
    state: SupportSet,
    energy: float,
    energy_fn: Callable[[SupportSet], float],
    T: float,
    rng: np.random.Generator,
    n_features: int,
) -> tuple[SupportSet, float, int]:
    """K fixed-cardinality Metropolis proposals at temperature T.

    Each proposal swaps one uniformly chosen active index for one uniformly
    chosen inactive index; energy failures count as +inf and are rejected.
    """
    k = state.k
    if n_features - k < 1:
        raise ValueError("no inactive index to swap in")
    active = list(state.indices)
    inactive = sorted(set(range(n_features)) - set(active))
    accepted = 0
    for _ in range(k):
        i = int(rng.integers(k))
        j = int(rng.integers(n_features - k))
        cand = SupportSet(active[:i] + [inactive[j]] + active[i + 1:])
        try:
            e_new = float(energy_fn(cand))
        except (ArithmeticError, ValueError) as exc:
            log.debug("proposal %s rejected: %s", cand.indices, exc)
            e_new = math.inf
        u = rng.random()
        d_e = e_new - energy
        if d_e <= 0 or (math.isfinite(e_new) and T > 0 and u < math.exp(-d_e / T)):
            active[i], inactive[j] = inactive[j], active[i]
            energy = e_new
            accepted += 1
    return SupportSet(active), energy, accepted


def exchange_step(states: list, energies: list, ladder: TemperatureLadder, rng: np.random.Generator, parity: int = 0):
    """Attempt swaps between neighbours (w, w+1) for w = parity, parity+2, ...

    Returns new state and energy lists plus a per-pair accepted flag array
    (pairs not attempted this call are -1).
    """
    states, energies = list(states), list(energies)
    betas = ladder.array
    acc = np.full(len(betas) - 1, -1, dtype=np.int64)
    for w in range(parity, len(betas) - 1, 2):
        ea, eb = energies[w], energies[w + 1]
        log_r = (betas[w + 1] - betas[w]) * (eb - ea) if ea != eb else 0.0
        swap = log_r >= 0 or rng.random() < math.exp(log_r)
        acc[w] = int(swap)
        if swap:
            states[w], states[w + 1] = states[w + 1], states[w]
            energies[w], energies[w + 1] = eb, ea
    return states, energies, acc


# ---------------------------------------------------------------------------
# compiled driver


def _streams(seed: int, n_temps: int):
    ss = np.random.SeedSequence(seed).spawn(n_temps + 2)
    return [np.random.Generator(np.random.Philox(s)) for s in ss]


def draw_chunk(gens, n_sweeps: int, k: int, n: int):
    """Proposal and acceptance draws for ``n_sweeps`` sweeps, one stream per temperature."""
    W = len(gens) - 2
    out_d = np.empty((W, n_sweeps, k), dtype=np.int64)
    in_d = np.empty((W, n_sweeps, k), dtype=np.int64)
    u_d = np.empty((W, n_sweeps, k))
    for w in range(W):
        g = gens[w]
        out_d[w] = g.integers(0, k, size=(n_sweeps, k))
        in_d[w] = g.integers(0, n - k, size=(n_sweeps, k))
        u_d[w] = g.random((n_sweeps, k))
    ex_d = gens[W].random((n_sweeps, max(W - 1, 1)))
    return out_d, in_d, u_d, ex_d


def _run(n, cfg: RemcConfig, crit, table, ev: SupportEvaluator | None) -> ReplicaTrace:
    k = cfg.k
    if n - k < 1:
        raise ValueError(f"k={k} leaves no inactive column among N={n}")
    betas = cfg.ladder.array
    W = betas.size
    gens = _streams(cfg.seed, W)
    binom = K_.binomial_table(n, k) if crit == K_.CRIT_TABLE else np.zeros((1, 1), dtype=np.int64)
    if ev is None:
        fe_args = (np.zeros((1, 1)), np.zeros(1), 0.0, 0, 1.0, 1e-10, 1)
        cve_args = (np.zeros((1, 1, 0)), np.zeros((1, 0)), np.zeros((1, 1, 0)), np.zeros((1, 0)), np.zeros(0),
                    np.zeros((1, 1)), np.zeros(1), np.zeros(1), np.zeros(2, dtype=np.int64), np.ones(1))
    else:
        fe_args, cve_args = ev.fe_args, ev.cve_args
    table = np.zeros(1) if table is None else np.ascontiguousarray(table, dtype=float)
    scratch = np.empty(k, dtype=np.int64)

    def energy_of(act):
        return K_._energy(act, n, crit, scratch, binom, table, *fe_args, *cve_args)

    # initial states: uniform random supports with finite energy
    init = gens[W + 1]
    active = np.empty((W, k), dtype=np.int64)
    inactive = np.empty((W, n - k), dtype=np.int64)
    energies = np.empty(W)
    for j in range(W):
        for _ in range(1000):
            perm = init.permutation(n)
            e = energy_of(np.sort(perm[:k]))
            if np.isfinite(e):
                break
        active[j], inactive[j], energies[j] = np.sort(perm[:k]), np.sort(perm[k:]), e
    j0 = int(np.argmin(energies))
    best_state = active[j0].copy()
    best_E = np.array([energies[j0]])
    slot_of_temp = np.arange(W, dtype=np.int64)
    n_post = cfg.sweeps - cfg.burn_in
    rec_E = np.full((n_post, W), np.nan)
    move_acc = np.zeros(W, dtype=np.int64)
    ex_try = np.zeros(max(W - 1, 1), dtype=np.int64)
    ex_acc = np.zeros(max(W - 1, 1), dtype=np.int64)
    done = 0
    while done < cfg.sweeps:
        c = min(CHUNK_SWEEPS, cfg.sweeps - done)
        out_d, in_d, u_d, ex_d = draw_chunk(gens, c, k, n)
        K_.remc_chunk(active, inactive, energies, betas, slot_of_temp,
                      out_d, in_d, u_d, ex_d,
                      done, c, cfg.exchange_interval, cfg.burn_in,
                      rec_E, 0, best_state, best_E,
                      move_acc, ex_try, ex_acc,
                      n, crit, binom, table, *fe_args, *cve_args)
        done += c
    move_rate = move_acc / (cfg.sweeps * k)
    ex_rate = np.where(ex_try > 0, ex_acc / np.maximum(ex_try, 1), np.nan)[: W - 1]
    low = np.flatnonzero(ex_rate < 0.05)
    if low.size:
        log.warning("exchange acceptance below 0.05 between temperatures %s; consider a denser ladder", low.tolist())
    rec_E[~np.isfinite(rec_E)] = np.inf
    return ReplicaTrace(
        betas=betas,
        energies=rec_E,
        best=(SupportSet(best_state), float(best_E[0])),
        move_acceptance=move_rate,
        exchange_acceptance=ex_rate,
        final_states=[SupportSet(active[slot_of_temp[w]]) for w in range(W)],
    )


def run_remc(d: Dataset, cfg: RemcConfig, evaluator: SupportEvaluator | None = None) -> ReplicaTrace:
    """Replica-exchange sampling of K-supports under FE or CVE.

    A pure function of (d, cfg): the seed fixes every random draw.
    """
    ev = evaluator or cfg.criteria.evaluator(d, need_folds=cfg.criterion == "cve")
    crit = K_.CRIT_FE if cfg.criterion == "fe" else K_.CRIT_CVE
    return _run(d.n_features, cfg, crit, None, ev)


def run_remc_table(energies_by_rank, n: int, cfg: RemcConfig) -> ReplicaTrace:
    """Replica-exchange sampling of an explicitly tabulated energy over K-subsets of range(n)."""
    table = np.asarray(energies_by_rank, dtype=float)
    if table.shape != (math.comb(n, cfg.k),):
        raise ValueError("energy table must have one entry per k-subset in lexicographic order")
    return _run(n, cfg, K_.CRIT_TABLE, table, None)


def min_energy_estimate(trace: ReplicaTrace) -> tuple[SupportSet, float]:
    """Lowest-energy support seen at any temperature and any sweep, burn-in included."""
    return trace.best


# ---------------------------------------------------------------------------
# multiple histogram method


class WhamError(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class DosEstimate:
    """Reconstructed density of states on a set of energy levels (log scale)."""

    energies: np.ndarray
    log_g: np.ndarray  # -inf where no samples
    f: np.ndarray
    iterations: int
    residual: float

    @property
    def g(self) -> np.ndarray:
        return np.exp(self.log_g)

    def normalized(self, total: float) -> "DosEstimate":
        """Same estimate rescaled so that g sums to ``total`` (e.g. the number of supports)."""
        shift = math.log(total) - logsumexp(self.log_g[np.isfinite(self.log_g)])
        return DosEstimate(self.energies, self.log_g + shift, self.f, self.iterations, self.residual)

    def rebin(self, binning: Binning) -> "DosEstimate":
        """Sum g over the bins of ``binning`` (levels must lie inside its range)."""
        idx = binning.index(self.energies)
        out = np.full(binning.n_bins, -np.inf)
        for b in np.unique(idx):
            out[b] = logsumexp(self.log_g[idx == b])
        return DosEstimate(binning.centers, out, self.f, self.iterations, self.residual)

    def recompute_f(self, betas) -> np.ndarray:
        ok = np.isfinite(self.log_g)
        f = -logsumexp(self.log_g[ok][None, :] - np.asarray(betas)[:, None] * self.energies[ok][None, :], axis=1)
        return f - f[0]


def wham_histograms(levels, H, n, betas, tol: float = 1e-10, max_iter: int = 100_000) -> DosEstimate:
    """Solve the multiple-histogram equations for g on ``levels``.

    g(E) = sum_w H_w(E) / sum_w n_w exp(f_w - beta_w E)
    f_w  = -log sum_E g(E) exp(-beta_w E)

    iterated in log space with f_0 pinned to 0, until the largest relative
    change in f is below ``tol``.
    """
    levels = np.asarray(levels, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    betas = np.asarray(betas, dtype=float)
    n = np.asarray(n, dtype=float)
    Htot = H.sum(axis=0)
    occ = Htot > 0
    if not occ.any():
        raise ValueError("all histograms are empty")
    E = levels[occ]
    logH = np.log(Htot[occ])
    use = n > 0
    bE = betas[:, None] * E[None, :]
    log_n = np.log(np.where(use, n, 1.0))[:, None]
    f = np.zeros(betas.size)
    residuals = []
    for it in range(1, max_iter + 1):
        denom = logsumexp(np.where(use[:, None], log_n + f[:, None] - bE, -np.inf), axis=0)
        log_g = logH - denom
        f_new = -logsumexp(log_g[None, :] - bE, axis=1)
        f_new -= f_new[0]
        # relative change, measured against 1 near the pinned f_0 = 0
        res = float(np.max(np.abs(f_new - f) / np.maximum(1.0, np.abs(f_new))))
        f = f_new
        residuals.append(res)
        if res < tol:
            full = np.full(levels.size, -np.inf)
            full[occ] = log_g
            return DosEstimate(levels, full, f, it, res)
    raise WhamError(f"multiple-histogram iteration did not converge in {max_iter} steps (residual {res:.3g})", residuals)


def wham(trace: ReplicaTrace, ladder: TemperatureLadder | None = None, tol: float = 1e-10,
         max_iter: int = 100_000, binning: Binning | None = None) -> DosEstimate:
    betas = trace.betas if ladder is None else ladder.array
    levels, H = trace.histograms(binning)
    return wham_histograms(levels, H, H.sum(axis=1), betas, tol, max_iter)


def match_log_scale(log_g, counts, min_count: float = 50):
    """Least-squares offset between log g and log counts over bins with counts >= min_count.

    Returns (deviation array on selected bins, offset, mask).
    """
    counts = np.asarray(counts, dtype=float)
    mask = (counts >= min_count) & np.isfinite(log_g)
    if not mask.any():
        raise ValueError("no bins pass the count threshold")
    diff = np.log(counts[mask]) - log_g[mask]
    offset = float(diff.mean())
    return diff - offset, offset, mask
