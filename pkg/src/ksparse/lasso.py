"""L1-penalized weighted least squares baseline.

Minimizes (1/2)(y - X b)^T W (y - X b) + lam |b|_1 by covariance-update
coordinate descent, builds warm-started paths over a log-spaced lambda
grid, picks lambda by cross-validation (minimum or one-standard-error
rule), and scans the distinct supports along a path with the same FE and
CVE evaluator used by the exhaustive search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K_
from .criteria import CriterionPair, FoldAssignment, NumericalError, WLSFit, fit_wls
from .data import Dataset, DataValidationError, ScalingInfo, SupportSet, standardize
from .evaluator import CriteriaConfig

log = logging.getLogger(__name__)


class LassoConvergenceError(NumericalError):
    def __init__(self, message: str, lam: float, duality_gap: float):
        super().__init__(message)
        self.lam = lam
        self.duality_gap = duality_gap


@dataclass(frozen=True)
class LassoConfig:
    n_lambdas: int = 100
    lambda_min_ratio: float = 1e-4
    tol: float = 1e-9
    max_iter: int = 100_000
    scale_x: bool = True

    def __post_init__(self):
        if self.n_lambdas < 1 or not 0 < self.lambda_min_ratio < 1:
            raise ValueError("need n_lambdas >= 1 and 0 < lambda_min_ratio < 1")


@dataclass(frozen=True)
class LassoProblem:
    """Standardized data handed to the solver plus the map back to original columns."""

    data: Dataset
    scaling: ScalingInfo
    x_scale: np.ndarray  # solver column j = original column j / x_scale[j]

    def coef_to_original(self, beta: np.ndarray) -> np.ndarray:
        """Coefficients on centered original X for standardized y."""
        return beta / self.x_scale


def prepare(d: Dataset, scale_x: bool = True) -> LassoProblem:
    """Standardize y, center X with noise-weighted means, optionally scale X to unit variance."""
    ds, info = standardize(d, weighted=True)
    scale = d.X.std(axis=0) if scale_x else np.ones(d.n_features)
    return LassoProblem(ds.replace(X=ds.X / scale), info, scale)


# ---------------------------------------------------------------------------
# solver


def _gram(d: Dataset):
    w = d.weights
    return np.ascontiguousarray(d.X.T @ (w[:, None] * d.X)), np.ascontiguousarray(d.X.T @ (w * d.y))


def lambda_max(d: Dataset) -> float:
    return float(np.max(np.abs(d.X.T @ (d.weights * d.y))))


def objective(d: Dataset, beta, lam: float) -> float:
    e = d.y - d.X @ beta
    return float(0.5 * e @ (d.weights * e) + lam * np.abs(beta).sum())


def duality_gap(d: Dataset, beta, lam: float) -> float:
    w = d.weights
    rho = d.y - d.X @ beta
    corr = np.max(np.abs(d.X.T @ (w * rho)))
    u = rho * (min(1.0, lam / corr) if corr > 0 else 1.0)
    dual = d.y @ (w * u) - 0.5 * u @ (w * u)
    return objective(d, beta, lam) - float(dual)


def kkt_violation(d: Dataset, beta, lam: float) -> float:
    """Largest violation of the subgradient optimality conditions."""
    g = d.X.T @ (d.weights * (d.y - d.X @ beta))
    nz = beta != 0
    v_zero = np.max(np.abs(g[~nz]) - lam, initial=0.0)
    v_nz = np.max(np.abs(g[nz] - lam * np.sign(beta[nz])), initial=0.0)
    return float(max(v_zero, v_nz))


def _solve(G, c, lam, beta, tol, max_iter, d):
    sweeps = K_.lasso_cd(G, c, lam, beta, tol, max_iter)
    if sweeps < 0:
        gap = duality_gap(d, beta, lam)
        raise LassoConvergenceError(
            f"coordinate descent did not converge at lambda={lam:.6g} in {max_iter} sweeps (duality gap {gap:.3g})",
            lam, gap)
    return beta


def coordinate_descent(d: Dataset, lam: float, warm_start=None, tol: float = 1e-9, max_iter: int = 100_000) -> np.ndarray:
    """LASSO coefficients for the weighted loss at one lambda."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if np.any(d.X.std(axis=0) == 0):
        raise DataValidationError("constant column in design")
    G, c = _gram(d)
    beta = np.zeros(d.n_features) if warm_start is None else np.array(warm_start, dtype=float)
    return _solve(G, c, float(lam), beta, tol, max_iter, d)


@dataclass
class LassoPath:
    lambdas: np.ndarray
    coefficients: np.ndarray  # (n_lambdas, N)
    supports: list[tuple[int, ...]]  # () marks the empty support
    distinct_supports: list[tuple[SupportSet, float]] = field(default_factory=list)

    @property
    def n_nonzero(self) -> np.ndarray:
        return np.array([len(s) for s in self.supports])


def lambda_grid(d: Dataset, n_lambdas: int = 100, lambda_min_ratio: float = 1e-4) -> np.ndarray:
    lmax = lambda_max(d)
    if not lmax > 0:
        raise DataValidationError("X^T W y is zero; the path is empty everywhere")
    if n_lambdas == 1:
        return np.array([lmax])
    return np.logspace(np.log10(lmax), np.log10(lmax * lambda_min_ratio), n_lambdas)


def lambda_path(d: Dataset, cfg: LassoConfig = LassoConfig(), lambdas=None) -> LassoPath:
    """Warm-started solves down a descending lambda grid."""
    lams = lambda_grid(d, cfg.n_lambdas, cfg.lambda_min_ratio) if lambdas is None else np.asarray(lambdas, float)
    if np.any(np.diff(lams) >= 0):
        raise ValueError("lambdas must be strictly descending")
    G, c = _gram(d)
    beta = np.zeros(d.n_features)
    coefs = np.empty((lams.size, d.n_features))
    supports, distinct, seen = [], [], set()
    for i, lam in enumerate(lams):
        beta = _solve(G, c, float(lam), beta.copy(), cfg.tol, cfg.max_iter, d)
        coefs[i] = beta
        s = tuple(int(j) for j in np.flatnonzero(beta))
        supports.append(s)
        if s and s not in seen:
            seen.add(s)
            distinct.append((SupportSet(s), float(lam)))
    return LassoPath(lams, coefs, supports, distinct)


# ---------------------------------------------------------------------------
# lambda selection


@dataclass
class LambdaChoice:
    lambdas: np.ndarray
    cve_mean: np.ndarray
    cve_se: np.ndarray
    lambda_min: float
    lambda_1se: float
    support_min: tuple[int, ...]
    support_1se: tuple[int, ...]


def cv_errors(prob: LassoProblem, folds: FoldAssignment, lambdas, cfg: LassoConfig = LassoConfig()) -> np.ndarray:
    """Held-out weighted squared error of the shrunk LASSO predictor, shape (M, n_lambdas).

    Values are on the scale of the original y.
    """
    d = prob.data
    if folds.p != d.p:
        raise ValueError("fold assignment does not match the dataset size")
    out = np.empty((folds.m, len(lambdas)))
    for m in range(folds.m):
        val = folds.assignment == m
        tr = d.replace(y=d.y[~val], sigma=d.sigma[~val], X=d.X[~val])
        G, c = _gram(tr)
        beta = np.zeros(d.n_features)
        Xv, yv, wv = d.X[val], d.y[val], d.weights[val]
        for i, lam in enumerate(lambdas):
            try:
                beta = _solve(G, c, float(lam), beta.copy(), cfg.tol, cfg.max_iter, tr)
            except LassoConvergenceError as exc:
                raise LassoConvergenceError(f"fold {m}: {exc}", exc.lam, exc.duality_gap) from None
            e = yv - Xv @ beta
            out[m, i] = wv @ e**2 / wv.sum()
    return out * prob.scaling.y_std**2


def choose_lambda(path: LassoPath, errs: np.ndarray) -> LambdaChoice:
    """Minimum-error and one-standard-error lambdas from per-fold errors (M, n_lambdas)."""
    m = errs.shape[0]
    mean = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / np.sqrt(m)
    i_min = int(np.argmin(mean))
    # lambdas descend, so the smallest qualifying index is the largest lambda
    i_1se = int(np.flatnonzero(mean <= mean[i_min] + se[i_min]).min())
    return LambdaChoice(path.lambdas, mean, se, float(path.lambdas[i_min]), float(path.lambdas[i_1se]),
                        path.supports[i_min], path.supports[i_1se])


def lambda_optimize(d: Dataset, folds: FoldAssignment, cfg: LassoConfig = LassoConfig()) -> LambdaChoice:
    """Lambda minimizing the cross-validated error, and the one-standard-error choice."""
    if folds.m < 2:
        raise ValueError("need at least two folds")
    prob = prepare(d, cfg.scale_x)
    path = lambda_path(prob.data, cfg)
    return choose_lambda(path, cv_errors(prob, folds, path.lambdas, cfg))


# ---------------------------------------------------------------------------
# lambda scan


def debias(d: Dataset, s: SupportSet) -> WLSFit:
    """Unpenalized weighted least-squares refit on a selected support."""
    return fit_wls(d, s)


@dataclass
class ScanEntry:
    support: SupportSet
    first_lambda: float
    values: CriterionPair
    coefficients: np.ndarray


@dataclass
class ScanResult:
    entries: list[ScanEntry]
    skipped: list[tuple[SupportSet, str]]

    def minima(self, criterion: str) -> dict[int, ScanEntry]:
        """Per support size, the scanned entry with the smallest criterion value."""
        best: dict[int, ScanEntry] = {}
        for e in self.entries:
            v = getattr(e.values, criterion)
            k = e.support.k
            if k not in best or v < getattr(best[k].values, criterion):
                best[k] = e
        return dict(sorted(best.items()))


def lambda_scan(d: Dataset, path: LassoPath, config: CriteriaConfig = CriteriaConfig(), evaluator=None) -> ScanResult:
    """FE and CVE of every distinct non-empty support on ``path``, scored exactly as in the exhaustive search."""
    ev = evaluator or config.evaluator(d)
    prepared = ev.dataset
    entries, skipped = [], []
    for s, lam in path.distinct_supports:
        try:
            fe = ev.fe(s)
            cve = ev.cve(s)
            coef = debias(prepared, s).beta
        except (ArithmeticError, ValueError) as exc:
            log.info("lambda scan skipped %s: %s", s.indices, exc)
            skipped.append((s, str(exc)))
            continue
        entries.append(ScanEntry(s, lam, CriterionPair(cve=cve, fe=fe), coef))
    return ScanResult(entries, skipped)


def run_lasso(d: Dataset, cfg: LassoConfig = LassoConfig(), config: CriteriaConfig = CriteriaConfig()):
    """Path on standardized data, CV lambda choice and scan of the path supports."""
    prob = prepare(d, cfg.scale_x)
    path = lambda_path(prob.data, cfg)
    choice = choose_lambda(path, cv_errors(prob, config.folds(d), path.lambdas, cfg))
    return prob, path, choice, lambda_scan(d, path, config)
