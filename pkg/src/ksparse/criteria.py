"""Information criteria for a single support.

Bayesian free energy (negative log marginal likelihood under a Gaussian
slab prior of standard deviation ``s`` on the active coefficients) and the
M-fold noise-weighted cross-validation error.  All formulas are written
with the diagonal noise-precision matrix ``W = diag(1 / sigma^2)``.

The functions here are the straightforward dense reference path.  The
batched engines in :mod:`ksparse.evaluator` compute the same quantities
from precomputed Gram matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _kernels as K_
from .data import Dataset, SupportSet

LOG_2PI = float(np.log(2.0 * np.pi))


class NumericalError(ArithmeticError):
    """A criterion could not be evaluated for numerical reasons."""


class SingularSystemError(NumericalError):
    pass


class PriorScaleError(NumericalError):
    """The prior-scale fixed point failed; ``last_z`` holds the last iterate."""

    def __init__(self, message: str, last_z: float, kind: str):
        super().__init__(message)
        self.last_z = last_z
        self.kind = kind


@dataclass(frozen=True)
class PriorSpec:
    """Prior on active coefficients: N(0, s^2).

    ``mode`` is ``"estimated"`` (s from the self-consistent equation, per
    support), ``"fixed"`` (given s) or ``"uniform"`` (very large s with the
    K log s term dropped).
    """

    mode: str = "estimated"
    s: float | None = None
    tol: float = 1e-10
    max_iter: int = 10_000

    UNIFORM_S = 1e6

    def __post_init__(self):
        if self.mode not in ("estimated", "fixed", "uniform"):
            raise ValueError(f"unknown prior mode {self.mode!r}")
        if self.mode == "fixed" and (self.s is None or not self.s > 0):
            raise ValueError("fixed prior needs s > 0")
        if self.mode == "uniform" and self.s is not None and not self.s > 0:
            raise ValueError("uniform prior needs s > 0")

    @classmethod
    def parse(cls, text: str) -> "PriorSpec":
        """Parse ``estimated``, ``uniform``, ``uniform:S`` or ``fixed:S``."""
        name, _, val = text.partition(":")
        if name == "estimated" and not val:
            return cls("estimated")
        if name in ("fixed", "uniform"):
            return cls(name, float(val) if val else None)
        raise ValueError(f"cannot parse prior {text!r}")

    @property
    def s_value(self) -> float | None:
        if self.mode == "uniform":
            return self.s if self.s is not None else self.UNIFORM_S
        return self.s

    @property
    def kernel_mode(self) -> int:
        return {"estimated": K_.MODE_ESTIMATED, "fixed": K_.MODE_FIXED, "uniform": K_.MODE_UNIFORM}[self.mode]

    def __str__(self):
        if self.mode == "estimated":
            return "estimated"
        return f"{self.mode}:{self.s_value!r}"


@dataclass(frozen=True)
class PosteriorMoments:
    mu: np.ndarray
    lam: np.ndarray
    lam_inv: np.ndarray
    z: float


@dataclass(frozen=True)
class CriterionPair:
    cve: float
    fe: float


@dataclass(frozen=True)
class FoldAssignment:
    m: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        counts = np.bincount(a, minlength=self.m)
        if a.min() < 0 or a.max() >= self.m or np.any(counts == 0):
            raise ValueError("every fold must be non-empty and ids must lie in [0, m)")

    @property
    def p(self) -> int:
        return self.assignment.shape[0]

    def fold(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == m)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.m)


def make_folds(p: int, m: int = 10, seed: int = 0) -> FoldAssignment:
    """Random partition of range(p) into m folds whose sizes differ by at most one."""
    if not 2 <= m <= p:
        raise ValueError(f"need 2 <= m <= p, got m={m}, p={p}")
    perm = np.random.default_rng(seed).permutation(p)
    assignment = np.empty(p, dtype=np.int64)
    assignment[perm] = np.arange(p) % m
    return FoldAssignment(m, assignment, seed)


# ---------------------------------------------------------------------------


def _sub(d: Dataset, s: SupportSet) -> np.ndarray:
    s.check_bounds(d.n_features)
    return d.X[:, list(s.indices)]


def _wls(XI, y, w, label=""):
    A = XI.T @ (w[:, None] * XI)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > K_.COND_MAX:
        raise SingularSystemError(f"singular weighted normal equations{label} (cond={cond:.3g})")
    try:
        cf = linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError:
        raise SingularSystemError(f"singular weighted normal equations{label}") from None
    return linalg.cho_solve(cf, XI.T @ (w * y))


@dataclass(frozen=True)
class WLSFit:
    beta: np.ndarray
    fitted: np.ndarray


def fit_wls(d: Dataset, s: SupportSet) -> WLSFit:
    """Weighted least squares on the columns of ``s`` (no intercept)."""
    XI = _sub(d, s)
    if s.k > d.p:
        raise SingularSystemError(f"support {s.indices} has more columns than samples")
    beta = _wls(XI, d.y, d.weights, f" for support {s.indices}")
    return WLSFit(beta, XI @ beta)


def _spectrum(d: Dataset, s: SupportSet):
    XI = _sub(d, s)
    w = d.weights
    G = XI.T @ (w[:, None] * XI)
    r = XI.T @ (w * d.y)
    b, V = np.linalg.eigh(G)
    return XI, G, r, b, (V.T @ r) ** 2


def prior_iteration(d: Dataset, s: SupportSet, z: float) -> float:
    """One application of the self-consistent map z -> K (mu^T mu + Tr Lambda)^-1."""
    _, _, _, b, rr2 = _spectrum(d, s)
    return s.k / (np.sum(rr2 / (b + z) ** 2) + np.sum(1.0 / (b + z)))


def estimate_prior_scale(
    d: Dataset,
    s: SupportSet,
    z0: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    method: str = "bracketed",
) -> float:
    """Prior standard deviation s* = z*^-1/2 at the stationary point of FE in z.

    ``method="picard"`` iterates the self-consistent map z <- K / (mu^T mu +
    Tr Lambda) directly; ``"bracketed"`` (default) brackets the root of
    dFE/dz and polishes it with safeguarded Newton steps in log z, which
    reaches the same point in far fewer iterations.
    """
    _, _, _, b, rr2 = _spectrum(d, s)
    if z0 is None:
        z0 = K_.initial_z(b, rr2)
    elif not z0 > 0:
        raise ValueError("z0 must be positive")
    if method == "picard":
        z, status, _ = K_.prior_fixed_point(b, rr2, float(z0), tol, max_iter)
    elif method == "bracketed":
        z, status, _ = K_.prior_root(b, rr2, float(z0), tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    if status == K_.PRIOR_DIVERGED:
        raise PriorScaleError(f"prior scale diverged for support {s.indices}: flat likelihood in z", z, "diverged")
    if status == K_.PRIOR_NOCONV:
        raise PriorScaleError(f"prior scale did not converge in {max_iter} iterations", z, "noconv")
    return 1.0 / np.sqrt(z)


def _resolve_z(d: Dataset, s: SupportSet, prior: PriorSpec) -> float:
    if prior.mode == "estimated":
        return estimate_prior_scale(d, s, tol=prior.tol, max_iter=prior.max_iter) ** -2
    return prior.s_value**-2


def posterior_moments(d: Dataset, s: SupportSet, prior: PriorSpec) -> PosteriorMoments:
    XI = _sub(d, s)
    w = d.weights
    z = _resolve_z(d, s, prior)
    lam_inv = XI.T @ (w[:, None] * XI) + z * np.eye(s.k)
    try:
        cf = linalg.cho_factor(lam_inv, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(f"posterior precision not positive definite for {s.indices}") from None
    lam = linalg.cho_solve(cf, np.eye(s.k))
    lam = 0.5 * (lam + lam.T)
    mu = linalg.cho_solve(cf, XI.T @ (w * d.y))
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(lam))):
        raise NumericalError(f"non-finite posterior moments for {s.indices}")
    return PosteriorMoments(mu, lam, lam_inv, z)


def free_energy_at(d: Dataset, s: SupportSet, z: float, log_s_term: bool = True) -> float:
    """FE at prior precision z = 1/s^2, via a Cholesky factor of Lambda^-1."""
    XI = _sub(d, s)
    w = d.weights
    lam_inv = XI.T @ (w[:, None] * XI) + z * np.eye(s.k)
    try:
        cf = linalg.cho_factor(lam_inv, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(f"Cholesky of Lambda^-1 failed for {s.indices}") from None
    rI = XI.T @ (w * d.y)
    mu = linalg.cho_solve(cf, rI)
    logdet_lam = -2.0 * np.sum(np.log(np.diag(cf[0])))
    fe = (
        0.5 * d.p * LOG_2PI
        + 0.5 * np.sum(np.log(d.sigma**2))
        + 0.5 * d.y @ (w * d.y)
        - 0.5 * mu @ rI
        - 0.5 * logdet_lam
    )
    if log_s_term:
        fe += -0.5 * s.k * np.log(z)
    return float(fe)


def free_energy(d: Dataset, s: SupportSet, prior: PriorSpec = PriorSpec()) -> float:
    z = _resolve_z(d, s, prior)
    return free_energy_at(d, s, z, log_s_term=prior.mode != "uniform")


def fe_derivative(d: Dataset, s: SupportSet, z: float) -> float:
    """dFE/dz = -K/(2z) + mu^T mu / 2 + Tr(Lambda) / 2."""
    pm = posterior_moments(d, s, PriorSpec("fixed", z**-0.5))
    return float(-s.k / (2 * z) + 0.5 * pm.mu @ pm.mu + 0.5 * np.trace(pm.lam))


def cross_validation_error(d: Dataset, s: SupportSet, folds: FoldAssignment) -> float:
    """Mean over folds of the noise-weighted held-out squared error."""
    if folds.p != d.p:
        raise ValueError("fold assignment does not match the dataset size")
    XI = _sub(d, s)
    w = d.weights
    total = 0.0
    for m in range(folds.m):
        val = folds.assignment == m
        tr = ~val
        if s.k > tr.sum():
            raise SingularSystemError(f"fold {m}: support {s.indices} larger than training set")
        beta = _wls(XI[tr], d.y[tr], w[tr], f" in fold {m} for support {s.indices}")
        e = d.y[val] - XI[val] @ beta
        total += np.sum(w[val] * e**2) / np.sum(w[val])
    return float(total / folds.m)
