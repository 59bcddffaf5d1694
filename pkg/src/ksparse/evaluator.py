"""Precomputed-Gram evaluation of FE and CVE for many supports.

:class:`SupportEvaluator` holds ``G = X^T W X``, ``r = X^T W y`` and the
per-fold training Grams once, and evaluates supports through the compiled
kernels.  Its values agree with the dense reference path in
:mod:`ksparse.criteria` to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K_
from .criteria import (
    LOG_2PI,
    FoldAssignment,
    NumericalError,
    PriorScaleError,
    PriorSpec,
    SingularSystemError,
    make_folds,
)
from .data import Dataset, SupportSet, weighted_center


class SupportEvaluator:
    def __init__(self, d: Dataset, prior: PriorSpec | None = None, folds: FoldAssignment | None = None):
        self.dataset = d
        self.prior = prior or PriorSpec()
        self.folds = folds
        w = d.weights
        X = np.ascontiguousarray(d.X)
        self.n = d.n_features
        self.G = np.ascontiguousarray(X.T @ (w[:, None] * X))
        self.r = np.ascontiguousarray(X.T @ (w * d.y))
        self.const = float(0.5 * d.p * LOG_2PI + 0.5 * np.sum(np.log(d.sigma**2)) + 0.5 * d.y @ (w * d.y))
        s = self.prior.s_value
        self.z_fixed = float(s**-2) if s is not None else 1.0
        if folds is not None:
            if folds.p != d.p:
                raise ValueError("fold assignment does not match the dataset size")
            M = folds.m
            order = np.concatenate([folds.fold(m) for m in range(M)])
            self.offsets = np.concatenate([[0], np.cumsum(folds.sizes())]).astype(np.int64)
            self.Xv = np.ascontiguousarray(X[order])
            self.yv = np.ascontiguousarray(d.y[order])
            self.wv = np.ascontiguousarray(w[order])
            self.wsum = np.array([self.wv[self.offsets[m]:self.offsets[m + 1]].sum() for m in range(M)])
            # fold index last, so a support's entries for all folds sit together
            self.Gt = np.empty((self.n, self.n, M))
            self.rt = np.empty((self.n, M))
            self.Gv = np.empty((self.n, self.n, M))
            self.rv = np.empty((self.n, M))
            self.yyv = np.empty(M)
            for m in range(M):
                for dst_G, dst_r, rows in ((self.Gt, self.rt, folds.assignment != m), (self.Gv, self.rv, folds.assignment == m)):
                    Xs, ws, ys = X[rows], w[rows], d.y[rows]
                    dst_G[:, :, m] = Xs.T @ (ws[:, None] * Xs)
                    dst_r[:, m] = Xs.T @ (ws * ys)
                self.yyv[m] = d.y[folds.assignment == m] @ (w * d.y)[folds.assignment == m]
        else:
            self.offsets = np.zeros(2, dtype=np.int64)
            self.Xv = np.zeros((1, self.n))
            self.yv = self.wv = np.zeros(1)
            self.wsum = np.ones(1)
            self.Gt = self.Gv = np.zeros((self.n, self.n, 0))
            self.rt = self.rv = np.zeros((self.n, 0))
            self.yyv = np.zeros(0)

    # argument bundles for the kernels
    @property
    def fe_args(self):
        p = self.prior
        return (self.G, self.r, self.const, p.kernel_mode, self.z_fixed, p.tol, p.max_iter)

    @property
    def cve_args(self):
        return (self.Gt, self.rt, self.Gv, self.rv, self.yyv, self.Xv, self.yv, self.wv, self.offsets, self.wsum)

    @staticmethod
    def _idx(s) -> np.ndarray:
        if isinstance(s, SupportSet):
            return np.array(s.indices, dtype=np.int64)
        return np.sort(np.asarray(s, dtype=np.int64))

    def fe(self, s) -> float:
        idx = self._idx(s)
        fe, z, st = K_.eval_fe(idx, *self.fe_args)
        if st == K_.PRIOR_DIVERGED:
            raise PriorScaleError(f"support {tuple(idx)}: {K_.STATUS_TEXT[st]}", z, "diverged")
        if st == K_.PRIOR_NOCONV:
            raise PriorScaleError(f"support {tuple(idx)}: {K_.STATUS_TEXT[st]}", z, "noconv")
        if st != K_.OK:
            raise NumericalError(f"support {tuple(idx)}: {K_.STATUS_TEXT[st]}")
        return fe

    def cve(self, s) -> float:
        if self.folds is None:
            raise ValueError("no fold assignment configured")
        idx = self._idx(s)
        cve, st, fold = K_.eval_cve(idx, *self.cve_args)
        if st == K_.SINGULAR:
            raise SingularSystemError(f"fold {fold}: singular training fit for support {tuple(idx)}")
        if st != K_.OK:
            raise NumericalError(f"support {tuple(idx)}: {K_.STATUS_TEXT[st]}")
        return cve

    def energy(self, s, criterion: str) -> float:
        return self.fe(s) if criterion == "fe" else self.cve(s)


@dataclass(frozen=True)
class CriteriaConfig:
    """How supports are scored: prior for FE, fold count and seed for CVE.

    With ``center=True`` (default) y and X are centered with noise-precision
    weighted means first, which absorbs the intercept exactly.
    """

    prior: PriorSpec = PriorSpec()
    n_folds: int = 10
    seed: int = 0
    center: bool = True

    def prepare(self, d: Dataset) -> Dataset:
        return weighted_center(d) if self.center else d

    def folds(self, d: Dataset) -> FoldAssignment:
        return make_folds(d.p, self.n_folds, self.seed)

    def evaluator(self, d: Dataset, need_folds: bool = True) -> SupportEvaluator:
        return SupportEvaluator(self.prepare(d), self.prior, self.folds(d) if need_folds else None)
