"""Datasets, supports and preprocessing.

A :class:`Dataset` holds the response ``y``, the known per-sample noise
standard deviations ``sigma`` and the ``p x N`` design matrix ``X``.  A
:class:`SupportSet` is the sorted set of active columns, equivalent to a
binary indicator vector with ``k`` ones.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataValidationError(ValueError):
    """Raised when input data violates a Dataset invariant."""


class DataParseError(DataValidationError):
    """Raised on malformed CSV input; carries the offending row/column."""

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if col is not None:
            loc.append(f"col {col}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.col = col


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable regression dataset.

    Parameters
    ----------
    y : (p,) array
        Response values.
    sigma : (p,) array
        Known noise standard deviation of each sample, strictly positive.
    X : (p, N) array
        Design matrix.
    column_names : sequence of str, optional
        Labels of the N explanatory columns; defaults to ``x0 .. x{N-1}``.
    """

    y: np.ndarray
    sigma: np.ndarray
    X: np.ndarray
    column_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = _frozen(self.y)
        sigma = _frozen(self.sigma)
        X = _frozen(self.X)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "X", X)
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        object.__setattr__(self, "column_names", names)
        self.validate()

    def validate(self) -> None:
        y, sigma, X = self.y, self.sigma, self.X
        if y.ndim != 1 or sigma.ndim != 1 or X.ndim != 2:
            raise DataValidationError("y and sigma must be vectors and X a matrix")
        p = y.shape[0]
        if sigma.shape[0] != p or X.shape[0] != p:
            raise DataValidationError(
                f"shape mismatch: len(y)={p}, len(sigma)={sigma.shape[0]}, rows(X)={X.shape[0]}"
            )
        if p < 2:
            raise DataValidationError("at least 2 samples are required")
        if X.shape[1] < 1:
            raise DataValidationError("at least one explanatory column is required")
        if len(self.column_names) != X.shape[1]:
            raise DataValidationError("column_names must have one label per column of X")
        if not np.all(np.isfinite(y)):
            raise DataValidationError("y contains non-finite values")
        if not np.all(np.isfinite(X)):
            raise DataValidationError("X contains non-finite values")
        if not np.all(np.isfinite(sigma)):
            raise DataValidationError("sigma contains non-finite values")
        if np.any(sigma <= 0):
            raise DataValidationError("sigma must be positive")
        const = np.all(X == X[0], axis=0)
        if np.any(const):
            j = int(np.flatnonzero(const)[0])
            raise DataValidationError(f"column {self.column_names[j]!r} is constant")

    @property
    def p(self) -> int:
        return self.y.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Noise precisions 1/sigma^2."""
        return 1.0 / self.sigma**2

    def metadata(self) -> dict:
        return {"p": self.p, "N": self.n_features, "column_names": list(self.column_names)}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.y, self.sigma, self.X):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        h.update(json.dumps(list(self.column_names)).encode())
        return h.hexdigest()

    def replace(self, **changes) -> "Dataset":
        kw = dict(y=self.y, sigma=self.sigma, X=self.X, column_names=self.column_names)
        kw.update(changes)
        return Dataset(**kw)


@dataclass(frozen=True)
class SupportSet:
    """Sorted set of active column indices (k >= 1)."""

    indices: tuple[int, ...]

    def __init__(self, indices: Iterable[int]):
        idx = tuple(int(i) for i in indices)
        if len(idx) == 0:
            raise ValueError("a support needs k >= 1 indices")
        if any(i < 0 for i in idx):
            raise ValueError("support indices must be non-negative")
        srt = tuple(sorted(idx))
        if len(set(srt)) != len(srt):
            raise ValueError(f"duplicate indices in support {idx}")
        object.__setattr__(self, "indices", srt)

    @property
    def k(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __len__(self):
        return len(self.indices)

    def __lt__(self, other: "SupportSet") -> bool:
        return self.indices < other.indices

    def names(self, column_names: Sequence[str]) -> list[str]:
        return [column_names[i] for i in self.indices]

    def check_bounds(self, n: int) -> None:
        if self.indices[-1] >= n:
            raise ValueError(f"support index {self.indices[-1]} out of range for N={n}")


def support_to_indicator(s: SupportSet, n: int) -> np.ndarray:
    s.check_bounds(n)
    c = np.zeros(n, dtype=np.int8)
    c[list(s.indices)] = 1
    return c


def indicator_to_support(c) -> SupportSet:
    c = np.asarray(c)
    if c.ndim != 1 or not np.all((c == 0) | (c == 1)):
        raise ValueError("indicator must be a 0/1 vector")
    return SupportSet(np.flatnonzero(c))


@dataclass(frozen=True)
class ScalingInfo:
    y_mean: float
    y_std: float
    x_means: np.ndarray
    x_stds: np.ndarray
    weighted: bool = False


def _means(d: Dataset, weighted: bool):
    if weighted:
        w = d.weights / d.weights.sum()
        return float(w @ d.y), w @ d.X
    return float(d.y.mean()), d.X.mean(axis=0)


def standardize(d: Dataset, weighted: bool = False) -> tuple[Dataset, ScalingInfo]:
    """Standardize ``y`` to zero mean and unit (population) variance and center ``X``.

    ``sigma`` is divided by the same ``y_std`` so relative noise weights are
    kept.  With ``weighted=True`` the centering uses noise-precision weighted
    means, which removes the intercept exactly under the weighted loss.
    """
    y_mean, x_means = _means(d, weighted)
    yc = d.y - y_mean
    y_std = float(np.sqrt(np.mean(yc**2)))
    if not y_std > 0:
        raise DataValidationError("y has zero variance; cannot standardize")
    x_stds = d.X.std(axis=0)
    info = ScalingInfo(y_mean, y_std, _frozen(x_means), _frozen(x_stds), weighted)
    out = d.replace(y=yc / y_std, sigma=d.sigma / y_std, X=d.X - x_means)
    return out, info


def destandardize(d: Dataset, info: ScalingInfo) -> Dataset:
    return d.replace(
        y=d.y * info.y_std + info.y_mean,
        sigma=d.sigma * info.y_std,
        X=d.X + info.x_means,
    )


def weighted_center(d: Dataset) -> Dataset:
    """Subtract noise-precision weighted means from ``y`` and every column of ``X``.

    After this the weighted least-squares intercept is exactly zero, so the
    criteria can be evaluated without an explicit intercept term.
    """
    y_mean, x_means = _means(d, weighted=True)
    return d.replace(y=d.y - y_mean, X=d.X - x_means)


def load_dataset(path, constant_sigma: float | None = None, delimiter: str = ",") -> Dataset:
    """Read a CSV with header ``y,sigma,<name1>,...``.

    With ``constant_sigma`` the ``sigma`` column may be omitted (header
    ``y,<name1>,...``) and is filled with that value.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "y":
        raise DataParseError("first header column must be 'y'", row=1, col=1)
    has_sigma = len(header) > 1 and header[1] == "sigma"
    if not has_sigma and constant_sigma is None:
        raise DataParseError("second header column must be 'sigma'", row=1, col=2)
    first_x = 2 if has_sigma else 1
    names = header[first_x:]
    if not names:
        raise DataParseError("no explanatory columns", row=1)
    values = np.empty((len(rows) - 1, len(header)))
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise DataParseError(f"expected {len(header)} fields, got {len(r)}", row=i)
        for j, cell in enumerate(r):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataParseError(f"cannot parse {cell!r} as a number", row=i, col=j + 1) from None
    y = values[:, 0]
    if has_sigma and constant_sigma is None:
        sigma = values[:, 1]
    else:
        sigma = np.full(len(y), 1.0 if constant_sigma is None else float(constant_sigma))
    return Dataset(y=y, sigma=sigma, X=values[:, first_x:], column_names=tuple(names))


def save_dataset(d: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "sigma", *d.column_names])
        for i in range(d.p):
            w.writerow([repr(float(d.y[i])), repr(float(d.sigma[i]))] + [repr(float(v)) for v in d.X[i]])
