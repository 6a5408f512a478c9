"""Marginal models and the map between observed values and the latent scale.

Continuous variables use the rescaled empirical CDF ``rank / (n + 1)`` (ties
share their average rank) composed with the normal quantile.  Binary
variables get a latent mean ``Phi^{-1}(p)`` with threshold 0, ordinal
variables fixed thresholds at the normal quantiles of the cumulative
category frequencies.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .mvn_rqmc import phi_inv
from .schema import VariableKind

__all__ = [
    "DegenerateMarginalError", "ContinuousMarginal", "BinaryMarginal",
    "OrdinalMarginal", "MultinomialMarginal", "LatentObservation",
    "fit_marginals", "to_latent", "from_latent", "latent_table",
]


class DegenerateMarginalError(ValueError):
    """A column cannot support a marginal model (constant or unseen level)."""


@dataclass(frozen=True)
class ContinuousMarginal:
    """Monotone interpolation between distinct observed values and latents."""
    knots_x: np.ndarray
    knots_z: np.ndarray
    n_observed: int

    def to_latent(self, x):
        x = np.asarray(x, dtype=float)
        ok = ~np.isnan(x)
        outside = ok & ((x < self.knots_x[0]) | (x > self.knots_x[-1]))
        if outside.any():
            warnings.warn("continuous value outside the observed range; "
                          "clamped to the extreme quantile", RuntimeWarning,
                          stacklevel=2)
        return np.interp(x, self.knots_x, self.knots_z)

    def from_latent(self, z):
        return np.interp(z, self.knots_z, self.knots_x)


@dataclass(frozen=True)
class BinaryMarginal:
    p: float

    @property
    def mean(self):
        return float(phi_inv(self.p))


@dataclass(frozen=True)
class OrdinalMarginal:
    thresholds: np.ndarray
    frequencies: np.ndarray

    @property
    def levels(self):
        return self.frequencies.shape[0]

    def bounds(self):
        """Category borders including the infinite outer ones."""
        return np.concatenate([[-np.inf], self.thresholds, [np.inf]])


@dataclass(frozen=True)
class MultinomialMarginal:
    frequencies: np.ndarray

    @property
    def levels(self):
        return self.frequencies.shape[0]


def _observed(column, name):
    x = column[~np.isnan(column)]
    if np.unique(x).size < 2:
        raise DegenerateMarginalError(
            f"column {name!r} has fewer than two distinct observed values")
    return x


def _frequencies(x, levels, name):
    codes = x.astype(int)
    if np.any(codes != x) or codes.min() < 0 or codes.max() >= levels:
        raise DegenerateMarginalError(
            f"column {name!r} has codes outside 0..{levels - 1}")
    counts = np.bincount(codes, minlength=levels)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise DegenerateMarginalError(
            f"column {name!r} never shows categories {missing}")
    return counts / counts.sum()


def fit_continuous(x):
    x = np.asarray(x, dtype=float)
    n = x.size
    z = phi_inv(rankdata(x, method="average") / (n + 1))
    knots_x, first = np.unique(x, return_index=True)
    return ContinuousMarginal(knots_x, np.asarray(z)[first], n)


def fit_marginals(data, schema):
    """Fit one marginal per column of `data` (NaN marks a missing cell)."""
    data = np.asarray(data, dtype=float)
    if data.shape[1] != len(schema):
        raise ValueError("data and schema disagree on the number of columns")
    out = []
    for j, var in enumerate(schema):
        x = _observed(data[:, j], var.name)
        if var.kind is VariableKind.CONTINUOUS:
            out.append(fit_continuous(x))
            continue
        freq = _frequencies(x, var.levels, var.name)
        if var.kind is VariableKind.BINARY:
            out.append(BinaryMarginal(float(freq[1])))
        elif var.kind is VariableKind.ORDINAL:
            cum = np.cumsum(freq)[:-1]
            out.append(OrdinalMarginal(np.asarray(phi_inv(cum)), freq))
        else:
            out.append(MultinomialMarginal(freq))
    return tuple(out)


@dataclass
class LatentObservation:
    """Latent-scale view of one row.

    ``z`` maps observed continuous columns to their latent value,
    ``intervals`` maps observed binary and ordinal columns to ``(a, b)`` and
    ``categories`` maps observed multinomial columns to their category.
    """
    z: dict
    intervals: dict
    categories: dict


def to_latent(row, marginals, schema):
    row = np.asarray(row, dtype=float)
    z, intervals, categories = {}, {}, {}
    for j, (var, marg) in enumerate(zip(schema, marginals)):
        x = row[j]
        if np.isnan(x):
            continue
        if var.kind is VariableKind.CONTINUOUS:
            z[j] = float(marg.to_latent(x))
        elif var.kind is VariableKind.BINARY:
            intervals[j] = (0.0, np.inf) if x == 1 else (-np.inf, 0.0)
        elif var.kind is VariableKind.ORDINAL:
            b = marg.bounds()
            intervals[j] = (float(b[int(x)]), float(b[int(x) + 1]))
        else:
            categories[j] = int(x)
    return LatentObservation(z, intervals, categories)


def from_latent(z, marginal):
    """Map latent values of a continuous variable back to the data scale."""
    return marginal.from_latent(z)


def latent_table(data, marginals, schema):
    """Vectorized latent view of a whole table.

    Returns ``(z, lower, upper)``: ``z`` holds continuous latents, ``lower``
    and ``upper`` the latent intervals of binary and ordinal cells; every
    other cell is NaN.
    """
    data = np.asarray(data, dtype=float)
    n, K = data.shape
    z = np.full((n, K), np.nan)
    lower = np.full((n, K), np.nan)
    upper = np.full((n, K), np.nan)
    for j, (var, marg) in enumerate(zip(schema, marginals)):
        col = data[:, j]
        obs = ~np.isnan(col)
        if var.kind is VariableKind.CONTINUOUS:
            z[obs, j] = marg.to_latent(col[obs])
        elif var.kind is VariableKind.BINARY:
            one = obs & (col == 1)
            zero = obs & (col == 0)
            lower[one, j], upper[one, j] = 0.0, np.inf
            lower[zero, j], upper[zero, j] = -np.inf, 0.0
        elif var.kind is VariableKind.ORDINAL:
            b = marg.bounds()
            codes = col[obs].astype(int)
            lower[obs, j] = b[codes]
            upper[obs, j] = b[codes + 1]
    return z, lower, upper
