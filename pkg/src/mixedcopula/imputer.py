"""Conditional imputation of missing cells.

Given the observed values of a row, the missing latents and the observed
discrete latents are jointly normal after conditioning on the observed
continuous latents.  The observed discrete variables restrict that vector to
a box (through the same contrasts as the likelihood), and the quantities we
want are truncated-normal expectations over it: the latent mean of each
missing continuous variable and the category probabilities of each missing
discrete variable.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .likelihood import _multinomial_contrast, _row_term, row_key
from .marginals import latent_table
from .mvn_rqmc import (GaussianParams, Identity, IntegrationBox, RqmcConfig,
                      derive_seed, integrate, phi)
from .schema import VariableKind
from .simulate import category_probabilities

__all__ = ["CellImputation", "ImputationResult", "impute_row",
           "impute_dataset", "median_category", "RULES"]

RULES = ("argmax", "median")


def median_category(probs):
    """Smallest category whose cumulative probability reaches one half."""
    cum = np.cumsum(probs)
    return int(np.searchsorted(cum, 0.5 - 1e-12, side="left"))


@dataclass
class CellImputation:
    """Imputation of one missing cell.

    Continuous cells fill ``value`` and ``latent_mean``; discrete cells fill
    ``probs`` and ``argmax``, and binary and ordinal cells also ``median``.
    """
    column: int
    kind: VariableKind
    value: float = math.nan
    latent_mean: float = math.nan
    probs: Optional[np.ndarray] = None
    argmax: Optional[int] = None
    median: Optional[int] = None

    def pick(self, rule):
        if self.kind is VariableKind.CONTINUOUS:
            return self.value
        if rule == "median" and self.median is not None:
            return float(self.median)
        return float(self.argmax)


@dataclass
class ImputationResult:
    row: int
    cells: list = field(default_factory=list)
    converged: bool = True
    fully_missing: bool = False

    def cell(self, column):
        for c in self.cells:
            if c.column == column:
                return c
        raise KeyError(column)


def _discrete_cell(j, kind, probs):
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    probs = probs / probs.sum()
    med = median_category(probs) if kind is not VariableKind.MULTINOMIAL \
        else None
    return CellImputation(j, kind, probs=probs, argmax=int(np.argmax(probs)),
                          median=med)


def _cuts(var, marg):
    if var.kind is VariableKind.BINARY:
        return np.array([0.0])
    return np.asarray(marg.thresholds, dtype=float)


def _marginal_row(i, params, marginals, layout):
    """Imputation without any observed value: unconditional quantities."""
    S, mu = params.sigma, params.mean
    res = ImputationResult(i, fully_missing=True)
    for j, (var, marg) in enumerate(zip(layout.schema, marginals)):
        e = layout.eff_indices(j)
        if var.kind is VariableKind.CONTINUOUS:
            res.cells.append(CellImputation(
                j, var.kind, value=float(marg.from_latent(0.0)),
                latent_mean=0.0))
        elif var.kind is VariableKind.MULTINOMIAL:
            res.cells.append(_discrete_cell(j, var.kind, category_probabilities(
                S[np.ix_(e, e)], mu[e])))
        else:
            sd = math.sqrt(S[e[0], e[0]])
            b = np.concatenate([[-np.inf], _cuts(var, marg), [np.inf]])
            res.cells.append(_discrete_cell(
                j, var.kind, np.diff(phi((b - mu[e[0]]) / sd))))
    return res


def _impute_observed(i, key, row, z, lo, hi, params, marginals, layout,
                     config):
    schema = layout.schema
    S, mu = params.sigma, params.mean
    obs = ~np.isnan(row)
    term = _row_term(i, key, obs, z, lo, hi, row, layout)
    C, Y, A = term.cont, term.disc, term.A
    missing = [j for j in range(len(schema)) if not obs[j]]
    U = np.concatenate([layout.eff_indices(j) for j in missing]).astype(int)
    R = np.concatenate([Y, U]).astype(int)
    # condition every remaining latent on the observed continuous ones
    if C.size:
        S_CC = S[np.ix_(C, C)]
        B = np.linalg.solve(S_CC, S[np.ix_(C, R)]).T
        mean = mu[R] + B @ term.z
        cov = S[np.ix_(R, R)] - B @ S[np.ix_(C, R)]
    else:
        mean = mu[R].copy()
        cov = S[np.ix_(R, R)].copy()
    nY = Y.size
    T = np.eye(R.size)
    T[:nY, :nY] = A
    mean = T @ mean
    cov = T @ cov @ T.T
    cov = 0.5 * (cov + cov.T)

    res = ImputationResult(i)
    # positions of each missing variable inside the transformed vector
    pos, off = {}, nY
    for j in missing:
        k = layout.eff_indices(j).size
        pos[j] = np.arange(off, off + k)
        off += k
    cont = [j for j in missing if schema[j].kind is VariableKind.CONTINUOUS]
    disc = [j for j in missing if schema[j].is_discrete]

    if nY == 0:
        # plain Gaussian conditioning: continuous means are exact
        for j in cont:
            p = pos[j][0]
            res.cells.append(CellImputation(
                j, schema[j].kind, value=float(marginals[j].from_latent(mean[p])),
                latent_mean=float(mean[p])))
        for j in disc:
            var, p = schema[j], pos[j]
            if var.kind is VariableKind.MULTINOMIAL:
                probs = category_probabilities(cov[np.ix_(p, p)], mean[p])
            else:
                b = np.concatenate([[-np.inf], _cuts(var, marginals[j]),
                                    [np.inf]])
                probs = np.diff(phi((b - mean[p[0]]) / math.sqrt(cov[p[0], p[0]])))
            res.cells.append(_discrete_cell(j, var.kind, probs))
        res.cells.sort(key=lambda c: c.column)
        return res

    lower = np.concatenate([term.lower, np.full(R.size - nY, -np.inf)])
    upper = np.concatenate([term.upper, np.full(R.size - nY, np.inf)])
    seed_cfg = config.replace(seed=derive_seed(config.seed, key))
    V = np.arange(nY)

    def sub(idx, lo_extra=(), hi_extra=(), A_extra=None):
        # unbounded coordinates integrate out exactly, so keep only ``idx``
        m, c = mean[idx], cov[np.ix_(idx, idx)]
        if A_extra is not None:
            T = np.eye(idx.size)
            T[nY:, nY:] = A_extra
            m, c = T @ m, T @ c @ T.T
        lo_ = np.concatenate([lower[V], lo_extra])
        hi_ = np.concatenate([upper[V], hi_extra])
        return IntegrationBox(lo_, hi_), GaussianParams(m, 0.5 * (c + c.T))

    converged = True
    if cont:
        idx = np.concatenate([V, [pos[j][0] for j in cont]]).astype(int)
        box, gp = sub(idx, np.full(len(cont), -np.inf),
                      np.full(len(cont), np.inf))
        cdf, num = integrate(box, gp, Identity(np.arange(nY, idx.size)),
                             seed_cfg)
        converged &= bool(cdf.converged and num.converged)
        for k, j in enumerate(cont):
            zj = float(num.value[k] / cdf.value)
            res.cells.append(CellImputation(
                j, schema[j].kind, value=float(marginals[j].from_latent(zj)),
                latent_mean=zj))
    for j in disc:
        var = schema[j]
        idx = np.concatenate([V, pos[j]]).astype(int)
        joint = []
        if var.kind is VariableKind.MULTINOMIAL:
            k = pos[j].size
            for c in range(k + 1):
                box, gp = sub(idx, np.full(k, -np.inf), np.zeros(k),
                              _multinomial_contrast(k + 1, c))
                est, _ = integrate(box, gp, None, seed_cfg)
                joint.append(est.value)
                converged &= bool(est.converged)
        else:
            b = np.concatenate([[-np.inf], _cuts(var, marginals[j]), [np.inf]])
            for c in range(b.size - 1):
                box, gp = sub(idx, [b[c]], [b[c + 1]])
                est, _ = integrate(box, gp, None, seed_cfg)
                joint.append(est.value)
                converged &= bool(est.converged)
        res.cells.append(_discrete_cell(j, var.kind, joint))
    res.converged = converged
    res.cells.sort(key=lambda c: c.column)
    return res


def impute_row(row, params, marginals, config=None, index=0):
    """Impute the missing cells of one row (NaN marks a missing cell)."""
    if config is None:
        config = RqmcConfig.for_imputation()
    layout = params.layout
    row = np.asarray(row, dtype=float)
    if not np.isnan(row).any():
        return ImputationResult(index)
    if np.isnan(row).all():
        return _marginal_row(index, params, marginals, layout)
    z, lo, hi = latent_table(row[None, :], marginals, layout.schema)
    return _impute_observed(index, row_key(row), row, z[0], lo[0], hi[0],
                            params, marginals, layout, config)


def impute_dataset(data, params, marginals, config=None, rule="argmax"):
    """Fill every missing cell of ``data``.

    Continuous cells get the conditional latent mean mapped through the
    marginal; discrete cells the category picked by ``rule`` (``"argmax"``
    or ``"median"``).  Observed cells are copied unchanged.  Returns the
    completed table and one :class:`ImputationResult` per row with a missing
    cell.
    """
    if rule not in RULES:
        raise ValueError(f"rule must be one of {RULES}")
    if config is None:
        config = RqmcConfig.for_imputation()
    layout = params.layout
    data = np.asarray(data, dtype=float)
    out = data.copy()
    z, lo, hi = latent_table(data, marginals, layout.schema)
    results = []
    for i in np.flatnonzero(np.isnan(data).any(axis=1)):
        row = data[i]
        if np.isnan(row).all():
            res = _marginal_row(int(i), params, marginals, layout)
        else:
            res = _impute_observed(int(i), row_key(row), row, z[i], lo[i],
                                   hi[i], params, marginals, layout, config)
        for cell in res.cells:
            out[i, cell.column] = cell.pick(rule)
        results.append(res)
    return out, results
