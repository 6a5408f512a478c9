"""Log marginal likelihood of mixed rows and its gradient in ``theta``.

For a row with observed continuous latents ``z`` (indices ``C``) and observed
discrete latents ``Y`` the term is

    log phi(z; 0, Sigma_CC) + log P(a < A Y < b | Y_C = z)

where ``Y | z ~ N(mu_bar, S_bar)`` with ``mu_bar = mu_Y + B z``,
``S_bar = Sigma_YY - B Sigma_CY`` and ``B = Sigma_YC Sigma_CC^{-1}``.  The
contrast matrix ``A`` is the identity on binary and ordinal latents; for a
multinomial with observed category ``c > 0`` it maps the block to
``Z_k - Z_c`` (``k != c``) and ``-Z_c``, all bounded above by zero, and for
``c = 0`` it keeps every block latent, again bounded above by zero.

Rows sharing the same observed sets and multinomial categories form a
pattern and share ``B``, ``S_bar`` and ``A``, so each pattern is one batched
RQMC call.  Per-row seeds come from a hash of the row contents, which makes
every term independent of the position of the row in the table.
"""
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._kernels import W_FLOOR
from .copula_model import CopulaParams, theta_gradient
from .marginals import latent_table
from .mvn_rqmc import (GaussianParams, IntegrationBox, RqmcConfig,
                      RqmcEstimate, box_probabilities, cdf_gradient,
                      derive_seed)
from .schema import VariableKind

__all__ = [
    "ObservationTerm", "PatternBatch", "TermSet", "LoglikResult",
    "build_terms", "loglik_term", "loglik_gradient_term", "total_loglik",
    "loglik_direct", "row_key",
]

LOG_2PI = math.log(2.0 * math.pi)
S_BAR_PIVOT = 1e-12
S_BAR_JITTER = 1e-10


def row_key(row):
    """64-bit hash of the observed cells of a row and their positions.

    Missing cells do not enter, so appending a column that is missing
    everywhere keeps every key (and hence every RQMC seed) unchanged.
    """
    row = np.asarray(row, dtype=np.float64)
    obs = np.flatnonzero(~np.isnan(row))
    payload = obs.astype(np.int64).tobytes() + (row[obs] + 0.0).tobytes()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(),
                          "little")


@dataclass
class ObservationTerm:
    """Latent-scale view of one row, laid out for the likelihood.

    ``cont`` and ``disc`` are effective latent indices; ``A`` maps the
    discrete latents to the variables whose box is ``(lower, upper)``.
    """
    row: int
    key: int
    cont: np.ndarray
    z: np.ndarray
    disc: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    categories: tuple = ()

    @property
    def pattern(self):
        return (tuple(self.cont), tuple(self.disc), self.categories)


@dataclass
class PatternBatch:
    cont: np.ndarray
    disc: np.ndarray
    A: np.ndarray
    rows: np.ndarray
    keys: np.ndarray
    z: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __len__(self):
        return self.rows.size

    def take(self, idx):
        return PatternBatch(self.cont, self.disc, self.A, self.rows[idx],
                            self.keys[idx], self.z[idx], self.lower[idx],
                            self.upper[idx])


@dataclass
class TermSet:
    """All likelihood terms of a table grouped by pattern.

    Patterns are sorted by their key and rows inside a pattern by content
    hash, so the evaluation order does not depend on the row order of the
    table.  Fully missing rows carry no information and are left out.
    """
    layout: object
    n_rows: int
    batches: list
    empty_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    @property
    def n_terms(self):
        return sum(len(b) for b in self.batches)

    def select(self, rows):
        """Sub-set containing only the given original row indices."""
        want = np.zeros(self.n_rows, dtype=bool)
        want[np.asarray(rows, dtype=np.int64)] = True
        out = []
        for b in self.batches:
            keep = np.flatnonzero(want[b.rows])
            if keep.size:
                out.append(b.take(keep))
        return TermSet(self.layout, self.n_rows, out)

    def terms(self):
        for b in self.batches:
            for i in range(len(b)):
                yield ObservationTerm(int(b.rows[i]), int(b.keys[i]), b.cont,
                                      b.z[i], b.disc, b.A, b.lower[i],
                                      b.upper[i])


def _multinomial_contrast(m, c):
    """Contrast rows for a block of ``m - 1`` latents with category ``c``."""
    k = m - 1
    if c == 0:
        return np.eye(k)
    A = np.eye(k)
    A[:, c - 1] -= 1.0
    A[c - 1, c - 1] = -1.0
    return A


def _row_term(i, key, obs, zrow, lrow, urow, raw, layout):
    schema = layout.schema
    cont, z, disc, lower, upper, blocks, cats = [], [], [], [], [], [], []
    for j, var in enumerate(schema):
        if not obs[j]:
            continue
        e = layout.eff_indices(j)
        if var.kind is VariableKind.CONTINUOUS:
            cont.append(e[0])
            z.append(zrow[j])
        elif var.kind is VariableKind.MULTINOMIAL:
            c = int(raw[j])
            disc.extend(e)
            lower.extend([-np.inf] * e.size)
            upper.extend([0.0] * e.size)
            blocks.append(_multinomial_contrast(var.levels, c))
            cats.append((j, c))
        else:
            disc.append(e[0])
            lower.append(lrow[j])
            upper.append(urow[j])
            blocks.append(np.eye(1))
    A = np.zeros((len(disc), len(disc)))
    r = 0
    for blk in blocks:
        A[r:r + blk.shape[0], r:r + blk.shape[0]] = blk
        r += blk.shape[0]
    return ObservationTerm(i, key, np.array(cont, dtype=np.int64),
                           np.array(z, dtype=float),
                           np.array(disc, dtype=np.int64), A,
                           np.array(lower, dtype=float),
                           np.array(upper, dtype=float), tuple(cats))


def build_terms(data, marginals, layout):
    """Group the rows of ``data`` into likelihood patterns."""
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    z, lower, upper = latent_table(data, marginals, layout.schema)
    observed = ~np.isnan(data)
    groups = {}
    empty = []
    for i in range(n):
        if not observed[i].any():
            empty.append(i)
            continue
        t = _row_term(i, row_key(data[i]), observed[i], z[i], lower[i],
                      upper[i], data[i], layout)
        groups.setdefault(t.pattern, []).append(t)
    batches = []
    for pattern in sorted(groups):
        ts = sorted(groups[pattern], key=lambda t: (t.key, t.row))
        t0 = ts[0]
        batches.append(PatternBatch(
            t0.cont, t0.disc, t0.A,
            np.array([t.row for t in ts], dtype=np.int64),
            np.array([t.key for t in ts], dtype=np.uint64),
            np.array([t.z for t in ts]).reshape(len(ts), t0.cont.size),
            np.array([t.lower for t in ts]).reshape(len(ts), t0.disc.size),
            np.array([t.upper for t in ts]).reshape(len(ts), t0.disc.size)))
    return TermSet(layout, n, batches, np.array(empty, dtype=np.int64))


@dataclass
class LoglikResult:
    """Sum of log-likelihood terms with diagnostics.

    ``values`` and ``rows`` list the individual terms in evaluation order;
    ``gradient`` is with respect to ``theta`` (None when not requested).
    """
    value: float
    gradient: Optional[np.ndarray]
    values: np.ndarray
    errors: np.ndarray
    rows: np.ndarray
    converged: np.ndarray
    underflow: np.ndarray
    samples: Optional[np.ndarray] = None

    @property
    def n_unconverged(self):
        return int((~self.converged).sum())

    @property
    def n_underflow(self):
        return int(self.underflow.sum())


def _conditional(S, mu, batch):
    """Continuous log-density and conditional moments of one pattern."""
    C, Y = batch.cont, batch.disc
    n = len(batch)
    if C.size:
        fac = cho_factor(S[np.ix_(C, C)], lower=True)
        logdet = 2.0 * np.log(np.diag(fac[0])).sum()
        zt = cho_solve(fac, batch.z.T).T
        logdens = -0.5 * (C.size * LOG_2PI + logdet
                          + np.einsum("ij,ij->i", batch.z, zt))
        B = cho_solve(fac, S[np.ix_(C, Y)]).T
        S_bar = S[np.ix_(Y, Y)] - B @ S[np.ix_(C, Y)]
        mu_bar = mu[Y] + batch.z @ B.T
    else:
        fac, zt, B = None, np.zeros((n, 0)), np.zeros((Y.size, 0))
        logdens = np.zeros(n)
        S_bar = S[np.ix_(Y, Y)].copy()
        mu_bar = np.broadcast_to(mu[Y], (n, Y.size))
    if Y.size:
        S_bar = 0.5 * (S_bar + S_bar.T)
        if np.linalg.eigvalsh(S_bar)[0] < S_BAR_PIVOT:
            S_bar = S_bar + S_BAR_JITTER * np.eye(Y.size)
    return fac, zt, B, S_bar, mu_bar, logdens


def _pattern(S, mu, batch, config, stream, want_grad, G, g):
    """Evaluate one pattern, adding its gradient into ``G`` and ``g``."""
    C, Y = batch.cont, batch.disc
    n = len(batch)
    fac, zt, B, S_bar, mu_bar, logdens = _conditional(S, mu, batch)
    errors = np.zeros(n)
    samples = np.zeros(n, dtype=np.int64)
    conv = np.ones(n, dtype=bool)
    under = np.zeros(n, dtype=bool)
    values = logdens.copy()
    Gm = GS = None
    if Y.size:
        A = batch.A
        M = A @ S_bar @ A.T
        m = mu_bar @ A.T
        seeds = [derive_seed(config.seed, stream, k) for k in batch.keys]
        res = box_probabilities(batch.lower, batch.upper, m, M, config,
                                seeds=seeds, want_grad=want_grad)
        p = res["value"]
        under = p < W_FLOOR
        conv = res["converged"] & ~under
        pf = np.maximum(p, W_FLOOR)
        values += np.log(pf)
        errors = res["error"] / pf
        samples = res["samples"]
        if want_grad:
            w = np.where(under, 0.0, 1.0 / pf)
            Gm = (res["d_mean"] * w[:, None]) @ A
            GS = np.einsum("ji,njk,kl->il", A, res["d_cov"] * w[:, None, None],
                           A)
    if want_grad:
        if C.size:
            Sinv = cho_solve(fac, np.eye(C.size))
            G[np.ix_(C, C)] += 0.5 * (zt.T @ zt - n * Sinv)
        if Y.size:
            Gm_sum = Gm.sum(axis=0)
            G[np.ix_(Y, Y)] += GS
            g[Y] += Gm_sum
            if C.size:
                Gmz = Gm.T @ zt
                GYC = 0.5 * (Gmz - 2.0 * GS @ B)
                G[np.ix_(Y, C)] += GYC
                G[np.ix_(C, Y)] += GYC.T
                G[np.ix_(C, C)] += (-0.5 * (B.T @ Gmz + Gmz.T @ B)
                                    + B.T @ GS @ B)
    return values, errors, conv, under, samples


def total_loglik(terms, params, config=RqmcConfig(), want_grad=False, stream=0):
    """Sum of log-likelihood terms, optionally with the ``theta`` gradient.

    ``stream`` is mixed into every row seed; the estimator passes the epoch
    so that different epochs see independent randomizations.  The value is
    summed exactly (``math.fsum``), so it does not depend on the order of
    the rows and duplicating every row doubles it exactly.
    """
    if terms.n_terms == 0:
        raise ValueError("no rows with observed values")
    layout = params.layout
    S, mu = params.sigma, params.mean
    G = np.zeros((layout.W_eff, layout.W_eff))
    g = np.zeros(layout.W_eff)
    parts = [_pattern(S, mu, b, config, stream, want_grad, G, g)
             for b in terms.batches]
    values = np.concatenate([p[0] for p in parts])
    grad = theta_gradient(layout, params.theta, G, g) if want_grad else None
    return LoglikResult(
        value=math.fsum(values.tolist()), gradient=grad, values=values,
        errors=np.concatenate([p[1] for p in parts]),
        rows=np.concatenate([b.rows for b in terms.batches]),
        converged=np.concatenate([p[2] for p in parts]),
        underflow=np.concatenate([p[3] for p in parts]),
        samples=np.concatenate([p[4] for p in parts]))


def _single(term, layout):
    return TermSet(layout, term.row + 1, [PatternBatch(
        term.cont, term.disc, term.A, np.array([term.row]),
        np.array([term.key], dtype=np.uint64), term.z[None, :],
        term.lower[None, :], term.upper[None, :])])


def loglik_term(term, params, config=RqmcConfig(), stream=0):
    """Log-likelihood of one row as an :class:`RqmcEstimate`."""
    r = total_loglik(_single(term, params.layout), params, config, False, stream)
    return RqmcEstimate(r.value, float(r.errors[0]), int(r.samples[0]),
                        bool(r.converged[0]))


def loglik_gradient_term(term, params, config=RqmcConfig(), stream=0):
    """``(value, grad_theta)`` of one row."""
    r = total_loglik(_single(term, params.layout), params, config, True, stream)
    return r.value, r.gradient


def loglik_direct(row, params, marginals, config=RqmcConfig()):
    """Row log-likelihood computed without the pattern machinery.

    Only for schemas without multinomial variables; conditions on the
    continuous latents with an explicit inverse and integrates the discrete
    box with a single RQMC call seeded by ``config.seed``.  Used to
    cross-check :func:`total_loglik`.
    """
    layout = params.layout
    schema = layout.schema
    if schema.indices(VariableKind.MULTINOMIAL):
        raise ValueError("the direct form has no multinomial variables")
    row = np.asarray(row, dtype=float)
    z, lo, hi = latent_table(row[None, :], marginals, schema)
    obs = ~np.isnan(row)
    C = [j for j in range(len(schema)) if obs[j]
         and schema[j].kind is VariableKind.CONTINUOUS]
    D = [j for j in range(len(schema)) if obs[j] and schema[j].is_discrete]
    S, mu = params.sigma, params.mean
    zc = z[0, C]
    S_CC = S[np.ix_(C, C)]
    S_CC_inv = np.linalg.inv(S_CC) if C else np.zeros((0, 0))
    value = 0.0
    if C:
        _, logdet = np.linalg.slogdet(S_CC)
        value = -0.5 * (len(C) * LOG_2PI + logdet + zc @ S_CC_inv @ zc)
    if not D:
        return RqmcEstimate(value, 0.0, 0, True)
    S_DC = S[np.ix_(D, C)]
    mean = mu[D] + S_DC @ S_CC_inv @ zc
    cov = S[np.ix_(D, D)] - S_DC @ S_CC_inv @ S_DC.T
    cov = 0.5 * (cov + cov.T)
    est, _, _ = cdf_gradient(IntegrationBox(lo[0, D], hi[0, D]),
                             GaussianParams(mean, cov), config)
    p = max(est.value, W_FLOOR)
    return RqmcEstimate(value + math.log(p), est.error_estimate / p,
                        est.samples_used, est.converged and est.value >= W_FLOOR)
