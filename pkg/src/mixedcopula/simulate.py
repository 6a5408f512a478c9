"""Synthetic mixed-type tables drawn from a Gaussian copula."""
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
from scipy import optimize, stats
from scipy.special import log_ndtr

from .copula_model import LatentLayout, assemble_psi, rescale_to_unit_diagonal
from .mvn_rqmc import (GaussianParams, IntegrationBox, fixed_lattice_estimate,
                      phi_inv)
from .schema import Schema, VariableKind

__all__ = ["SimConfig", "SimResult", "simulate", "category_probabilities",
           "equal_probability_means", "read_sim_config"]


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``dof`` defaults to the effective latent dimension.  ``marginal`` is the
    distribution of the continuous columns, either ``"exponential"``
    (standard exponential) or ``"normal"`` (the latent itself).
    """
    n: int = 1000
    n_continuous: int = 2
    n_binary: int = 2
    n_ordinal: int = 2
    n_multinomial: int = 0
    ordinal_levels: int = 5
    multinomial_levels: int = 5
    missing_rate: float = 0.3
    dof: Optional[int] = None
    binary_p: float = 0.5
    marginal: str = "exponential"
    seed: int = 1

    def __post_init__(self):
        counts = (self.n_continuous, self.n_binary, self.n_ordinal,
                  self.n_multinomial)
        if min(counts) < 0 or sum(counts) == 0:
            raise ValueError("variable counts must be >= 0 and not all zero")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if not 0.0 < self.binary_p < 1.0:
            raise ValueError("binary_p must lie in (0, 1)")
        if self.marginal not in ("exponential", "normal"):
            raise ValueError("marginal must be 'exponential' or 'normal'")
        W = self.layout().W_eff
        if self.dof is not None and self.dof < W:
            raise ValueError(f"dof must be at least the latent dimension {W}")

    def schema(self):
        return Schema.from_counts(self.n_continuous, self.n_binary,
                                  self.n_ordinal, self.n_multinomial,
                                  self.ordinal_levels, self.multinomial_levels)

    def layout(self):
        return LatentLayout(self.schema())


def read_sim_config(path, **overrides):
    """Parse a flat ``key=value`` file into a :class:`SimConfig`."""
    types = {f.name: f.type for f in fields(SimConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SimConfig(**values)


def _parse_value(key, val):
    if key == "marginal":
        return val
    if key in ("missing_rate", "binary_p"):
        return float(val)
    if key == "dof" and val.lower() in ("", "none"):
        return None
    return int(val)


@dataclass
class SimResult:
    """Simulated table and the truth that generated it.

    ``sigma`` and ``mean`` are the effective covariance and mean (see
    :mod:`mixedcopula.copula_model`), ``psi`` and ``mu_full`` their full
    expansions, and ``mask`` is True where a cell was removed.
    """
    schema: Schema
    complete: np.ndarray
    masked: np.ndarray
    mask: np.ndarray
    sigma: np.ndarray
    mean: np.ndarray
    psi: np.ndarray
    mu_full: np.ndarray
    latent: np.ndarray


def category_probabilities(S_block, mean, n_points=4621, n_randomizations=8,
                           seed=7):
    """Category probabilities of one multinomial block.

    ``S_block`` and ``mean`` describe the non-reference latents; the
    reference latent is zero.  A fixed lattice makes the result a smooth
    deterministic function of ``mean``.
    """
    mean = np.asarray(mean, dtype=float)
    k = mean.size
    out = np.empty(k + 1)
    lower = np.full(k, -np.inf)
    upper = np.zeros(k)
    for c in range(k + 1):
        A = np.eye(k)
        if c > 0:
            A[:, c - 1] -= 1.0
            A[c - 1, c - 1] = -1.0
        cov = A @ S_block @ A.T
        out[c], _ = fixed_lattice_estimate(
            IntegrationBox(lower, upper),
            GaussianParams(A @ mean, 0.5 * (cov + cov.T)), n_points,
            n_randomizations, seed)
    return out


def equal_probability_means(S_block):
    """Means of the non-reference latents that make all categories equally likely."""
    k = S_block.shape[0]
    target = np.full(k + 1, 1.0 / (k + 1))

    def resid(mu):
        p = category_probabilities(S_block, mu)
        return np.log(np.maximum(p[1:], 1e-300)) - np.log(max(p[0], 1e-300))

    start = np.full(k, float(phi_inv(0.5)))
    sol = optimize.root(resid, start, method="hybr")
    mu = sol.x
    if not np.allclose(category_probabilities(S_block, mu), target, atol=1e-3):
        raise RuntimeError("could not equalize the category probabilities")
    return mu


def _transform(z, marginal):
    if marginal == "normal":
        return z.copy()
    # standard exponential quantile of Phi(z), written to stay accurate in the
    # upper tail: -log(1 - Phi(z)) = -log Phi(-z)
    return -log_ndtr(-z)


def simulate(config):
    """Draw a table, its MCAR mask and the generating parameters."""
    rng = np.random.default_rng(config.seed)
    schema = config.schema()
    layout = LatentLayout(schema)
    W = layout.W_eff
    dof = W if config.dof is None else config.dof
    raw = np.atleast_2d(stats.wishart(df=dof, scale=np.eye(W)).rvs(
        random_state=rng))
    S = rescale_to_unit_diagonal(raw, layout)
    mean = np.zeros(W)
    for j, var in enumerate(schema):
        e = layout.eff_indices(j)
        if var.kind is VariableKind.BINARY:
            mean[e] = phi_inv(config.binary_p)
        elif var.kind is VariableKind.MULTINOMIAL:
            mean[e] = equal_probability_means(S[np.ix_(e, e)])
    Z = rng.multivariate_normal(mean, S, size=config.n, method="cholesky")
    n, K = config.n, len(schema)
    X = np.empty((n, K))
    for j, var in enumerate(schema):
        e = layout.eff_indices(j)
        if var.kind is VariableKind.CONTINUOUS:
            X[:, j] = _transform(Z[:, e[0]], config.marginal)
        elif var.kind is VariableKind.BINARY:
            X[:, j] = Z[:, e[0]] > 0
        elif var.kind is VariableKind.ORDINAL:
            m = var.levels
            cuts = phi_inv(np.arange(1, m) / m)
            X[:, j] = np.searchsorted(cuts, Z[:, e[0]], side="left")
        else:
            block = np.column_stack([np.zeros(n), Z[:, e]])
            X[:, j] = np.argmax(block, axis=1)
    mask = rng.random((n, K)) < config.missing_rate
    masked = np.where(mask, np.nan, X)
    psi, mu_full = assemble_psi(layout, S, mean[layout.mean_index])
    return SimResult(schema, X, masked, mask, S, mean, psi, mu_full, Z)
