"""Joint parameterization of the latent Gaussian.

Every continuous, binary and ordinal variable owns one latent.  A
multinomial variable with ``m`` categories owns ``m`` latents, one per
category, and the observed category is the one with the largest latent.
The latent of the first (reference) category is fixed at zero, so only the
other ``m - 1`` enter the *effective* problem.  All numerical work happens on
the effective latents; :func:`assemble_psi` expands to the full layout.

The effective covariance ``Sigma`` is stored as a log-Cholesky vector (lower
triangle, row-major, log diagonal) followed by the free means.  Decoding
always rescales so that the ``K`` constrained diagonal entries are one: each
single-latent variable is divided by its own scale and each multinomial
block by the scale of its first non-reference latent.  The latter keeps the
ratios inside a block, which is what makes the category probabilities
invariant to the rescaling.
"""
from dataclasses import dataclass, field

import numpy as np

from .schema import VariableKind

__all__ = [
    "LatentLayout", "CopulaParams", "encode", "decode",
    "rescale_to_unit_diagonal", "assemble_psi", "theta_gradient",
    "n_theta", "is_spd",
]


class LatentLayout:
    """Index bookkeeping for the latent vector of a schema.

    Attributes
    ----------
    W : int
        Full latent dimension including reference latents.
    W_eff : int
        Number of effective latents (``W`` minus one per multinomial).
    ranges : list of (int, int)
        Full-layout index range of every variable.
    eff_ranges : list of (int, int)
        Effective index range of every variable (the non-reference latents
        for a multinomial).
    constrained : ndarray of bool
        Effective latents whose variance is fixed to one.
    scale_ref : ndarray of int
        For each effective latent, the constrained latent whose variance
        sets its scale.
    free_mean : ndarray of bool
        Effective latents with a free mean (binary and non-reference
        multinomial latents).
    """

    def __init__(self, schema):
        self.schema = schema
        ranges, eff_ranges = [], []
        full_to_eff, eff_var, eff_cat = [], [], []
        constrained, scale_ref, free_mean = [], [], []
        pos = eff = 0
        for j, var in enumerate(schema):
            if var.kind is VariableKind.MULTINOMIAL:
                m = var.levels
                ranges.append((pos, pos + m))
                eff_ranges.append((eff, eff + m - 1))
                full_to_eff.append(-1)
                full_to_eff.extend(range(eff, eff + m - 1))
                for c in range(1, m):
                    eff_var.append(j)
                    eff_cat.append(c)
                    constrained.append(c == 1)
                    scale_ref.append(eff)
                    free_mean.append(True)
                pos += m
                eff += m - 1
            else:
                ranges.append((pos, pos + 1))
                eff_ranges.append((eff, eff + 1))
                full_to_eff.append(eff)
                eff_var.append(j)
                eff_cat.append(0)
                constrained.append(True)
                scale_ref.append(eff)
                free_mean.append(var.kind is VariableKind.BINARY)
                pos += 1
                eff += 1
        self.ranges = ranges
        self.eff_ranges = eff_ranges
        self.W = pos
        self.W_eff = eff
        self.full_to_eff = np.array(full_to_eff, dtype=np.int64)
        self.eff_to_full = np.flatnonzero(self.full_to_eff >= 0)
        self.eff_var = np.array(eff_var, dtype=np.int64)
        self.eff_category = np.array(eff_cat, dtype=np.int64)
        self.constrained = np.array(constrained, dtype=bool)
        self.scale_ref = np.array(scale_ref, dtype=np.int64)
        self.free_mean = np.array(free_mean, dtype=bool)
        self.mean_index = np.flatnonzero(self.free_mean)
        self.tril = np.tril_indices(self.W_eff)

    @property
    def K(self):
        return len(self.schema)

    @property
    def n_mean(self):
        return self.mean_index.size

    def __repr__(self):
        return f"LatentLayout(K={self.K}, W={self.W}, W_eff={self.W_eff})"

    def eff_indices(self, j):
        lo, hi = self.eff_ranges[j]
        return np.arange(lo, hi)

    def reference_indices(self):
        """Full-layout indices of the reference latents."""
        return np.flatnonzero(self.full_to_eff < 0)

    def kind_indices(self, kind, observed=None):
        """Full-layout latent indices of variables of ``kind``.

        With ``observed`` (a boolean vector over variables) only observed
        variables are included, which gives the sets written with a tilde
        in the likelihood derivation.
        """
        kind = VariableKind(kind)
        out = []
        for j, var in enumerate(self.schema):
            if var.kind is kind and (observed is None or observed[j]):
                out.extend(range(*self.ranges[j]))
        return np.array(out, dtype=np.int64)

    def observation_indices(self, row):
        """Full-layout indices of the observed categories' latents.

        ``row`` holds category codes for multinomial columns (NaN when
        missing); one index is returned per observed multinomial.
        """
        out = []
        for j, var in enumerate(self.schema):
            if var.kind is VariableKind.MULTINOMIAL and not np.isnan(row[j]):
                out.append(self.ranges[j][0] + int(row[j]))
        return np.array(out, dtype=np.int64)

    def contrast_matrix(self):
        """Block matrix of ones that subtracts each observed category latent.

        One column per multinomial; ``m_j - 1`` rows of ones in column ``j``
        followed by zero rows for every binary and ordinal variable.
        """
        multi = [v for v in self.schema if v.kind is VariableKind.MULTINOMIAL]
        n_ob = sum(v.kind in (VariableKind.BINARY, VariableKind.ORDINAL)
                   for v in self.schema)
        rows = sum(v.levels - 1 for v in multi) + n_ob
        D = np.zeros((rows, len(multi)))
        r = 0
        for j, v in enumerate(multi):
            D[r:r + v.levels - 1, j] = 1.0
            r += v.levels - 1
        return D


def n_theta(layout):
    return layout.W_eff * (layout.W_eff + 1) // 2 + layout.n_mean


def is_spd(S):
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.isfinite(S)))


def _scales(layout, S):
    d = np.sqrt(np.diag(S))
    if layout is None:
        return d
    return d[layout.scale_ref]


def rescale_to_unit_diagonal(S, layout=None, mean=None):
    """Rescale a covariance so its constrained diagonal entries are one.

    Without a layout every diagonal entry is constrained and the result is
    the correlation matrix.  With a layout, multinomial blocks are divided
    by the scale of their first non-reference latent.  When ``mean`` (an
    effective-length vector) is given it is divided by the same scales and
    ``(S', mean')`` is returned.
    """
    S = np.asarray(S, dtype=float)
    d = _scales(layout, S)
    out = S / np.outer(d, d)
    out = 0.5 * (out + out.T)
    if layout is not None:
        idx = np.flatnonzero(layout.constrained)
        out[idx, idx] = 1.0
    else:
        np.fill_diagonal(out, 1.0)
    if mean is None:
        return out
    return out, np.asarray(mean, dtype=float) / d


def _raw(layout, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n_theta(layout),):
        raise ValueError(f"theta must have length {n_theta(layout)}")
    n_chol = theta.size - layout.n_mean
    L = np.zeros((layout.W_eff, layout.W_eff))
    L[layout.tril] = theta[:n_chol]
    di = np.diag_indices(layout.W_eff)
    L[di] = np.exp(L[di])
    mu = np.zeros(layout.W_eff)
    mu[layout.mean_index] = theta[n_chol:]
    return L, mu


def decode(layout, theta, full_mean=False):
    """Return ``(Sigma, mu_free)`` with the constrained diagonal at one.

    With ``full_mean=True`` the second item is the effective-length mean
    vector instead of only its free entries.
    """
    L, mu = _raw(layout, theta)
    S, mu = rescale_to_unit_diagonal(L @ L.T, layout, mu)
    return S, (mu if full_mean else mu[layout.mean_index])


def encode(layout, S, mu_free=None):
    """Inverse of :func:`decode` for SPD ``S`` with unit constrained diagonal."""
    S = np.asarray(S, dtype=float)
    if S.shape != (layout.W_eff, layout.W_eff):
        raise ValueError(f"Sigma must be {layout.W_eff}x{layout.W_eff}")
    if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ValueError("Sigma must be symmetric")
    try:
        L = np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError:
        raise ValueError("Sigma is not positive definite") from None
    dg = np.diag(S)[layout.constrained]
    if np.any(np.abs(dg - 1.0) > 1e-8):
        raise ValueError("constrained diagonal entries of Sigma must be one")
    chol = L.copy()
    di = np.diag_indices(layout.W_eff)
    chol[di] = np.log(chol[di])
    if mu_free is None:
        mu_free = np.zeros(layout.n_mean)
    mu_free = np.asarray(mu_free, dtype=float)
    if mu_free.shape != (layout.n_mean,):
        raise ValueError(f"mu_free must have length {layout.n_mean}")
    return np.concatenate([chol[layout.tril], mu_free])


def theta_gradient(layout, theta, g_sigma, g_mean):
    """Chain a gradient in ``(Sigma, mu)`` back to ``theta``.

    Parameters
    ----------
    g_sigma : (W_eff, W_eff) array
        Symmetric derivative with respect to the decoded ``Sigma`` where
        every entry is treated as a separate coordinate.
    g_mean : (W_eff,) array
        Derivative with respect to the decoded effective mean; entries of
        latents without a free mean are ignored.
    """
    L, mu_raw = _raw(layout, theta)
    S_raw = L @ L.T
    d = _scales(layout, S_raw)
    S = S_raw / np.outer(d, d)
    mu = mu_raw / d
    G = np.asarray(g_sigma, dtype=float)
    G = 0.5 * (G + G.T)
    g = np.where(layout.free_mean, np.asarray(g_mean, dtype=float), 0.0)
    G_raw = G / np.outer(d, d)
    coef = -(2.0 * np.einsum("ij,ji->i", G, S) + g * mu)
    np.add.at(G_raw, (layout.scale_ref, layout.scale_ref),
              coef / (2.0 * d ** 2))
    dL = 2.0 * G_raw @ L
    di = np.diag_indices(layout.W_eff)
    dL[di] *= L[di]
    return np.concatenate([dL[layout.tril], (g / d)[layout.mean_index]])


def assemble_psi(layout, S, mu_free=None):
    """Expand effective ``(Sigma, mu_free)`` to the full ``W``-dim layout.

    Reference latents get zero rows and columns and a zero mean.
    """
    Psi = np.zeros((layout.W, layout.W))
    e = layout.eff_to_full
    Psi[np.ix_(e, e)] = S
    mu_full = np.zeros(layout.W)
    if mu_free is not None:
        mu_full[e[layout.mean_index]] = mu_free
    return Psi, mu_full


@dataclass(frozen=True)
class CopulaParams:
    """Immutable parameter snapshot with cached decoded quantities."""
    layout: LatentLayout
    theta: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_sigma(cls, layout, S, mu_free=None):
        return cls(layout, encode(layout, S, mu_free))

    def _decoded(self):
        if "S" not in self._cache:
            S, mu = decode(self.layout, self.theta, full_mean=True)
            self._cache["S"], self._cache["mu"] = S, mu
        return self._cache["S"], self._cache["mu"]

    @property
    def sigma(self):
        return self._decoded()[0]

    @property
    def mean(self):
        """Effective-length mean (zeros where the mean is not free)."""
        return self._decoded()[1]

    @property
    def mean_free(self):
        return self.mean[self.layout.mean_index]

    def psi(self):
        return assemble_psi(self.layout, self.sigma, self.mean_free)

    def normalized(self):
        """Re-encode the decoded values so theta itself is rescaled."""
        return CopulaParams(self.layout,
                            encode(self.layout, self.sigma, self.mean_free))
