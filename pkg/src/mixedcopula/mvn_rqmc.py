"""Randomized quasi-Monte Carlo integrals of the multivariate normal density.

Box probabilities ``P(a < X < b)`` for ``X ~ N(mean, cov)``, their
gradients with respect to ``mean`` and ``cov``, and unnormalized truncated
expectations ``E[g(X); a < X < b]`` are approximated with the sequential
conditioning (separation of variables) transform, a greedy variable
reordering and shifted Korobov lattices.  Independent random shifts give an
error estimate used to stop early.
"""
import contextlib
import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np
from scipy.special import ndtr, ndtri

from . import _kernels
from ._lattice import korobov_multiplier, table_sizes

# the bundled TBB is often too old for numba and only produces a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__all__ = [
    "phi", "phi_inv", "IntegrationBox", "GaussianParams", "ReorderedProblem",
    "RqmcConfig", "RqmcEstimate", "FactorizationError", "GSpec", "Constant1",
    "Identity", "OuterProduct", "CategoryOneHot", "Stack",
    "reorder_and_factor", "integrate", "cdf_gradient", "box_probabilities",
    "derive_seed", "num_threads",
]

_MASK64 = (1 << 64) - 1


class FactorizationError(ValueError):
    """Raised when a covariance matrix is not positive definite."""

    def __init__(self, pivot):
        self.pivot = int(pivot)
        super().__init__(
            f"covariance matrix is not positive definite "
            f"(non-positive conditional variance at variable {self.pivot})")


def phi(x):
    """Standard normal CDF."""
    return ndtr(x)


def phi_inv(p):
    """Standard normal quantile; ``p`` at 0 or 1 saturates to -8 or 8."""
    p = np.asarray(p, dtype=float)
    out = np.clip(ndtri(p), -_kernels.PPF_CLAMP, _kernels.PPF_CLAMP)
    out = np.where(p <= 0.0, -_kernels.PPF_CLAMP, out)
    out = np.where(p >= 1.0, _kernels.PPF_CLAMP, out)
    return out[()] if out.ndim == 0 else out


def _splitmix(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*keys):
    """Mix integer keys into a 64-bit seed (order sensitive)."""
    h = 0x243F6A8885A308D3
    for key in keys:
        h = _splitmix(h ^ _splitmix(int(key) & _MASK64))
    return h


@contextlib.contextmanager
def num_threads(n):
    """Temporarily set the worker count of the compiled row loops."""
    if n is None:
        yield
        return
    old = numba.get_num_threads()
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    try:
        yield
    finally:
        numba.set_num_threads(old)


@dataclass(frozen=True)
class IntegrationBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if np.isnan(lo).any() or np.isnan(hi).any():
            raise ValueError("bounds must not be NaN")
        if not np.all(lo < hi):
            raise ValueError("every lower bound must be below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.shape[0]

    @classmethod
    def unbounded(cls, k):
        return cls(np.full(k, -np.inf), np.full(k, np.inf))


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        k = mean.shape[0]
        if cov.shape != (k, k):
            raise ValueError(f"covariance must be {k}x{k}, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", np.ascontiguousarray(cov))

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class ReorderedProblem:
    """Result of :func:`reorder_and_factor`.

    ``cholesky`` is the lower factor ``L`` of the permuted covariance, so the
    upper factor ``O = L.T`` satisfies ``O.T @ O == cov[perm][:, perm]``.
    ``lower`` and ``upper`` are the permuted bounds centred at the mean.
    """
    permutation: np.ndarray
    cholesky: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def factor(self):
        return self.cholesky.T


@dataclass(frozen=True)
class RqmcConfig:
    min_samples: int = 500
    max_samples: int = 10000
    rel_tol: float = 1e-2
    abs_tol: float = 1e-8
    n_randomizations: int = 8
    seed: int = 1

    def __post_init__(self):
        if not 1 <= self.min_samples <= self.max_samples:
            raise ValueError("need 1 <= min_samples <= max_samples")
        if self.n_randomizations < 2:
            raise ValueError("need at least two randomizations")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def for_imputation(cls, **changes):
        """Defaults used when computing conditional expectations."""
        base = dict(min_samples=2000, max_samples=20000, rel_tol=1e-3)
        base.update(changes)
        return cls(**base)


@dataclass
class RqmcEstimate:
    value: object
    error_estimate: object
    samples_used: int
    converged: bool


# -- integrand families -------------------------------------------------------

class GSpec:
    """Function ``g`` applied to draws of the latent vector."""

    def dim(self, k):
        raise NotImplementedError

    def __call__(self, points):
        raise NotImplementedError


class Constant1(GSpec):
    def dim(self, k):
        return 1

    def __call__(self, points):
        return np.ones(points.shape[:-1] + (1,))


class Identity(GSpec):
    def __init__(self, indices=None):
        self.indices = None if indices is None else np.asarray(indices, int)

    def dim(self, k):
        return k if self.indices is None else self.indices.size

    def __call__(self, points):
        return points if self.indices is None else points[..., self.indices]


class OuterProduct(GSpec):
    """Flattened ``x x^T`` (row major)."""

    def __init__(self, indices=None):
        self.indices = None if indices is None else np.asarray(indices, int)

    def dim(self, k):
        m = k if self.indices is None else self.indices.size
        return m * m

    def __call__(self, points):
        p = points if self.indices is None else points[..., self.indices]
        out = p[..., :, None] * p[..., None, :]
        return out.reshape(p.shape[:-1] + (-1,))


class CategoryOneHot(GSpec):
    """One-hot encoding of the categories implied by latent coordinates.

    Parameters
    ----------
    groups : sequence of tuples
        ``("threshold", index, cuts)`` maps coordinate `index` to the number
        of interior `cuts` below it (binary uses ``cuts=[0.0]``);
        ``("argmax", indices)`` picks the largest of ``0`` (an implicit
        reference category) and the listed coordinates, ties going to the
        lower category.
    """

    def __init__(self, groups):
        self.groups = []
        for g in groups:
            if g[0] == "threshold":
                self.groups.append(("threshold", int(g[1]),
                                    np.asarray(g[2], dtype=float)))
            elif g[0] == "argmax":
                self.groups.append(("argmax", np.asarray(g[1], dtype=int)))
            else:
                raise ValueError(f"unknown category group {g[0]!r}")

    def n_categories(self):
        return [g[2].size + 1 if g[0] == "threshold" else g[1].size + 1
                for g in self.groups]

    def dim(self, k):
        return int(sum(self.n_categories()))

    def __call__(self, points):
        blocks = []
        for g, m in zip(self.groups, self.n_categories()):
            if g[0] == "threshold":
                cat = np.searchsorted(g[2], points[..., g[1]], side="left")
            else:
                ref = np.zeros(points.shape[:-1] + (1,))
                cat = np.argmax(np.concatenate([ref, points[..., g[1]]], -1), -1)
            blocks.append(np.eye(m)[cat])
        return np.concatenate(blocks, axis=-1)


class Stack(GSpec):
    """Concatenate several integrands into one output vector."""

    def __init__(self, *specs):
        self.specs = specs

    def dim(self, k):
        return sum(s.dim(k) for s in self.specs)

    def __call__(self, points):
        return np.concatenate([s(points) for s in self.specs], axis=-1)


# -- operations ---------------------------------------------------------------

_SIZES = table_sizes()
_MULTS = np.array([korobov_multiplier(int(n)) for n in _SIZES], dtype=np.int64)


def _check(box, params):
    if box.dim != params.dim:
        raise ValueError("box and Gaussian parameters differ in dimension")
    if box.dim < 1:
        raise ValueError("need at least one dimension")


def reorder_and_factor(box, params):
    """Reorder variables greedily and factor the permuted covariance."""
    _check(box, params)
    k = box.dim
    L = np.empty((k, k))
    lo = np.empty(k)
    hi = np.empty(k)
    perm = np.empty(k, dtype=np.int64)
    status = _kernels.reorder_factor(box.lower, box.upper, params.mean,
                                     params.cov, L, lo, hi, perm)
    if status != _kernels.OK:
        raise FactorizationError(status)
    return ReorderedProblem(perm, L, lo, hi)


def cdf_gradient(box, params, config=RqmcConfig()):
    """Box probability with its gradient in the mean and the covariance.

    ``d_cov`` holds the derivatives with respect to each entry treating all
    ``k * k`` entries as free, so it is symmetric; perturbing both ``cov[i, j]``
    and ``cov[j, i]`` changes the probability by ``2 * d_cov[i, j]``.
    """
    _check(box, params)
    k = box.dim
    dmean = np.zeros(k)
    dcov = np.zeros((k, k))
    v, e, s, c, st = _kernels.cdf_core(
        box.lower, box.upper, params.mean, params.cov, True, _SIZES, _MULTS,
        config.min_samples, config.max_samples, config.n_randomizations,
        config.rel_tol, config.abs_tol, np.uint64(config.seed & _MASK64),
        dmean, dcov)
    if st != _kernels.OK:
        raise FactorizationError(st)
    return RqmcEstimate(v, e, s, c), dmean, dcov


def box_probabilities(lower, upper, means, cov, config=RqmcConfig(), seeds=None,
                      want_grad=False):
    """Vectorized box probabilities over rows sharing one covariance matrix.

    Returns a dict with ``value``, ``error``, ``samples``, ``converged`` and,
    when `want_grad` is set, ``d_mean`` (n, k) and ``d_cov`` (n, k, k).
    """
    lower = np.ascontiguousarray(lower, dtype=float)
    upper = np.ascontiguousarray(upper, dtype=float)
    means = np.ascontiguousarray(means, dtype=float)
    cov = np.ascontiguousarray(cov, dtype=float)
    n, k = lower.shape
    if seeds is None:
        seeds = [derive_seed(config.seed, i) for i in range(n)]
    seeds = np.asarray(seeds, dtype=np.uint64)
    values = np.empty(n)
    errors = np.empty(n)
    samples = np.empty(n, dtype=np.int64)
    conv = np.empty(n, dtype=np.bool_)
    status = np.empty(n, dtype=np.int64)
    gk = k if want_grad else 0
    dmean = np.zeros((n, gk))
    dcov = np.zeros((n, gk, gk))
    if want_grad:
        _kernels.cdf_batch(lower, upper, means, cov, True, _SIZES, _MULTS,
                           config.min_samples, config.max_samples,
                           config.n_randomizations, config.rel_tol,
                           config.abs_tol, seeds, values, errors, samples,
                           conv, status, dmean, dcov)
    else:
        # the kernel never touches the gradient buffers in this mode
        dm = np.zeros((n, k))
        dc = np.zeros((n, 1, 1))
        _kernels.cdf_batch(lower, upper, means, cov, False, _SIZES, _MULTS,
                           config.min_samples, config.max_samples,
                           config.n_randomizations, config.rel_tol,
                           config.abs_tol, seeds, values, errors, samples,
                           conv, status, dm, dc)
    bad = status != _kernels.OK
    if bad.any():
        raise FactorizationError(status[np.argmax(bad)])
    out = dict(value=values, error=errors, samples=samples, converged=conv)
    if want_grad:
        out["d_mean"] = dmean
        out["d_cov"] = dcov
    return out


def integrate(box, params, g: Optional[GSpec] = None, config=RqmcConfig()):
    """Box probability and the unnormalized truncated expectation of `g`.

    Returns ``(cdf, expectation)`` where ``expectation.value`` approximates
    ``E[g(X) 1{a < X < b}]``; divide by ``cdf.value`` for the truncated
    normal expectation.  For ``g=None`` or :class:`Constant1` the last
    ordered variable is integrated analytically and ``expectation`` repeats
    the probability.
    """
    _check(box, params)
    if g is None or isinstance(g, Constant1):
        est, _, _ = _cdf_only(box, params, config)
        expectation = RqmcEstimate(np.array([est.value]),
                                   np.array([est.error_estimate]),
                                   est.samples_used, est.converged)
        return est, expectation
    return _integrate_general(box, params, g, config)


def _cdf_only(box, params, config):
    k = box.dim
    v, e, s, c, st = _kernels.cdf_core(
        box.lower, box.upper, params.mean, params.cov, False, _SIZES, _MULTS,
        config.min_samples, config.max_samples, config.n_randomizations,
        config.rel_tol, config.abs_tol, np.uint64(config.seed & _MASK64),
        np.zeros(k), np.zeros((k, k)))
    if st != _kernels.OK:
        raise FactorizationError(st)
    return RqmcEstimate(v, e, s, c), None, None


def _integrate_general(box, params, g, config):
    prob = reorder_and_factor(box, params)
    k = box.dim
    nr = config.n_randomizations
    seed = np.uint64(config.seed & _MASK64)
    level = int(np.searchsorted(_SIZES * nr, config.min_samples))
    level = min(level, len(_SIZES) - 1)
    used = 0
    est = err = None
    num = num_var = None
    converged = False
    first = True
    while level < len(_SIZES):
        n = int(_SIZES[level])
        if not first and used + n * nr > config.max_samples:
            break
        weights = np.empty((nr, n))
        points = np.empty((nr, n, k))
        _kernels.sample_level(prob.cholesky, prob.lower, prob.upper,
                              prob.permutation, params.mean, n,
                              int(_MULTS[level]), nr, seed, level,
                              weights, points)
        used += n * nr
        per_rand = weights.mean(axis=1)
        per_rand_num = np.einsum("rn,rnh->rh", weights, g(points)) / n
        lvl_est = per_rand.mean()
        lvl_err = 3.0 * np.sqrt(per_rand.var(ddof=1) / nr)
        lvl_num = per_rand_num.mean(axis=0)
        lvl_num_var = per_rand_num.var(axis=0, ddof=1) / nr
        if first:
            wt = 1.0
        elif lvl_err == 0.0:
            wt = 1.0
        elif err == 0.0:
            wt = 0.0
        else:
            wt = 1.0 / (1.0 + (lvl_err / err) ** 2)
        if first:
            est, err, num, num_var = lvl_est, lvl_err, lvl_num, lvl_num_var
        else:
            est += wt * (lvl_est - est)
            if wt > 0.0:
                err = np.sqrt(wt) * lvl_err
            num = num + wt * (lvl_num - num)
            num_var = (1 - wt) ** 2 * num_var + wt ** 2 * lvl_num_var
        first = False
        num_err = 3.0 * np.sqrt(num_var)
        scale = np.maximum(abs(est), np.abs(num))
        if (err <= max(config.abs_tol, config.rel_tol * abs(est))
                and np.all(num_err <= np.maximum(config.abs_tol,
                                                 config.rel_tol * scale))):
            converged = True
            break
        level += 1
    if not est > _kernels.W_FLOOR:
        est = max(est, _kernels.TINY)
        converged = False
    return (RqmcEstimate(float(est), float(err), used, converged),
            RqmcEstimate(num, 3.0 * np.sqrt(num_var), used, converged))


def fixed_lattice_estimate(box, params, n_points, n_randomizations, seed):
    """Box probability from one lattice of exactly `n_points` points.

    Bypasses the adaptive schedule; used to study convergence in the
    lattice size.  Returns ``(value, error_estimate)``.
    """
    _check(box, params)
    k = box.dim
    sizes = np.array([n_points], dtype=np.int64)
    mults = np.array([korobov_multiplier(int(n_points))], dtype=np.int64)
    v, e, _, _, st = _kernels.cdf_core(
        box.lower, box.upper, params.mean, params.cov, False, sizes, mults,
        1, n_points * n_randomizations, n_randomizations, 1e-300, 1e-300,
        np.uint64(seed & _MASK64), np.zeros(k), np.zeros((k, k)))
    if st != _kernels.OK:
        raise FactorizationError(st)
    return v, e
