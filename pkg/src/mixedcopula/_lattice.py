"""Korobov rank-1 lattice generators.

A Korobov lattice with ``n`` points uses the generating vector
``(1, a, a**2, ...) mod n``.  Multipliers ``a`` for the sizes used by the
adaptive integrator are tabulated in ``_lattice_table``; other sizes are
searched on demand with the same figure of merit.
"""
import functools
import math

import numpy as np
from numba import njit

from ._lattice_table import KOROBOV_TABLE

#: dimension and product weights used when scoring multipliers
DESIGN_DIM = 16
DESIGN_WEIGHTS = 0.8 ** np.arange(DESIGN_DIM)


@njit(cache=True)
def _merit(n, a, weights):
    # weighted P_2 criterion of the periodic Korobov space
    d = weights.shape[0]
    z = np.empty(d, dtype=np.int64)
    z[0] = 1
    for j in range(1, d):
        z[j] = (z[j - 1] * a) % n
    total = 0.0
    c = 2.0 * math.pi * math.pi
    for i in range(n):
        prod = 1.0
        for j in range(d):
            x = ((i * z[j]) % n) / n
            prod *= 1.0 + weights[j] * c * (x * x - x + 1.0 / 6.0)
        total += prod
    return total / n - 1.0


@njit(cache=True)
def _best_multiplier(n, candidates, weights):
    best = candidates[0]
    best_val = np.inf
    for a in candidates:
        val = _merit(n, a, weights)
        if val < best_val:
            best_val = val
            best = a
    return best


def search_multiplier(n, max_candidates=4000, seed=0):
    """Search a Korobov multiplier for an ``n``-point lattice.

    Every admissible candidate ``1 < a <= n // 2`` coprime with ``n`` is
    scored when there are at most `max_candidates` of them; otherwise a
    seeded random subset is scored.
    """
    if n < 4:
        return 1
    cands = np.array([a for a in range(2, n // 2 + 1) if math.gcd(a, n) == 1],
                     dtype=np.int64)
    if cands.size == 0:
        return 1
    if cands.size > max_candidates:
        rng = np.random.default_rng(seed)
        cands = np.sort(rng.choice(cands, max_candidates, replace=False))
    return int(_best_multiplier(n, cands, DESIGN_WEIGHTS))


@functools.lru_cache(maxsize=None)
def korobov_multiplier(n):
    """Multiplier for an ``n``-point Korobov lattice (tabulated or searched)."""
    a = KOROBOV_TABLE.get(n)
    if a is None:
        a = search_multiplier(n)
    return a


def generating_vector(n, dim):
    """Integer generating vector ``(1, a, a**2, ...) mod n`` of length `dim`."""
    a = korobov_multiplier(n)
    z = np.empty(dim, dtype=np.int64)
    if dim:
        z[0] = 1
    for j in range(1, dim):
        z[j] = (z[j - 1] * a) % n
    return z


def table_sizes():
    """Sorted lattice sizes available for the adaptive integrator."""
    return np.array(sorted(KOROBOV_TABLE), dtype=np.int64)
