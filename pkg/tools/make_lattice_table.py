"""Regenerate ``_lattice_table.py`` (run from the repository root)."""
import sys
import time

from mixedcopula._lattice import search_multiplier


def isprime(n):
    return n > 1 and all(n % d for d in range(2, int(n ** 0.5) + 1))


PRIMES = [31, 47, 73, 113, 173, 263, 397, 593, 907, 1361, 2053, 3079, 4621,
          6947, 10427, 15641, 23473, 35221, 52837, 79259, 118891]


def main(path="src/mixedcopula/_lattice_table.py"):
    lines = ['"""Korobov multipliers keyed by prime lattice size (generated by',
             'tools/make_lattice_table.py)."""', "", "KOROBOV_TABLE = {"]
    for p in PRIMES:
        assert isprime(p), p
        t0 = time.time()
        a = search_multiplier(p, max_candidates=1500)
        print(p, a, f"{time.time() - t0:.1f}s", file=sys.stderr)
        lines.append(f"    {p}: {a},")
    lines.append("}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
