"""Korobov multipliers keyed by prime lattice size (generated by
tools/make_lattice_table.py)."""

KOROBOV_TABLE = {
    31: 4,
    47: 2,
    73: 12,
    113: 51,
    173: 16,
    263: 72,
    397: 118,
    593: 250,
    907: 330,
    1361: 452,
    2053: 503,
    3079: 711,
    4621: 1983,
    6947: 3398,
    10427: 1102,
    15641: 4077,
    23473: 7806,
    35221: 9569,
    52837: 11923,
    79259: 32674,
    118891: 19274,
}
