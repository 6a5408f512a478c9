"""Freeze reference values used by the test-suite into tests/data.

Run from the repository root:

    python3 tools/make_oracles.py

Box probabilities of 100 random problems (closed form for dimensions 1-2,
adaptive quadrature for 3-4, 10^7-draw Monte Carlo for 5-8) and a
truncated-normal mean from rejection sampling.  None of this touches the
package itself.
"""
import json
import pathlib
import sys
import time

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracles  # noqa: E402

N_PROBLEMS = 100
MC_DRAWS = 10_000_000


def _num(x):
    return None if np.isinf(x) else float(x)


def cdf_problems(seed=20240611):
    rng = np.random.default_rng(seed)
    out = []
    for p in range(N_PROBLEMS):
        k = 1 + p % 8
        cov = oracles.random_correlation(rng, k)
        lower, upper = oracles.random_box(rng, k)
        mean = rng.normal(0.0, 0.5, k)
        t = time.time()
        if k <= 2:
            value, se, method = oracles.bvn_box(lower, upper, mean, cov), 0.0, \
                "closed-form"
        elif k <= 4:
            value, err = oracles.quad_box(lower, upper, mean, cov)
            se, method = err, "quadrature"
        else:
            value, se = oracles.mc_box(lower, upper, mean, cov, n=MC_DRAWS,
                                       seed=p)
            method = "monte-carlo"
        print(f"problem {p:3d} k={k} {method:12s} value={value:.8f} "
              f"se={se:.2e} ({time.time() - t:.1f}s)", flush=True)
        out.append(dict(dim=k, lower=[_num(x) for x in lower],
                        upper=[_num(x) for x in upper], mean=mean.tolist(),
                        cov=cov.tolist(), value=value, se=se, method=method))
    return out


def truncated_mean_problem(seed=7):
    rng = np.random.default_rng(seed)
    k = 3
    cov = oracles.random_correlation(rng, k)
    lower = np.array([-0.5, -np.inf, -1.0])
    upper = np.array([1.5, 0.3, np.inf])
    mean = rng.normal(0.0, 0.5, k)
    p, p_se = oracles.mc_box(lower, upper, mean, cov, n=MC_DRAWS, seed=1)
    mu, mu_se = oracles.mc_truncated_mean(lower, upper, mean, cov,
                                          n=MC_DRAWS, seed=2)
    return dict(lower=[_num(x) for x in lower], upper=[_num(x) for x in upper],
                mean=mean.tolist(), cov=cov.tolist(), prob=p, prob_se=p_se,
                truncated_mean=mu.tolist(), truncated_mean_se=mu_se.tolist())


def main():
    data = ROOT / "tests" / "data"
    data.mkdir(exist_ok=True)
    doc = {"cdf_problems": cdf_problems(),
           "truncated_mean": truncated_mean_problem()}
    with open(data / "oracles.json", "w") as fh:
        json.dump(doc, fh, indent=1)
    print("wrote", data / "oracles.json")


if __name__ == "__main__":
    main()
