"""Stochastic-gradient fitting of the copula parameters.

Marginals are fitted first and kept fixed.  The objective is the mean
negative log marginal likelihood over rows with at least one observed
value.  After every parameter update the decoded matrix is rescaled to
unit constrained diagonal and re-encoded.

Within an epoch every row uses the same RQMC randomization, so the SVRG
anchor gradient and the iterate gradients share their lattices; the next
epoch draws fresh randomizations.
"""
import math
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .copula_model import CopulaParams, LatentLayout, encode, n_theta
from .likelihood import build_terms, total_loglik
from .marginals import BinaryMarginal, MultinomialMarginal, fit_marginals
from .mvn_rqmc import RqmcConfig, derive_seed, phi_inv

__all__ = ["FitConfig", "FitReport", "fit", "initialize"]

METHODS = ("svrg", "adam")


@dataclass(frozen=True)
class FitConfig:
    """Optimizer settings.

    ``learning_rate=None`` picks the method default (0.5 for SVRG, 0.02 for
    ADAM).  Fitting stops after ``epochs`` epochs, or earlier once the mean
    negative log-likelihood improved by less than ``tol`` over the last
    ``window`` epochs.  ``max_step`` caps the Euclidean norm of a single
    update.  An epoch that ends with a higher objective than it started
    with (by more than ``tol``) is undone and the learning rate halved.
    """
    method: str = "svrg"
    learning_rate: Optional[float] = None
    batch_size: int = 256
    epochs: int = 40
    rqmc: RqmcConfig = field(default_factory=RqmcConfig)
    seed: int = 1
    window: int = 3
    tol: float = 2e-4
    max_step: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    verbose: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.window < 1:
            raise ValueError("window must be at least 1")

    @property
    def lr(self):
        if self.learning_rate is not None:
            return self.learning_rate
        return 0.5 if self.method == "svrg" else 0.02


@dataclass
class FitReport:
    """Outcome of :func:`fit`.

    ``nll`` and ``gnorm`` hold the mean negative log-likelihood and the norm
    of its gradient after each completed epoch.  ``wall_time`` is excluded
    from equality comparisons.
    """
    theta: np.ndarray
    nll: list
    gnorm: list
    reason: str
    epochs: int
    wall_time: float = field(default=0.0, compare=False)

    def __eq__(self, other):
        if not isinstance(other, FitReport):
            return NotImplemented
        return (np.array_equal(self.theta, other.theta)
                and self.nll == other.nll and self.gnorm == other.gnorm
                and self.reason == other.reason and self.epochs == other.epochs)


def initialize(data, marginals, layout):
    """Starting parameters: identity ``Sigma`` and frequency-based means.

    Binary means are ``Phi^{-1}(p)``.  A multinomial category ``c`` gets
    ``Phi^{-1}(p_c / (p_0 + p_c))``, the probit of winning a two-way contest
    against the reference category.
    """
    mu = np.zeros(layout.W_eff)
    for j, marg in enumerate(marginals):
        e = layout.eff_indices(j)
        if isinstance(marg, BinaryMarginal):
            mu[e] = marg.mean
        elif isinstance(marg, MultinomialMarginal):
            p = marg.frequencies
            mu[e] = phi_inv(p[1:] / (p[0] + p[1:]))
    return encode(layout, np.eye(layout.W_eff), mu[layout.mean_index])


def _normalize(layout, theta):
    return CopulaParams(layout, theta).normalized().theta


class _Objective:
    """Mean negative log-likelihood with its gradient."""

    def __init__(self, terms, layout, rqmc):
        self.terms = terms
        self.layout = layout
        self.rqmc = rqmc
        self.n = terms.n_terms

    def __call__(self, theta, stream, subset=None, want_grad=True):
        terms = self.terms if subset is None else subset
        r = total_loglik(terms, CopulaParams(self.layout, theta), self.rqmc,
                         want_grad=want_grad, stream=stream)
        m = terms.n_terms
        g = -r.gradient / m if want_grad else None
        return -r.value / m, g


def _step(theta, direction, lr, max_step):
    step = lr * direction
    norm = np.linalg.norm(step)
    if norm > max_step:
        step *= max_step / norm
    return theta - step


def fit(data, schema, config=FitConfig(), marginals=None, theta0=None):
    """Fit marginals and copula parameters to ``data`` (NaN = missing).

    Returns ``(params, marginals, report)``.
    """
    t0 = time.perf_counter()
    data = np.asarray(data, dtype=float)
    if marginals is None:
        marginals = fit_marginals(data, schema)
    layout = LatentLayout(schema)
    theta = initialize(data, marginals, layout) if theta0 is None else \
        np.asarray(theta0, dtype=float).copy()
    if theta.shape != (n_theta(layout),):
        raise ValueError("theta0 has the wrong length")
    terms = build_terms(data, marginals, layout)
    if terms.n_terms == 0:
        raise ValueError("every row is fully missing")
    obj = _Objective(terms, layout, config.rqmc)
    nll, gnorm = [], []
    reason = "epochs"
    if config.epochs == 0:
        report = FitReport(theta.copy(), nll, gnorm, "no epochs", 0,
                           time.perf_counter() - t0)
        return CopulaParams(layout, theta), marginals, report

    all_rows = np.concatenate([b.rows for b in terms.batches])
    all_rows.sort()
    batches = max(1, math.ceil(all_rows.size / config.batch_size))
    lr = config.lr
    m_adam = np.zeros_like(theta)
    v_adam = np.zeros_like(theta)
    t_adam = 0

    # the anchor of epoch k is computed with the randomization of epoch k
    f_anchor, g_anchor = obj(theta, stream=0)
    if not np.isfinite(f_anchor) or not np.all(np.isfinite(g_anchor)):
        raise FloatingPointError("log-likelihood is not finite at the start")
    last_good = theta.copy()
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        stream = epoch - 1
        anchor = theta.copy()
        rng = np.random.default_rng(derive_seed(config.seed, epoch))
        order = rng.permutation(all_rows)
        bad = False
        for b in range(batches):
            rows = order[b * config.batch_size:(b + 1) * config.batch_size]
            sub = terms.select(rows)
            _, g = obj(theta, stream, sub)
            if config.method == "svrg":
                _, g_old = obj(anchor, stream, sub)
                direction = g - g_old + g_anchor
            else:
                t_adam += 1
                m_adam = config.beta1 * m_adam + (1 - config.beta1) * g
                v_adam = config.beta2 * v_adam + (1 - config.beta2) * g * g
                mh = m_adam / (1 - config.beta1 ** t_adam)
                vh = v_adam / (1 - config.beta2 ** t_adam)
                direction = mh / (np.sqrt(vh) + config.eps)
            theta = _step(theta, direction, lr, config.max_step)
            if not np.all(np.isfinite(theta)):
                bad = True
                break
            theta = _normalize(layout, theta)
        if not bad:
            f_new, g_new = obj(theta, stream=epoch)
            bad = not (np.isfinite(f_new) and np.all(np.isfinite(g_new)))
        if bad:
            theta = last_good
            reason = "diverged"
            epoch -= 1
            break
        worse = False
        if f_new > f_anchor + config.tol:
            # compare under the same randomization before judging the epoch
            f_old, g_old = obj(last_good, stream=epoch)
            if f_new > f_old + config.tol:
                # the epoch overshot: restart from the previous parameters
                # with half the step size
                worse = True
                theta = last_good.copy()
                lr *= 0.5
                f_new, g_new = f_old, g_old
        f_anchor, g_anchor = f_new, g_new
        last_good = theta.copy()
        nll.append(float(f_anchor))
        gnorm.append(float(np.linalg.norm(g_anchor)))
        if config.verbose:
            print(f"epoch={epoch} nll={nll[-1]:.10g} gnorm={gnorm[-1]:.6g} "
                  f"secs={time.perf_counter() - t0:.3f}", file=sys.stderr,
                  flush=True)
        if not worse and len(nll) > config.window and \
                nll[-config.window - 1] - nll[-1] < config.tol:
            reason = "converged"
            break
    report = FitReport(theta.copy(), nll, gnorm, reason, len(nll),
                       time.perf_counter() - t0)
    return CopulaParams(layout, theta), marginals, report
