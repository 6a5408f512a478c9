"""Imputation and estimation error metrics.

Every metric returns ``nan`` when it is undefined (no masked cells or a zero
baseline error); callers can test with :func:`math.isnan`.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .schema import VariableKind

__all__ = ["UNDEFINED", "smae", "rmse", "classification_error",
           "relative_sigma_error", "MetricReport", "evaluate"]

UNDEFINED = math.nan


def _masked(imputed, truth, mask):
    mask = np.asarray(mask, dtype=bool)
    return (np.asarray(imputed, dtype=float)[mask],
            np.asarray(truth, dtype=float)[mask])


def observed_median(observed, discrete=False):
    x = np.asarray(observed, dtype=float)
    x = x[~np.isnan(x)]
    if discrete:
        # a category code: the smallest value with cumulative share >= 1/2
        return float(np.quantile(x, 0.5, method="inverted_cdf"))
    return float(np.median(x))


def smae(imputed, truth, observed, mask, discrete=False):
    """Imputation MAE over masked cells divided by that of the median baseline.

    ``observed`` is the column as seen by the imputer (NaN where missing);
    its median is the baseline.  Discrete columns use a median that is an
    actual category.
    """
    xh, x = _masked(imputed, truth, mask)
    if x.size == 0:
        return UNDEFINED
    base = np.abs(observed_median(observed, discrete) - x).sum()
    if base == 0:
        return UNDEFINED
    return float(np.abs(xh - x).sum() / base)


def rmse(imputed, truth, mask, scale=1.0):
    """Root mean squared error over masked cells, divided by ``scale``."""
    xh, x = _masked(imputed, truth, mask)
    if x.size == 0:
        return UNDEFINED
    return float(np.sqrt(np.mean((xh - x) ** 2)) / scale)


def classification_error(imputed, truth, mask):
    xh, x = _masked(imputed, truth, mask)
    if x.size == 0:
        return UNDEFINED
    return float(np.mean(xh != x))


def relative_sigma_error(sigma_hat, sigma):
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if sigma_hat.shape != sigma.shape:
        raise ValueError("matrices differ in shape")
    return float(np.linalg.norm(sigma_hat - sigma) / np.linalg.norm(sigma))


@dataclass
class MetricReport:
    """Per-variable metrics plus the relative error of the correlation matrix.

    ``rows`` holds one dict per variable with keys ``variable``, ``kind``,
    ``n_masked``, ``rmse``, ``classification_error`` and ``smae``.
    """
    rows: list
    sigma_error: float = UNDEFINED
    timings: dict = field(default_factory=dict)

    COLUMNS = ("variable", "kind", "n_masked", "rmse",
               "classification_error", "smae", "sigma_error")

    def by_kind(self, metric):
        """Mean of ``metric`` over the variables of each kind."""
        out = {}
        for r in self.rows:
            v = r[metric]
            if not math.isnan(v):
                out.setdefault(r["kind"], []).append(v)
        return {k: float(np.mean(v)) for k, v in out.items()}

    def records(self):
        return [dict(r, sigma_error=self.sigma_error) for r in self.rows]


def evaluate(imputed, truth, mask, schema, sigma_hat=None, sigma_true=None,
             standardize=True):
    """Metrics of an imputed table against the complete table.

    RMSE of continuous columns is divided by the standard deviation of the
    true column when ``standardize`` is set.  SMAE is not reported for
    multinomial columns, whose codes carry no order.
    """
    imputed = np.asarray(imputed, dtype=float)
    truth = np.asarray(truth, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    observed = np.where(mask, np.nan, truth)
    rows = []
    for j, var in enumerate(schema):
        row = dict(variable=var.name, kind=var.kind.value,
                   n_masked=int(mask[:, j].sum()), rmse=UNDEFINED,
                   classification_error=UNDEFINED, smae=UNDEFINED)
        if var.kind is VariableKind.CONTINUOUS:
            scale = truth[:, j].std() if standardize else 1.0
            row["rmse"] = rmse(imputed[:, j], truth[:, j], mask[:, j],
                               scale if scale > 0 else 1.0)
            row["smae"] = smae(imputed[:, j], truth[:, j], observed[:, j],
                               mask[:, j])
        else:
            row["classification_error"] = classification_error(
                imputed[:, j], truth[:, j], mask[:, j])
            if var.kind is not VariableKind.MULTINOMIAL:
                row["smae"] = smae(imputed[:, j], truth[:, j], observed[:, j],
                                   mask[:, j], discrete=True)
        rows.append(row)
    err = UNDEFINED
    if sigma_hat is not None and sigma_true is not None:
        err = relative_sigma_error(sigma_hat, sigma_true)
    return MetricReport(rows, err)
