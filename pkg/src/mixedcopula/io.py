"""Files: schema JSON, data CSV, fitted-model JSON and result sidecars.

CSV conventions: a header row with the variable names, an empty cell or
``NA`` for a missing value, discrete cells as integer codes
``0..levels-1`` and floats written with 17 significant digits so they read
back exactly.
"""
import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .copula_model import CopulaParams, LatentLayout, n_theta
from .marginals import (BinaryMarginal, ContinuousMarginal,
                        MultinomialMarginal, OrdinalMarginal)
from .schema import Schema, VariableKind

__all__ = [
    "DataError", "MODEL_FORMAT", "MODEL_VERSION", "FittedModel",
    "read_schema", "write_schema", "load_csv", "write_csv", "save_model",
    "load_model", "write_matrix", "read_matrix", "write_probabilities",
    "format_float", "config_digest",
]

MODEL_FORMAT = "mixedcopula-model"
MODEL_VERSION = 1
MISSING = ("", "NA")


class DataError(ValueError):
    """Malformed input file."""


def format_float(x):
    return format(float(x), ".17g")


def read_schema(path):
    try:
        with open(path) as fh:
            return Schema.from_dict(json.load(fh))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed schema ({exc})") from None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_schema(schema, path):
    with open(path, "w") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


def _parse_cell(text, var, r, c, path):
    text = text.strip()
    if text in MISSING:
        return np.nan
    where = f"{path}: row {r}, column {c + 1} ({var.name!r})"
    try:
        x = float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse {text!r}") from None
    if not np.isfinite(x):
        raise DataError(f"{where}: value {text!r} is not finite")
    if var.kind is VariableKind.CONTINUOUS:
        return x
    if x != int(x) or not 0 <= x < var.levels:
        raise DataError(f"{where}: {text!r} is not a category code "
                        f"0..{var.levels - 1}")
    return x


def load_csv(path, schema):
    """Read a table; returns a float array with NaN for missing cells.

    Row numbers in error messages count the header as row 1.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header != schema.names:
            raise DataError(f"{path}: header {header} does not match the "
                            f"schema names {schema.names}")
        rows = []
        for r, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(schema):
                raise DataError(f"{path}: row {r} has {len(rec)} cells, "
                                f"expected {len(schema)}")
            rows.append([_parse_cell(t, v, r, c, path)
                         for c, (t, v) in enumerate(zip(rec, schema))])
    return np.array(rows, dtype=float).reshape(len(rows), len(schema))


def _format_cell(x, var):
    if np.isnan(x):
        return ""
    if var.kind is VariableKind.CONTINUOUS:
        return format_float(x)
    return str(int(x))


def write_csv(path, data, schema):
    data = np.asarray(data, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(schema.names)
        for row in data:
            w.writerow([_format_cell(x, v) for x, v in zip(row, schema)])


def write_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in M:
            w.writerow([format_float(x) for x in row])


def read_matrix(path):
    with open(path, newline="") as fh:
        rows = [[float(t) for t in rec] for rec in csv.reader(fh) if rec]
    try:
        return np.array(rows, dtype=float)
    except ValueError:
        raise DataError(f"{path}: rows have different lengths") from None


def write_probabilities(path, results, schema):
    """Sidecar with one line per (row, column, category) of imputed cells."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "column", "category", "probability"])
        for res in results:
            for cell in res.cells:
                if cell.probs is None:
                    continue
                for k, p in enumerate(cell.probs):
                    w.writerow([res.row, schema[cell.column].name, k,
                                format_float(p)])


# -- fitted models -------------------------------------------------------------

def _marginal_to_dict(m):
    if isinstance(m, ContinuousMarginal):
        return {"type": "continuous", "knots_x": m.knots_x.tolist(),
                "knots_z": m.knots_z.tolist(), "n_observed": m.n_observed}
    if isinstance(m, BinaryMarginal):
        return {"type": "binary", "p": m.p}
    if isinstance(m, OrdinalMarginal):
        return {"type": "ordinal", "thresholds": m.thresholds.tolist(),
                "frequencies": m.frequencies.tolist()}
    return {"type": "multinomial", "frequencies": m.frequencies.tolist()}


def _marginal_from_dict(d):
    t = d["type"]
    if t == "continuous":
        return ContinuousMarginal(np.array(d["knots_x"], dtype=float),
                                  np.array(d["knots_z"], dtype=float),
                                  int(d["n_observed"]))
    if t == "binary":
        return BinaryMarginal(float(d["p"]))
    if t == "ordinal":
        return OrdinalMarginal(np.array(d["thresholds"], dtype=float),
                               np.array(d["frequencies"], dtype=float))
    if t == "multinomial":
        return MultinomialMarginal(np.array(d["frequencies"], dtype=float))
    raise DataError(f"unknown marginal type {t!r}")


@dataclass
class FittedModel:
    schema: Schema
    marginals: tuple
    params: CopulaParams
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, FittedModel):
            return NotImplemented
        return (self.schema == other.schema
                and json.dumps([_marginal_to_dict(m) for m in self.marginals])
                == json.dumps([_marginal_to_dict(m) for m in other.marginals])
                and np.array_equal(self.params.theta, other.params.theta)
                and self.metadata == other.metadata)


def config_digest(obj):
    """Short stable hash of a JSON-serializable configuration."""
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_model(model, path):
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema": model.schema.to_dict(),
        "marginals": [_marginal_to_dict(m) for m in model.marginals],
        "theta": model.params.theta.tolist(),
        "metadata": model.metadata,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a model file ({exc})") from None
    if doc.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a {MODEL_FORMAT} file")
    version = doc.get("version")
    if not isinstance(version, int) or version > MODEL_VERSION or version < 1:
        raise DataError(f"{path}: model format version {version!r} is not "
                        f"supported (this build reads up to {MODEL_VERSION})")
    try:
        schema = Schema.from_dict(doc["schema"])
        marginals = tuple(_marginal_from_dict(d) for d in doc["marginals"])
        layout = LatentLayout(schema)
        theta = np.array(doc["theta"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model ({exc})") from None
    if len(marginals) != len(schema) or theta.shape != (n_theta(layout),):
        raise DataError(f"{path}: model does not match its schema")
    return FittedModel(schema, marginals, CopulaParams(layout, theta),
                       doc.get("metadata", {}))
