"""CSV dataset schema and JSON result documents.

The dataset schema is a headed CSV with a `y` column, covariate columns
`z1..zp`, and exposure columns `x{k}_{t}` (time index zero-padded); K and T
are inferred from the header and must form a full grid. Numbers are written
in shortest round-trip form so re-ingestion is exact.
"""

from __future__ import annotations

import csv
import json
import re
from importlib import metadata

import numpy as np

from .core import RegressionData

SCHEMA_VERSION = "1.0"

try:
    SOFTWARE_VERSION = metadata.version("qdlag")
except metadata.PackageNotFoundError:  # pragma: no cover - not installed
    SOFTWARE_VERSION = "0.0.0"

_X_COL = re.compile(r"^x(\d+)_(\d+)$")
_Z_COL = re.compile(r"^z(\d+)$")


class SchemaError(ValueError):
    """Input file violates the dataset or document schema."""


def _fmt(v) -> str:
    return repr(float(v))


def write_dataset_csv(path, data: RegressionData) -> None:
    """Write a dataset in the standard column layout."""
    width = len(str(data.T))
    header = ["y"]
    header += [f"z{j + 1}" for j in range(data.p)]
    header += [
        f"x{k + 1}_{t + 1:0{width}d}" for k in range(data.K) for t in range(data.T)
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        design = data.design()
        for i in range(data.n):
            row = [_fmt(data.response[i])]
            row += [_fmt(v) for v in data.covariates[i]]
            row += [_fmt(v) for v in design[i]]
            w.writerow(row)


def _parse_header(header):
    cols = [h.strip() for h in header]
    if "y" not in cols:
        raise SchemaError("missing required column 'y'")
    y_idx = cols.index("y")
    z_map = {}
    x_map = {}
    unknown = []
    for idx, name in enumerate(cols):
        if idx == y_idx:
            continue
        mz = _Z_COL.match(name)
        mx = _X_COL.match(name)
        if mz:
            z_map[int(mz.group(1))] = idx
        elif mx:
            x_map[(int(mx.group(1)), int(mx.group(2)))] = idx
        else:
            unknown.append(name)
    if unknown:
        raise SchemaError(f"unrecognized columns {unknown}")
    p = len(z_map)
    if sorted(z_map) != list(range(1, p + 1)):
        raise SchemaError(f"covariate columns must be z1..z{p}, got {sorted(z_map)}")
    if x_map:
        ks = sorted({k for k, _ in x_map})
        ts = sorted({t for _, t in x_map})
        K, T = ks[-1], ts[-1]
        want = {(k, t) for k in range(1, K + 1) for t in range(1, T + 1)}
        if set(x_map) != want:
            missing = sorted(want - set(x_map))[:5]
            raise SchemaError(
                f"exposure columns do not form a full {K}x{T} grid; "
                f"first missing cells {missing}"
            )
    else:
        K = T = 0
    return y_idx, z_map, x_map, K, T, p


def read_dataset_csv(path) -> RegressionData:
    """Read a dataset; rejects incomplete rows, naming their row numbers."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError("empty file")
    y_idx, z_map, x_map, K, T, p = _parse_header(rows[0])
    ncol = len(rows[0])
    bad_rows = []
    parsed = []
    for rnum, row in enumerate(rows[1:], start=1):
        if len(row) != ncol:
            bad_rows.append(rnum)
            continue
        try:
            vals = [float(c) for c in row]
        except ValueError:
            bad_rows.append(rnum)
            continue
        if not all(np.isfinite(vals)):
            bad_rows.append(rnum)
            continue
        parsed.append(vals)
    if bad_rows:
        raise SchemaError(
            f"rows with missing or unparseable cells (complete cases required): "
            f"{bad_rows[:20]}"
        )
    if not parsed:
        raise SchemaError("no data rows")
    arr = np.asarray(parsed)
    n = arr.shape[0]
    y = arr[:, y_idx]
    z = np.empty((n, p))
    for j in range(1, p + 1):
        z[:, j - 1] = arr[:, z_map[j]]
    x = np.empty((n, K, T))
    for (k, t), idx in x_map.items():
        x[:, k - 1, t - 1] = arr[:, idx]
    if K == 0:
        x = np.zeros((n, 0, 0))
    return RegressionData(x, z, y)


def fit_document(result, estimator: str, tau: float, tuning: dict, seed) -> dict:
    """Result document for a single fit; row-major arrays, explicit dims."""
    beta = np.asarray(result.beta, dtype=float)
    K, T = beta.shape if beta.ndim == 2 else (0, 0)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit",
        "software": {"name": "qdlag", "version": SOFTWARE_VERSION},
        "estimator": estimator,
        "tau": float(tau),
        "tuning": tuning,
        "seed": seed,
        "dims": {"K": K, "T": T, "p": int(np.asarray(result.gamma).size)},
        "beta": beta.tolist(),
        "gamma": np.asarray(result.gamma, dtype=float).tolist(),
        "modes": None if result.modes is None else np.asarray(result.modes).tolist(),
        "objective": float(result.objective),
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
    }


def write_document(path, doc: dict) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_document(path) -> dict:
    """Load a result document, rejecting incompatible major schema versions."""
    with open(path) as fh:
        doc = json.load(fh)
    version = str(doc.get("schema_version", ""))
    major = version.split(".", 1)[0]
    want_major = SCHEMA_VERSION.split(".", 1)[0]
    if major != want_major:
        raise SchemaError(
            f"document schema version {version!r} is incompatible with "
            f"{SCHEMA_VERSION!r}"
        )
    return doc


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "objective", "primal", "dual"])
        for i in range(len(trace.objective)):
            w.writerow(
                [i + 1, _fmt(trace.objective[i]), _fmt(trace.primal[i]), _fmt(trace.dual[i])]
            )


def write_scores_csv(path, sel) -> None:
    """Validation-score table: rows lambda1, columns lambda2."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda1"] + [_fmt(v) for v in sel.lambda2_values])
        for i, l1 in enumerate(sel.lambda1_values):
            row = [_fmt(l1)]
            for j in range(len(sel.lambda2_values)):
                s = sel.score_table[i, j]
                row.append(_fmt(s) if np.isfinite(s) else "")
            w.writerow(row)


def write_bands_csv(path, result, band, report) -> None:
    """Per-(exposure, time) estimates, band endpoints and window flags."""
    beta = np.asarray(result.beta, dtype=float)
    K, T = beta.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["exposure", "time", "estimate", "lower", "upper", "excludes_zero", "intensity"]
        )
        for k in range(K):
            for t in range(T):
                w.writerow(
                    [
                        k + 1,
                        t + 1,
                        _fmt(beta[k, t]),
                        _fmt(band.beta_lower[k, t]),
                        _fmt(band.beta_upper[k, t]),
                        int(report.excludes_zero[k, t]),
                        _fmt(report.intensity[k, t]),
                    ]
                )
