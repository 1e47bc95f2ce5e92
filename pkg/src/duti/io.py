"""CSV ingestion and schema-versioned JSON documents.

Training CSV: a header, feature columns ``feature_0 .. feature_{d-1}`` and a
``label`` column. The trusted CSV has the same layout plus an optional
``confidence`` column (100 when absent).
"""
from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from .core import CLASSIFICATION, REGRESSION, Dataset, DebugReport, DomainError, TrustedSet

SCHEMA = "duti/1"
_FEATURE = re.compile(r"feature_(\d+)$")


class InputError(DomainError):
    """Malformed input file; the message names the file, line and column."""


def _read_rows(path, allowed_extra):
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        rows = [(reader.line_num, row) for row in reader if any(cell.strip() for cell in row)]
    if "label" not in header:
        raise InputError(f"{path} line 1: missing required column 'label'")
    feats = {}
    for j, name in enumerate(header):
        m = _FEATURE.match(name)
        if m:
            feats[int(m.group(1))] = j
        elif name != "label" and name not in allowed_extra:
            raise InputError(f"{path} line 1: unexpected column {name!r}")
    if len(set(header)) != len(header):
        raise InputError(f"{path} line 1: duplicate column names")
    d = len(feats)
    if d == 0:
        raise InputError(f"{path} line 1: no feature columns (expected feature_0, feature_1, ...)")
    if sorted(feats) != list(range(d)):
        missing = sorted(set(range(d)) - set(feats))
        raise InputError(f"{path} line 1: feature columns must be feature_0..feature_{d - 1}; "
                         f"missing feature_{missing[0] if missing else d}")
    if not rows:
        raise InputError(f"{path}: no data rows")
    return path, header, feats, rows


def _number(path, line, column, text) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{path} line {line}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise InputError(f"{path} line {line}: column {column!r} is not finite")
    return v


def _parse(path, header, feats, rows, extra=()):
    d = len(feats)
    X = np.empty((len(rows), d))
    y = np.empty(len(rows))
    cols = {name: np.full(len(rows), np.nan) for name in extra if name in header}
    label_j = header.index("label")
    for r, (line, row) in enumerate(rows):
        if len(row) != len(header):
            raise InputError(f"{path} line {line}: expected {len(header)} fields, got {len(row)}")
        for f, j in feats.items():
            X[r, f] = _number(path, line, header[j], row[j])
        y[r] = _number(path, line, "label", row[label_j])
        for name in cols:
            cols[name][r] = _number(path, line, name, row[header.index(name)])
    return X, y, cols


def _check_labels(path, rows, y, task, n_classes):
    if task == CLASSIFICATION:
        for (line, _), v in zip(rows, y):
            if v != int(v) or v < 0:
                raise InputError(f"{path} line {line}: classification label {v:g} "
                                 "is not a nonnegative integer")
            if n_classes is not None and v >= n_classes:
                raise InputError(f"{path} line {line}: label {int(v)} is outside 0..{n_classes - 1}")


def read_training_csv(path, task: str = REGRESSION, n_classes=None) -> Dataset:
    path, header, feats, rows = _read_rows(path, ())
    X, y, _ = _parse(path, header, feats, rows)
    _check_labels(path, rows, y, task, n_classes)
    return Dataset(X, y, task, n_classes)


def read_trusted_csv(path, task: str = REGRESSION, n_classes=None) -> TrustedSet:
    path, header, feats, rows = _read_rows(path, ("confidence",))
    X, y, cols = _parse(path, header, feats, rows, ("confidence",))
    _check_labels(path, rows, y, task, n_classes)
    conf = cols.get("confidence")
    if conf is not None:
        for (line, _), c in zip(rows, conf):
            if c < 0:
                raise InputError(f"{path} line {line}: confidence must be nonnegative")
    return TrustedSet(X, y, conf)


def _fmt(v) -> str:
    v = float(v)
    return str(int(v)) if v == int(v) and abs(v) < 2 ** 53 else repr(v)


def write_training_csv(path, dataset: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"feature_{j}" for j in range(dataset.d)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in x] + [_fmt(y)])


def write_trusted_csv(path, trusted: TrustedSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"feature_{j}" for j in range(trusted.features.shape[1])] + ["label", "confidence"])
        for x, y, c in zip(trusted.features, trusted.labels, trusted.confidences):
            w.writerow([repr(float(v)) for v in x] + [_fmt(y), _fmt(c)])


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


# --------------------------------------------------------------------------
# JSON documents

def dump_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_json(path, kind: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} line {exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise InputError(f"{path}: not a {SCHEMA} document")
    if doc.get("kind") not in ((kind,) if isinstance(kind, str) else kind):
        raise InputError(f"{path}: expected a {kind} document, got {doc.get('kind')!r}")
    return doc


def sparse_delta(delta: np.ndarray, labels: np.ndarray, task: str) -> dict:
    """Only the entries that move away from the original labels."""
    if task == REGRESSION:
        nz = np.flatnonzero(delta != 0)
        return {"indices": nz.tolist(), "values": delta[nz].tolist()}
    k = delta.shape[1]
    base = np.eye(k)[labels.astype(int)]
    rows = np.flatnonzero(np.any(delta != base, axis=1))
    return {"rows": rows.tolist(), "values": delta[rows].tolist()}


def dense_delta(enc: dict, labels: np.ndarray, task: str, n_classes=None) -> np.ndarray:
    if task == REGRESSION:
        out = np.zeros(len(labels))
        out[np.asarray(enc["indices"], dtype=int)] = enc["values"]
        return out
    out = np.eye(n_classes)[labels.astype(int)]
    if enc["rows"]:
        out[np.asarray(enc["rows"], dtype=int)] = np.asarray(enc["values"], dtype=float)
    return out


def report_to_json(report: DebugReport, dataset: Dataset, config: dict) -> dict:
    traj = [{
        "iteration": rnd.iteration,
        "gamma": rnd.gamma,
        "converged": rnd.converged,
        "error": rnd.error,
        "flags": list(rnd.flags.indices),
        "delta": sparse_delta(rnd.delta, dataset.labels, report.task),
    } for rnd in report.trajectory]
    ranking = [{
        "index": r.index,
        "rank": r.rank,
        "first_iteration": r.first_iteration,
        "first_gamma": r.first_gamma,
        "deviation": r.deviation,
        "original_label": r.original_label,
        "fix": r.fix,
    } for r in report.ranking]
    return {
        "schema": SCHEMA,
        "kind": "debug_report",
        "task": report.task,
        "n": report.n,
        "n_classes": report.n_classes if report.task == CLASSIFICATION else None,
        "budget": report.budget,
        "gamma0": report.gamma0,
        "stop_reason": report.stop_reason,
        "converged": report.converged,
        "config": config,
        "fix_kind": "label",
        "trajectory": traj,
        "ranking": ranking,
    }


def ranking_to_json(ranking, dataset: Dataset, method: str, config: dict) -> dict:
    if method == "inf" and dataset.task == REGRESSION:
        fix_kind = "direction"
    elif ranking.fixes:
        fix_kind = "label"
    else:
        fix_kind = None
    rows = []
    for rank, (i, score) in enumerate(ranking.items, start=1):
        row = {"index": i, "rank": rank, "score": score, "original_label": float(dataset.labels[i])}
        if i in ranking.fixes:
            row["fix"] = ranking.fixes[i]
        rows.append(row)
    return {
        "schema": SCHEMA,
        "kind": "baseline_ranking",
        "method": method,
        "task": dataset.task,
        "n": dataset.n,
        "n_classes": dataset.n_classes if dataset.is_classification else None,
        "config": config,
        "fix_kind": fix_kind,
        "ranking": rows,
    }


def truth_to_json(corpus) -> dict:
    ds = corpus.dataset
    return {
        "schema": SCHEMA,
        "kind": "truth",
        "task": ds.task,
        "n": ds.n,
        "n_classes": ds.n_classes if ds.is_classification else None,
        "bug_indices": list(corpus.bug_indices),
        "true_labels": [float(v) for v in ds.true_labels],
        "provenance": corpus.provenance,
    }
