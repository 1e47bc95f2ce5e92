"""Precision-recall curves over rankings and fix-correctness accounting."""
from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .core import DomainError

RECALL_GRID = np.round(np.arange(0.0, 1.0 + 1e-9, 0.05), 10)


def pr_curve(ranking: Iterable[int], bug_indices) -> list:
    """``(recall, precision)`` after examining each prefix of the ranking."""
    bugs = set(int(i) for i in bug_indices)
    if not bugs:
        raise DomainError("recall is undefined without any true bugs")
    ranking = [int(i) for i in ranking]
    if len(set(ranking)) != len(ranking):
        raise DomainError("ranking contains duplicate indices")
    hits = np.cumsum([i in bugs for i in ranking])
    j = np.arange(1, len(ranking) + 1)
    return [(float(h / len(bugs)), float(h / k)) for h, k in zip(hits, j)]


def interpolate_pr(curve, grid=RECALL_GRID) -> np.ndarray:
    """Precision at each grid recall ``r``: best precision at any recall >= r, else 0."""
    out = np.zeros(len(grid))
    if not curve:
        return out
    rec = np.array([r for r, _ in curve])
    prec = np.array([p for _, p in curve])
    for g, r in enumerate(grid):
        reach = rec >= r - 1e-12
        if reach.any():
            out[g] = prec[reach].max()
    return out


def average_pr(curves, grid=RECALL_GRID) -> np.ndarray:
    """Pointwise mean of the interpolated curves; rows are ``(recall, precision)``."""
    curves = list(curves)
    if not curves:
        raise DomainError("need at least one curve to average")
    prec = np.mean([interpolate_pr(c, grid) for c in curves], axis=0)
    return np.column_stack([grid, prec])


def pr_area(avg: np.ndarray) -> float:
    """Trapezoidal area under an averaged curve from :func:`average_pr`."""
    return float(np.trapezoid(avg[:, 1], avg[:, 0]))


def precision_at(ranking, bug_indices, k: int) -> float:
    """Share of true bugs among the first ``k`` ranked items (missing slots count as misses)."""
    bugs = set(int(i) for i in bug_indices)
    top = [int(i) for i in list(ranking)[:k]]
    return sum(i in bugs for i in top) / k


def fix_curve_from(ranking, fixes: dict, true_labels, bug_indices,
                   tolerance: float = 0.0) -> list:
    """``(flags_examined, correct_fixes)`` walking the ranking.

    A fix counts when the item is a true bug and the suggestion lies within
    ``tolerance`` of its true label (exact match for class labels).
    """
    bugs = set(int(i) for i in bug_indices)
    true_labels = np.asarray(true_labels, dtype=float)
    out, correct = [], 0
    for j, i in enumerate(ranking, start=1):
        i = int(i)
        if i not in fixes:
            raise DomainError(f"no suggested fix for flagged item {i}")
        if i in bugs and abs(float(fixes[i]) - true_labels[i]) <= tolerance:
            correct += 1
        out.append((j, correct))
    return out


def fix_curve(report, corpus, tolerance: float = 0.0) -> list:
    """Fix-correctness curve of a debug report (or baseline ranking) on a simulated corpus."""
    truth = corpus.dataset.true_labels
    if truth is None:
        raise DomainError("corpus carries no true labels")
    ranking = report.ranked_indices if hasattr(report, "ranked_indices") else report.indices
    return fix_curve_from(ranking, report.fixes, truth, corpus.bug_indices, tolerance)


def mean_fix_error(report, corpus, target: Optional[np.ndarray] = None) -> float:
    """Mean ``|fix - target|`` over flagged true bugs (regression).

    ``target`` defaults to the corpus's true labels.
    """
    target = corpus.dataset.true_labels if target is None else np.asarray(target, dtype=float)
    bugs = corpus.bug_set
    errs = [abs(fix - target[i]) for i, fix in report.fixes.items() if i in bugs]
    return float(np.mean(errs)) if errs else float("nan")
