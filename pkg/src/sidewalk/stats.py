"""Rank-based group comparisons: Kruskal-Wallis with pairwise Mann-Whitney follow-ups."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import chi2, rankdata


@dataclass(frozen=True)
class KruskalResult:
    H: float
    df: int
    p: float


@dataclass(frozen=True)
class MannWhitneyResult:
    U: float
    p: float


def _as_groups(groups) -> list[np.ndarray]:
    arrays = [np.asarray(g, dtype=float).ravel() for g in groups]
    if any(a.size == 0 for a in arrays):
        raise ValueError("every group needs at least one value")
    if any(not np.isfinite(a).all() for a in arrays):
        raise ValueError("groups must contain finite values only")
    return arrays


def tie_term(values: np.ndarray) -> float:
    """Sum of ``t^3 - t`` over tie blocks."""
    _, counts = np.unique(values, return_counts=True)
    counts = counts.astype(float)
    return float(np.sum(counts**3 - counts))


def kruskal_wallis(*groups) -> KruskalResult:
    """H statistic on mid-ranks, tie corrected, with a chi-squared p-value.

    Accepts groups either as separate arguments or as one sequence of groups.
    """
    if len(groups) == 1 and all(np.ndim(g) == 1 for g in groups[0]):
        groups = tuple(groups[0])
    arrays = _as_groups(groups)
    if len(arrays) < 2:
        raise ValueError("need at least two groups")
    pooled = np.concatenate(arrays)
    n = pooled.size
    df = len(arrays) - 1
    correction = 1.0 - tie_term(pooled) / (n**3 - n) if n > 1 else 0.0
    if correction <= 0.0:
        return KruskalResult(0.0, df, 1.0)
    ranks = rankdata(pooled)
    total = 0.0
    start = 0
    for a in arrays:
        r = ranks[start : start + a.size].sum()
        total += r * r / a.size
        start += a.size
    h = (12.0 / (n * (n + 1)) * total - 3.0 * (n + 1)) / correction
    h = max(h, 0.0)
    return KruskalResult(h, df, float(chi2.sf(h, df)))


def mann_whitney_u(a, b) -> MannWhitneyResult:
    """U for ``a`` against ``b`` and a two-sided normal-approximation p-value.

    ``U`` counts pairs with ``a_i > b_j`` plus half the ties, so swapping the
    arguments maps ``U`` to ``len(a) * len(b) - U``.
    """
    x, y = _as_groups([a, b])
    n1, n2 = x.size, y.size
    u = float(np.sum(x[:, None] > y[None, :]) + 0.5 * np.sum(x[:, None] == y[None, :]))
    n = n1 + n2
    mean = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term(np.concatenate([x, y])) / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0.0:
        return MannWhitneyResult(u, 1.0)
    z = max(abs(u - mean) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, 2.0 * float(ndtr(-z)))
    return MannWhitneyResult(u, p)


def bonferroni(pvalues, m: int | None = None) -> list[float]:
    """Multiply by the number of comparisons and cap at one."""
    ps = [float(p) for p in pvalues]
    if m is None:
        m = len(ps)
    if m < 1:
        raise ValueError("number of comparisons must be positive")
    for p in ps:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p-value {p} outside [0, 1]")
    return [min(1.0, p * m) for p in ps]


@dataclass(frozen=True)
class GroupComparison:
    names: tuple[str, ...]
    kruskal: KruskalResult
    pairwise: dict[tuple[str, str], float]
    medians: dict[str, float]


def compare_groups(named_groups: dict[str, list[float]]) -> GroupComparison:
    """Omnibus test plus Bonferroni-adjusted pairwise Mann-Whitney tests."""
    names = tuple(named_groups)
    kw = kruskal_wallis([named_groups[k] for k in names])
    pairs = list(itertools.combinations(names, 2))
    raw = [mann_whitney_u(named_groups[a], named_groups[b]).p for a, b in pairs]
    adjusted = bonferroni(raw, len(pairs))
    medians = {k: float(np.median(named_groups[k])) for k in names}
    return GroupComparison(names, kw, dict(zip(pairs, adjusted)), medians)


def format_p(p: float) -> str:
    if p < 0.001:
        return "p<.001"
    return f"p={p:.3f}"


def format_report(metric: str, comparison: GroupComparison) -> str:
    """Plain-text summary: ``H(df)=value, p`` then medians and pairwise adjusted p-values."""
    kw = comparison.kruskal
    lines = [
        f"metric: {metric}",
        f"Kruskal-Wallis H({kw.df})={kw.H:.2f}, {format_p(kw.p)} (p={kw.p:.6g})",
        "medians:",
    ]
    for name in comparison.names:
        lines.append(f"  {name}: {comparison.medians[name]:.4f}")
    lines.append("pairwise Mann-Whitney U, Bonferroni adjusted:")
    for (a, b), p in comparison.pairwise.items():
        lines.append(f"  {a} vs {b}: {format_p(p)} (p={p:.6g})")
    return "\n".join(lines) + "\n"
