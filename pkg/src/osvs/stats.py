"""Nonparametric group statistics: Friedman, signed-rank post-hocs, Spearman.

Friedman uses within-subject mean ranks and the standard tie correction;
for small samples the p value comes from the exact permutation
distribution (dynamic programming over column rank sums) rather than the
chi-square approximation. Post-hoc pairs use the exact Wilcoxon
signed-rank distribution with Bonferroni correction. Correlations are
Spearman (Pearson on mean ranks) with an exact permutation p for small n
and the t approximation otherwise. Reported values follow the
significance gate: a correlation is listed only when p < 0.05.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.stats import chi2 as chi2_dist
from scipy.stats import norm
from scipy.stats import t as t_dist

from .errors import ConfigError

EXACT_FRIEDMAN_MAX_N = 8
EXACT_FRIEDMAN_MAX_K = 4
EXACT_WILCOXON_MAX_N = 25
EXACT_SPEARMAN_MAX_N = 9
SIGNIFICANCE_LEVEL = 0.05

_STAR_THRESHOLDS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


def stars_for_p(p: float) -> str:
    for threshold, mark in _STAR_THRESHOLDS:
        if p < threshold:
            return mark
    return "n.s."


def rank_mean(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class RepeatedMeasures:
    """Subjects x conditions matrix with no missing cells."""

    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ConfigError("values must be a 2-D subjects x conditions matrix")
        n, k = v.shape
        if k < 2 or n < 2:
            raise ConfigError(f"need at least 2 subjects and 2 conditions, got {n}x{k}")
        if len(self.labels) != k:
            raise ConfigError(f"{len(self.labels)} labels for {k} conditions")
        if not np.isfinite(v).all():
            raise ConfigError("missing or non-finite cells are not allowed")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PairResult:
    labels: tuple[str, str]
    w_statistic: float
    n_nonzero: int
    p_raw: float
    p: float  # Bonferroni-adjusted
    stars: str
    method: str


@dataclass(frozen=True)
class FriedmanResult:
    chi2: float
    df: int
    p: float
    method: str  # "exact" or "chi2"
    posthoc: tuple[PairResult, ...] = field(default=())


@dataclass(frozen=True)
class CorrelationResult:
    rho: Optional[float]
    p: Optional[float]
    n: int
    significant: bool
    undefined: bool = False
    method: str = "t"

    @property
    def reported_value(self) -> Union[float, str]:
        return self.rho if self.significant else "n.s."


def _row_ranks(values: np.ndarray) -> np.ndarray:
    return np.vstack([rank_mean(row) for row in values])


def _tie_factor(values: np.ndarray) -> float:
    """1 - sum(t^3 - t)/(n k (k^2 - 1)) over tie groups of every row."""
    n, k = values.shape
    correction = 0.0
    for row in values:
        _, counts = np.unique(row, return_counts=True)
        correction += float((counts.astype(float) ** 3 - counts).sum())
    return 1.0 - correction / (n * k * (k * k - 1))


def _friedman_chi2(values: np.ndarray) -> float:
    n, k = values.shape
    ranks = _row_ranks(values)
    col_sums = ranks.sum(axis=0)
    raw = 12.0 * float((col_sums ** 2).sum()) / (n * k * (k + 1)) - 3.0 * n * (k + 1)
    c = _tie_factor(values)
    if c == 0.0:
        return 0.0  # every row completely tied
    return raw / c


def _exact_friedman_p(values: np.ndarray) -> float:
    """P(T >= T_obs) over all within-row permutations.

    The tie factor is invariant under within-row permutation, so ordering
    by sum of squared column rank sums is equivalent to ordering by the
    corrected statistic. Doubled ranks keep everything in integers; the
    DP state is the tuple of column sums.
    """
    ranks = _row_ranks(values)
    doubled = (2.0 * ranks).round().astype(int)
    n, k = doubled.shape
    t_obs = int((doubled.sum(axis=0).astype(object) ** 2).sum())
    perm_idx = list(itertools.permutations(range(k)))
    states: dict[tuple[int, ...], int] = {(0,) * k: 1}
    for row in doubled:
        nxt: dict[tuple[int, ...], int] = {}
        variants = {tuple(int(row[i]) for i in p) for p in perm_idx}
        weights = {v: 0 for v in variants}
        for p in perm_idx:
            weights[tuple(int(row[i]) for i in p)] += 1
        for state, count in states.items():
            for variant, w in weights.items():
                key = tuple(s + r for s, r in zip(state, variant))
                nxt[key] = nxt.get(key, 0) + count * w
        states = nxt
    total = len(perm_idx) ** n
    hits = sum(c for s, c in states.items() if sum(v * v for v in s) >= t_obs)
    return hits / total


def friedman(data: RepeatedMeasures, posthoc: bool = True) -> FriedmanResult:
    """Friedman test across k conditions; exact p for small samples."""
    v = data.values
    n, k = v.shape
    chi2 = _friedman_chi2(v)
    if n <= EXACT_FRIEDMAN_MAX_N and k <= EXACT_FRIEDMAN_MAX_K:
        p = _exact_friedman_p(v)
        method = "exact"
    else:
        p = float(chi2_dist.sf(chi2, k - 1))
        method = "chi2"
    p = min(max(p, np.nextafter(0.0, 1.0)), 1.0)
    pairs = posthoc_pairs(data) if posthoc else ()
    return FriedmanResult(chi2, k - 1, p, method, pairs)


def _exact_signed_rank_p(doubled_ranks: Sequence[int], w2_obs: int) -> float:
    """Two-sided exact p for W+ by DP over the signed-rank polynomial."""
    total = int(sum(doubled_ranks))
    pmf = np.zeros(total + 1)
    pmf[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(pmf)
        shifted[r:] = pmf[:len(pmf) - r]
        pmf = (pmf + shifted) / 2.0
    dev_obs = abs(2 * w2_obs - total)
    support = np.arange(total + 1)
    return float(pmf[np.abs(2 * support - total) >= dev_obs].sum())


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, int, str]:
    """Paired two-sided test. Returns (W+, p, n_nonzero, method).

    Zero differences are dropped; tied magnitudes share mean ranks. Exact
    for small samples, normal approximation with tie correction beyond.
    """
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if len(d) != len(np.asarray(y)):
        raise ConfigError("paired vectors must have equal length")
    d = d[d != 0.0]
    m = len(d)
    if m == 0:
        return 0.0, 1.0, 0, "exact"
    ranks = rank_mean(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if m <= EXACT_WILCOXON_MAX_N:
        doubled = (2.0 * ranks).round().astype(int)
        w2 = int(round(2.0 * w_plus))
        return w_plus, _exact_signed_rank_p(doubled.tolist(), w2), m, "exact"
    mu = m * (m + 1) / 4.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    tie_term = float((counts.astype(float) ** 3 - counts).sum()) / 48.0
    sigma = np.sqrt(m * (m + 1) * (2 * m + 1) / 24.0 - tie_term)
    if sigma == 0.0:
        return w_plus, 1.0, m, "normal"
    z = (w_plus - mu) / sigma
    return w_plus, float(2.0 * norm.sf(abs(z))), m, "normal"


def posthoc_pairs(data: RepeatedMeasures) -> tuple[PairResult, ...]:
    """Pairwise signed-rank tests, Bonferroni-corrected across all pairs."""
    v = data.values
    pairs = list(itertools.combinations(range(data.k), 2))
    results = []
    for i, j in pairs:
        w, p_raw, m, method = wilcoxon_signed_rank(v[:, i], v[:, j])
        p_adj = min(1.0, p_raw * len(pairs))
        results.append(PairResult(
            (data.labels[i], data.labels[j]), w, m, p_raw, p_adj,
            stars_for_p(p_adj), method,
        ))
    return tuple(results)


def _pearson_on(x: np.ndarray, y: np.ndarray) -> Optional[float]:
    cx = x - x.mean()
    cy = y - y.mean()
    sx = float((cx ** 2).sum())
    sy = float((cy ** 2).sum())
    if sx == 0.0 or sy == 0.0:
        return None
    r = float((cx * cy).sum()) / float(np.sqrt(sx * sy))
    return max(-1.0, min(1.0, r))


def _exact_spearman_p(rx: np.ndarray, ry: np.ndarray, rho_obs: float) -> float:
    n = len(rx)
    hits = 0
    total = 0
    for perm in itertools.permutations(range(n)):
        total += 1
        r = _pearson_on(rx, ry[list(perm)])
        if r is not None and abs(r) >= abs(rho_obs) - 1e-12:
            hits += 1
    return hits / total


def correlate(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Spearman rank correlation with the listing rule applied."""
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if len(xv) != len(yv):
        raise ConfigError("vectors must have equal length")
    n = len(xv)
    if n < 3:
        raise ConfigError(f"need at least 3 pairs, got {n}")
    rx = rank_mean(xv)
    ry = rank_mean(yv)
    rho = _pearson_on(rx, ry)
    if rho is None:
        return CorrelationResult(None, None, n, False, undefined=True, method="none")
    if n <= EXACT_SPEARMAN_MAX_N:
        p = _exact_spearman_p(rx, ry, rho)
        method = "exact"
    else:
        if abs(rho) >= 1.0:
            p = 0.0
        else:
            t = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
            p = float(2.0 * t_dist.sf(abs(t), n - 2))
        method = "t"
    return CorrelationResult(rho, min(p, 1.0), n, p < SIGNIFICANCE_LEVEL, method=method)


@dataclass(frozen=True)
class CorrelationTable:
    row_vars: tuple[str, ...]
    col_vars: tuple[str, ...]
    conditions: tuple[str, ...]
    participants: tuple[str, ...]
    cells: Mapping[tuple[str, str, str], CorrelationResult]

    def cell(self, row: str, col: str, condition: str) -> CorrelationResult:
        return self.cells[(row, col, condition)]


def correlation_table(
    metric_rows: Sequence[tuple[str, str, str, str, Optional[float]]],
    profiles: Mapping[str, Mapping[str, float]],
    row_vars: Sequence[str],
    col_vars: Sequence[str],
    conditions: Sequence[str] = ("P1", "P3", "P5"),
) -> CorrelationTable:
    """Correlate row variables against per-condition column metrics.

    metric_rows are (participant, group, condition, metric, value) tuples,
    the cohort long format. A variable named in profiles is taken per
    participant and held fixed across conditions; any other variable must
    resolve as a metric for every participant and condition, otherwise
    the unmatched ids are reported. A variable written "metric@COND" is
    pinned: it always reads the metric at COND no matter which column
    condition it is correlated against.
    """
    participants = tuple(sorted(profiles))
    if not participants:
        raise ConfigError("no participants to join")
    values: dict[tuple[str, str, str], float] = {}
    seen_ids = set()
    for pid, _group, cond, metric, value in metric_rows:
        seen_ids.add(pid)
        if value is not None:
            values[(pid, cond, metric)] = float(value)
    unmatched = sorted(set(participants) ^ seen_ids)
    if unmatched:
        raise ConfigError("participants missing from join: " + ", ".join(unmatched))

    profile_vars = set()
    for pid in participants:
        profile_vars.update(profiles[pid])

    def vector(var: str, cond: str) -> np.ndarray:
        if var in profile_vars:
            try:
                return np.asarray([float(profiles[p][var]) for p in participants])
            except KeyError as exc:
                raise ConfigError(f"profile variable {var!r} missing for some participants") from exc
        name, at = var, cond
        if "@" in var:
            name, at = var.split("@", 1)
        missing = [p for p in participants if (p, at, name) not in values]
        if missing:
            raise ConfigError(
                f"metric {name!r} at {at} missing for: " + ", ".join(sorted(missing))
            )
        return np.asarray([values[(p, at, name)] for p in participants])

    cells: dict[tuple[str, str, str], CorrelationResult] = {}
    for cond in conditions:
        for rv in row_vars:
            xs = vector(rv, cond)
            for cv in col_vars:
                cells[(rv, cv, cond)] = correlate(xs, vector(cv, cond))
    return CorrelationTable(tuple(row_vars), tuple(col_vars), tuple(conditions),
                            participants, cells)


def format_correlation(res: CorrelationResult, digits: int = 2) -> str:
    if res.significant and res.rho is not None:
        return f"{res.rho:.{digits}f}"
    return "n.s."


def correlation_table_text(table: CorrelationTable) -> str:
    """Plain-text rendering: one row per row variable, columns metric@condition."""
    cols = [f"{cv}@{cond}" for cond in table.conditions for cv in table.col_vars]
    width = max(len(c) for c in cols + list(table.row_vars)) + 2
    lines = ["".rjust(width) + "".join(c.rjust(width) for c in cols)]
    for rv in table.row_vars:
        cells = [
            format_correlation(table.cell(rv, cv, cond))
            for cond in table.conditions for cv in table.col_vars
        ]
        lines.append(rv.rjust(width) + "".join(c.rjust(width) for c in cells))
    return "\n".join(lines) + "\n"


def correlation_table_csv(table: CorrelationTable) -> str:
    lines = ["row,column,condition,n,rho,p,reported"]
    for cond in table.conditions:
        for rv in table.row_vars:
            for cv in table.col_vars:
                r = table.cell(rv, cv, cond)
                rho = "" if r.rho is None else f"{r.rho:.6f}"
                p = "" if r.p is None else f"{r.p:.6g}"
                reported = format_correlation(r)
                lines.append(f"{rv},{cv},{cond},{r.n},{rho},{p},{reported}")
    return "\n".join(lines) + "\n"
