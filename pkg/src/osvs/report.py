"""Plain-text and CSV renderings of the cohort result tables.

Every renderer is a pure function of its inputs so that re-running a
pipeline stage on unchanged data reproduces its output byte for byte.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

from .stats import SIGNIFICANCE_LEVEL, FriedmanResult

# Long-format metric keys in display order with their table labels.
METRIC_LABELS: tuple[tuple[str, str], ...] = (
    ("tp", "TP"),
    ("tn", "TN"),
    ("fp", "FP"),
    ("fn", "FN"),
    ("accuracy", "Accuracy"),
    ("precision", "Precision"),
    ("sensitivity", "Sensitivity"),
    ("median_rt_s", "Reaction time"),
    ("erp_amplitude_uv", "ERP amplitude"),
    ("erp_latency_s", "ERP latency"),
)

STAR_LEGEND = "*: p<0.05  **: p<0.01  ***: p<0.001  n.s.: not significant"

MetricRow = tuple[str, str, str, str, Optional[float]]


def metric_label(key: str) -> str:
    return dict(METRIC_LABELS).get(key, key)


def _pair_names(results: Mapping[tuple[str, str], Optional[FriedmanResult]]) -> list[str]:
    for res in results.values():
        if res is not None and res.posthoc:
            return [f"{p.labels[0]}-{p.labels[1]}" for p in res.posthoc]
    return ["P1-P3", "P1-P5", "P3-P5"]


def render_friedman_text(
    results: Mapping[tuple[str, str], Optional[FriedmanResult]],
    groups: Sequence[str] = ("young", "elderly"),
    metrics: Sequence[str] = (),
) -> str:
    """Grid of post-hoc significance stars, one row per metric.

    Cells show the Bonferroni-adjusted pairwise level only when the
    omnibus test itself is significant; a missing result renders "n/a".
    """
    if not metrics:
        metrics = [m for m, _ in METRIC_LABELS if any((g, m) in results for g in groups)]
    pairs = _pair_names(results)
    colw = 8
    left = max([len(metric_label(m)) for m in metrics] + [len("metric")]) + 2
    block = colw * len(pairs)
    head1 = " " * left + "".join(g.center(block) for g in groups)
    head2 = "metric".ljust(left) + "".join(p.rjust(colw) for _ in groups for p in pairs)
    lines = [head1.rstrip(), head2]
    for m in metrics:
        cells: list[str] = []
        for g in groups:
            res = results.get((g, m))
            if res is None:
                cells += ["n/a"] * len(pairs)
            elif res.p >= SIGNIFICANCE_LEVEL or not res.posthoc:
                cells += ["n.s."] * len(pairs)
            else:
                cells += [p.stars for p in res.posthoc]
        lines.append(metric_label(m).ljust(left) + "".join(c.rjust(colw) for c in cells))
    lines += ["", STAR_LEGEND]
    return "\n".join(lines) + "\n"


def friedman_csv(
    results: Mapping[tuple[str, str], Optional[FriedmanResult]],
    groups: Sequence[str] = ("young", "elderly"),
    metrics: Sequence[str] = (),
) -> str:
    """Machine twin of the star grid: one row per (group, metric, pair)."""
    if not metrics:
        metrics = [m for m, _ in METRIC_LABELS if any((g, m) in results for g in groups)]
    lines = ["group,metric,chi2,df,p,method,pair,w_statistic,n_nonzero,p_raw,p_adjusted,stars"]
    for g in groups:
        for m in metrics:
            res = results.get((g, m))
            if res is None:
                lines.append(f"{g},{m},,,,n/a,,,,,,")
                continue
            head = f"{g},{m},{res.chi2:.6f},{res.df},{res.p:.6g},{res.method}"
            if not res.posthoc:
                lines.append(head + ",,,,,,")
                continue
            for pr in res.posthoc:
                lines.append(
                    head + f",{pr.labels[0]}-{pr.labels[1]},{pr.w_statistic:.6g},"
                    f"{pr.n_nonzero},{pr.p_raw:.6g},{pr.p:.6g},{pr.stars}"
                )
    return "\n".join(lines) + "\n"


def render_medians_block(
    medians: Mapping[tuple[str, str, str], Optional[float]],
    metric: str,
    groups: Sequence[str] = ("young", "elderly"),
    conditions: Sequence[str] = ("P1", "P3", "P5"),
    digits: int = 3,
) -> str:
    colw = 10
    left = max(len(g) for g in groups) + 4
    lines = ["  " + "group".ljust(left) + "".join(c.rjust(colw) for c in conditions)]
    for g in groups:
        cells = []
        for c in conditions:
            v = medians.get((g, c, metric))
            cells.append("n/a" if v is None else f"{v:.{digits}g}")
        lines.append("  " + g.ljust(left) + "".join(x.rjust(colw) for x in cells))
    return "\n".join(lines)


def medians_csv(
    medians: Mapping[tuple[str, str, str], Optional[float]],
    metrics: Sequence[str],
    groups: Sequence[str] = ("young", "elderly"),
    conditions: Sequence[str] = ("P1", "P3", "P5"),
) -> str:
    lines = ["group,condition,metric,median"]
    for g in groups:
        for c in conditions:
            for m in metrics:
                v = medians.get((g, c, m))
                val = "" if v is None else f"{v:.6g}"
                lines.append(f"{g},{c},{m},{val}")
    return "\n".join(lines) + "\n"


def pivot_csv(
    rows: Sequence[MetricRow],
    metrics: Sequence[str],
    conditions: Sequence[str] = ("P1", "P3", "P5"),
) -> str:
    """Wide per-participant CSV (participant,group,condition,<metrics...>)."""
    values: dict[tuple[str, str, str], float] = {}
    groups: dict[str, str] = {}
    for pid, group, cond, metric, value in rows:
        groups[pid] = group
        if value is not None:
            values[(pid, cond, metric)] = value
    lines = ["participant,group,condition," + ",".join(metrics)]
    for pid in sorted(groups):
        for cond in conditions:
            cells = []
            for m in metrics:
                v = values.get((pid, cond, m))
                cells.append("" if v is None else f"{v:.6g}")
            lines.append(f"{pid},{groups[pid]},{cond}," + ",".join(cells))
    return "\n".join(lines) + "\n"


def group_medians(
    rows: Sequence[MetricRow],
) -> dict[tuple[str, str, str], float]:
    """Median across participants for every (group, condition, metric)."""
    import statistics

    bucket: dict[tuple[str, str, str], list[float]] = {}
    for _pid, group, cond, metric, value in rows:
        if value is not None:
            bucket.setdefault((group, cond, metric), []).append(value)
    return {k: float(statistics.median(v)) for k, v in bucket.items()}
