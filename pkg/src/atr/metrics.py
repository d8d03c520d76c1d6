"""Retrieval-quality metrics, token accounting, and logit-separation stats.

Per-query scores are fractions in [0, 1]; the macro report averages them over
queries and scales by 100, matching percentage-style reporting. Token
accounting counts the query, the marker tokens, and the retrieved tables'
flattened schemas — i.e. the assembled scorer input for the retrieved set.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import TableRecord, token_count
from .errors import InputError
from .scorer import TABLE_MARKER, THRESHOLD_MARKER


@dataclass(frozen=True)
class QueryMetrics:
    """Set-overlap scores of one query's retrieved list against its gold set."""

    precision: float
    recall: float
    complete_recall: int
    f1: float


@dataclass(frozen=True)
class QueryReport:
    query_id: str
    precision: float
    recall: float
    complete_recall: int
    f1: float
    k_retrieved: int
    input_tokens: int


@dataclass(frozen=True)
class MetricsReport:
    per_query: tuple[QueryReport, ...]
    macro_precision: float
    macro_recall: float
    macro_complete_recall: float
    macro_f1: float
    mean_input_tokens: float
    mean_pass_count: float | None = None


@dataclass(frozen=True)
class AnovaReport:
    f_statistic: float
    eta_squared: float
    group_means: dict[str, float]
    group_sizes: dict[str, int]


def score_query(retrieved: Sequence[str], gold: Iterable[str]) -> QueryMetrics:
    """Precision/recall/complete-recall/F1 of a retrieved list vs gold ids.

    An empty retrieved list scores zero precision rather than erroring —
    adaptive retrieval can legitimately return nothing. Empty gold is an
    error: labels are required.
    """
    gold_set = set(gold)
    if not gold_set:
        raise InputError("gold set is empty: labels are required for scoring")
    hits = len(set(retrieved) & gold_set)
    precision = hits / len(retrieved) if retrieved else 0.0
    recall = hits / len(gold_set)
    complete = 1 if gold_set <= set(retrieved) else 0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return QueryMetrics(precision=precision, recall=recall, complete_recall=complete, f1=f1)


def query_input_tokens(query_text: str, retrieved: Sequence[TableRecord]) -> int:
    """Tokens of the assembled input for the retrieved set (query + markers)."""
    parts = [THRESHOLD_MARKER, query_text]
    for record in retrieved:
        parts.append(TABLE_MARKER)
        parts.append(record.flattened_text)
    return token_count(" ".join(parts))


def aggregate(
    per_query: Sequence[QueryReport], pass_counts: Sequence[int] | None = None
) -> MetricsReport:
    """Macro-average the per-query scores (x100) plus token accounting."""
    if not per_query:
        raise InputError("cannot aggregate an empty per-query list")
    n = len(per_query)
    return MetricsReport(
        per_query=tuple(per_query),
        macro_precision=100.0 * math.fsum(q.precision for q in per_query) / n,
        macro_recall=100.0 * math.fsum(q.recall for q in per_query) / n,
        macro_complete_recall=100.0 * math.fsum(q.complete_recall for q in per_query) / n,
        macro_f1=100.0 * math.fsum(q.f1 for q in per_query) / n,
        mean_input_tokens=math.fsum(q.input_tokens for q in per_query) / n,
        mean_pass_count=(
            math.fsum(pass_counts) / len(pass_counts) if pass_counts else None
        ),
    )


def anova_logits(groups: Mapping[str, Sequence[float]]) -> AnovaReport:
    """One-way ANOVA over logit groups, reporting F and eta-squared.

    Sums of squares use the algebraic shortcut (sum of squares minus the
    mean correction); degenerate inputs follow fixed conventions: all values
    equal -> F = 0, eta^2 = 0; zero within-group variance with distinct
    means -> F = inf, eta^2 = 1.
    """
    named = {name: [float(v) for v in values] for name, values in groups.items() if len(values) > 0}
    if len(named) < 2:
        raise InputError("anova needs at least 2 non-empty groups")
    total_n = sum(len(v) for v in named.values())
    if total_n < 3:
        raise InputError("anova needs at least 3 observations in total")
    all_values = [v for values in named.values() for v in values]
    grand_mean = math.fsum(all_values) / total_n
    ss_total = max(0.0, math.fsum(v * v for v in all_values) - total_n * grand_mean * grand_mean)
    group_means = {name: math.fsum(vals) / len(vals) for name, vals in named.items()}
    ss_between = max(
        0.0,
        math.fsum(len(vals) * group_means[name] ** 2 for name, vals in named.items())
        - total_n * grand_mean * grand_mean,
    )
    ss_within = max(0.0, ss_total - ss_between)
    k = len(named)
    df_between = k - 1
    df_within = total_n - k
    if ss_total == 0.0:
        f_stat, eta_sq = 0.0, 0.0
    elif ss_within == 0.0 or df_within == 0:
        f_stat, eta_sq = math.inf, ss_between / ss_total
    else:
        f_stat = (ss_between / df_between) / (ss_within / df_within)
        eta_sq = ss_between / ss_total
    return AnovaReport(
        f_statistic=f_stat,
        eta_squared=eta_sq,
        group_means=group_means,
        group_sizes={name: len(vals) for name, vals in named.items()},
    )


def write_metrics_csv(path: Path | str, report: MetricsReport) -> None:
    """Write the macro row (percentages, 4 decimals) plus per-query rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["query_id", "precision", "recall", "complete_recall", "f1", "k_retrieved", "input_tokens"]
        )
        writer.writerow(
            [
                "MACRO",
                f"{report.macro_precision:.4f}",
                f"{report.macro_recall:.4f}",
                f"{report.macro_complete_recall:.4f}",
                f"{report.macro_f1:.4f}",
                "",
                f"{report.mean_input_tokens:.4f}",
            ]
        )
        for q in report.per_query:
            writer.writerow(
                [
                    q.query_id,
                    f"{q.precision:.6f}",
                    f"{q.recall:.6f}",
                    str(q.complete_recall),
                    f"{q.f1:.6f}",
                    str(q.k_retrieved),
                    str(q.input_tokens),
                ]
            )


def report_to_dict(report: MetricsReport, anova: AnovaReport | None = None) -> dict:
    out: dict = {
        "macro": {
            "precision": report.macro_precision,
            "recall": report.macro_recall,
            "complete_recall": report.macro_complete_recall,
            "f1": report.macro_f1,
        },
        "mean_input_tokens": report.mean_input_tokens,
        "mean_pass_count": report.mean_pass_count,
        "per_query": [
            {
                "query_id": q.query_id,
                "precision": q.precision,
                "recall": q.recall,
                "complete_recall": q.complete_recall,
                "f1": q.f1,
                "k_retrieved": q.k_retrieved,
                "input_tokens": q.input_tokens,
            }
            for q in report.per_query
        ],
    }
    if anova is not None:
        out["anova"] = {
            "f_statistic": anova.f_statistic,
            "eta_squared": anova.eta_squared,
            "group_means": anova.group_means,
            "group_sizes": anova.group_sizes,
        }
    return out


def write_metrics_json(path: Path | str, report: MetricsReport, anova: AnovaReport | None = None) -> None:
    payload = report_to_dict(report, anova)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def write_plot_tsv(path: Path | str, report: MetricsReport) -> None:
    """Plot-ready TSV of (mean_tokens, value, metric) points."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mean_input_tokens\tvalue\tmetric\n")
        for name, value in (
            ("precision", report.macro_precision),
            ("recall", report.macro_recall),
            ("complete_recall", report.macro_complete_recall),
            ("f1", report.macro_f1),
        ):
            fh.write(f"{report.mean_input_tokens:.4f}\t{value:.4f}\t{name}\n")
