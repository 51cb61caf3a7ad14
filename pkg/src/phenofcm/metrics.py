"""Evaluation suite for ordinal multi-label phenology predictions.

Everything is keyed to the 16-metaclass ordinal scale: the displacement
between a prediction and an observation is the absolute difference of their
metaclass indices, maxdiff-o is the fraction of predictions displaced at
most o, and the kappa variants weight disagreements by that same ordinal
distance. NDCG@2 scores the stage ranking against the (primary, secondary)
relevance; Krippendorff's ordinal alpha measures interrater reliability of
the ground observations themselves.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

import numpy as np

from .data_model import Metaclass, StageLabel, STAGES
from .errors import ValidationError

_LOG2_3 = math.log2(3.0)


def displacement(pred: Metaclass, truth: Metaclass) -> int:
    """Absolute difference of metaclass indices on the 1..16 scale."""
    return abs(pred.index - truth.index)


def maxdiff_accuracy(preds: Sequence[Metaclass], truths: Sequence[Metaclass],
                     o: int) -> float:
    """Fraction of predictions displaced by at most ``o`` metaclasses."""
    if len(preds) != len(truths):
        raise ValidationError("prediction/truth lengths differ")
    if not preds:
        raise ValidationError("maxdiff accuracy over empty input")
    hits = sum(displacement(p, t) <= o for p, t in zip(preds, truths))
    return hits / len(preds)


def _confusion_counts(preds: Sequence[Hashable], truths: Sequence[Hashable],
                      categories: Sequence[Hashable]) -> np.ndarray:
    index = {cat: i for i, cat in enumerate(categories)}
    mat = np.zeros((len(categories), len(categories)), dtype=np.int64)
    for p, t in zip(preds, truths):
        if p not in index or t not in index:
            raise ValidationError(f"label outside the category scale: "
                                  f"{p if p not in index else t!r}")
        mat[index[t], index[p]] += 1
    return mat


def _categories(preds, truths, categories):
    if categories is None:
        return sorted(set(preds) | set(truths))
    return list(categories)


def cohen_kappa(preds: Sequence[Hashable], truths: Sequence[Hashable],
                categories: Optional[Sequence[Hashable]] = None) -> float:
    """Unweighted Cohen's kappa; degenerate marginals yield 0 with a warning."""
    if len(preds) != len(truths) or not preds:
        raise ValidationError("kappa needs equal-length non-empty sequences")
    cats = _categories(preds, truths, categories)
    mat = _confusion_counts(preds, truths, cats).astype(np.float64)
    total = mat.sum()
    p_observed = np.trace(mat) / total
    p_expected = float((mat.sum(axis=1) @ mat.sum(axis=0)) / total ** 2)
    if abs(1.0 - p_expected) < 1e-12:
        warnings.warn("degenerate marginals: chance agreement is 1, "
                      "kappa defined as 0")
        return 0.0
    return (p_observed - p_expected) / (1.0 - p_expected)


def weighted_kappa(preds: Sequence[Hashable], truths: Sequence[Hashable],
                   scheme: str = "linear",
                   categories: Optional[Sequence[Hashable]] = None) -> float:
    """Weighted kappa with linear or quadratic ordinal disagreement weights.

    Categories must be given in ordinal order; weights depend on positions
    in that order, w_ij = |i-j| or (i-j)^2.
    """
    if scheme not in ("linear", "quadratic"):
        raise ValidationError(f"unknown weighting scheme {scheme!r}")
    if len(preds) != len(truths) or not preds:
        raise ValidationError("kappa needs equal-length non-empty sequences")
    cats = _categories(preds, truths, categories)
    mat = _confusion_counts(preds, truths, cats).astype(np.float64)
    n = len(cats)
    total = mat.sum()
    dist = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :]).astype(np.float64)
    weights = dist if scheme == "linear" else dist ** 2
    expected = np.outer(mat.sum(axis=1), mat.sum(axis=0)) / total
    denom = float((weights * expected).sum())
    if denom < 1e-12:
        warnings.warn("degenerate marginals: expected weighted disagreement "
                      "is 0, kappa defined as 0")
        return 0.0
    return 1.0 - float((weights * mat).sum()) / denom


def confusion_principal(preds: Sequence[StageLabel],
                        truths: Sequence[StageLabel]) -> tuple[np.ndarray, float]:
    """6x6 principal-stage confusion matrix (rows = truth) plus accuracy."""
    if len(preds) != len(truths) or not preds:
        raise ValidationError("confusion needs equal-length non-empty sequences")
    mat = _confusion_counts([StageLabel(p) for p in preds],
                            [StageLabel(t) for t in truths], list(STAGES))
    return mat, float(np.trace(mat) / mat.sum())


@dataclass(frozen=True)
class DisplacementRow:
    metaclass: Metaclass
    support: int
    mean_displacement: float


@dataclass(frozen=True)
class DisplacementReport:
    rows: tuple[DisplacementRow, ...]
    total_support: int
    average: float  # support-weighted over the reported rows


def displacement_report(preds: Sequence[Metaclass], truths: Sequence[Metaclass],
                        min_support: int = 10) -> DisplacementReport:
    """Mean displacement per truth metaclass with at least ``min_support``.

    Equivalent to multiplying the row-normalized 16x16 confusion matrix with
    the |i-j| weight matrix and reading off the truth rows.
    """
    if len(preds) != len(truths):
        raise ValidationError("prediction/truth lengths differ")
    per_truth: dict[int, list[int]] = {}
    for p, t in zip(preds, truths):
        per_truth.setdefault(t.index, []).append(displacement(p, t))
    rows = []
    weighted_sum = 0.0
    total = 0
    from .data_model import metaclass_from_index

    for idx in sorted(per_truth):
        disps = per_truth[idx]
        if len(disps) < min_support:
            continue
        mean = sum(disps) / len(disps)
        rows.append(DisplacementRow(metaclass_from_index(idx), len(disps), mean))
        weighted_sum += sum(disps)
        total += len(disps)
    average = weighted_sum / total if total else 0.0
    return DisplacementReport(tuple(rows), total, average)


def ndcg_at_2(ranked_stages: Sequence[StageLabel], truth: Metaclass) -> float:
    """Normalized discounted cumulative gain over the top-2 ranked stages.

    Relevance is 2 for the true primary stage, 1 for the true secondary,
    0 otherwise; position 2 is discounted by log2(3). The ideal order scores
    2 + 1/log2(3) when a secondary exists, 2 otherwise.
    """
    if len(ranked_stages) != len(STAGES) or set(ranked_stages) != set(STAGES):
        raise ValidationError("ranking must cover all six stages exactly once")

    def rel(stage: StageLabel) -> float:
        if stage == truth.primary:
            return 2.0
        if truth.secondary is not None and stage == truth.secondary:
            return 1.0
        return 0.0

    dcg = rel(ranked_stages[0]) + rel(ranked_stages[1]) / _LOG2_3
    idcg = 2.0 + (1.0 / _LOG2_3 if truth.secondary is not None else 0.0)
    return dcg / idcg


def krippendorff_alpha_ordinal(rater_a: Sequence[Optional[Hashable]],
                               rater_b: Sequence[Optional[Hashable]],
                               categories: Optional[Sequence[Hashable]] = None,
                               ) -> float:
    """Krippendorff's alpha for two raters with the ordinal difference metric.

    ``None`` marks a missing rating; items with fewer than two ratings drop
    out. The ordinal distance between categories c <= k is the square of the
    coincidence-marginal mass between them minus half the endpoints.
    """
    if len(rater_a) != len(rater_b):
        raise ValidationError("rater sequences differ in length")
    units = [(a, b) for a, b in zip(rater_a, rater_b)
             if a is not None and b is not None]
    if len(units) < 2:
        raise ValidationError("alpha needs at least 2 fully rated items")
    cats = _categories([a for a, _ in units], [b for _, b in units], categories)
    pos = {c: i for i, c in enumerate(cats)}
    k = len(cats)

    coincidence = np.zeros((k, k))
    for a, b in units:
        coincidence[pos[a], pos[b]] += 1.0
        coincidence[pos[b], pos[a]] += 1.0
    marginals = coincidence.sum(axis=1)
    n = marginals.sum()

    delta_sq = np.zeros((k, k))
    for c in range(k):
        for j in range(c + 1, k):
            between = marginals[c:j + 1].sum() - (marginals[c] + marginals[j]) / 2.0
            delta_sq[c, j] = delta_sq[j, c] = between ** 2

    observed = float((coincidence * delta_sq).sum())
    expected = float((np.outer(marginals, marginals) * delta_sq).sum()) / (n - 1.0)
    if expected == 0.0:
        return 1.0  # no variation at all: perfect (if vacuous) agreement
    return 1.0 - observed / expected


METACLASS_CATEGORIES = tuple(range(1, 17))


@dataclass(frozen=True)
class EvaluationReport:
    """The full evaluation: Table-style metrics over paired predictions."""

    n_pairs: int
    confusion: np.ndarray
    overall_accuracy: float
    kappa: float
    wkappa_linear: float
    wkappa_quadratic: float
    stage_kappa: float
    maxdiff: dict[int, float]
    displacement: DisplacementReport
    mean_ndcg: Optional[float]
    metaclass_support: dict[int, int]

    def __post_init__(self) -> None:
        values = [self.maxdiff[o] for o in sorted(self.maxdiff)]
        if any(b < a for a, b in zip(values, values[1:])):
            raise ValidationError("maxdiff must be non-decreasing in o")


def evaluate_pairs(preds: Sequence[Metaclass], truths: Sequence[Metaclass],
                   rankings: Optional[Sequence[Sequence[StageLabel]]] = None,
                   min_support: int = 10) -> EvaluationReport:
    """Compute every report metric from paired metaclass predictions.

    Kappa variants run on metaclass indices (the 1..16 ordinal scale); the
    confusion matrix and stage kappa use the principal stages only.
    """
    if len(preds) != len(truths) or not preds:
        raise ValidationError("evaluation needs equal-length non-empty pairs")
    pred_idx = [p.index for p in preds]
    truth_idx = [t.index for t in truths]
    confusion, accuracy = confusion_principal([p.primary for p in preds],
                                              [t.primary for t in truths])
    mean_ndcg = None
    if rankings is not None:
        if len(rankings) != len(preds):
            raise ValidationError("rankings length differs from predictions")
        mean_ndcg = float(np.mean([ndcg_at_2(r, t)
                                   for r, t in zip(rankings, truths)]))
    support: dict[int, int] = {}
    for t in truth_idx:
        support[t] = support.get(t, 0) + 1
    return EvaluationReport(
        n_pairs=len(preds),
        confusion=confusion,
        overall_accuracy=accuracy,
        kappa=cohen_kappa(pred_idx, truth_idx, METACLASS_CATEGORIES),
        wkappa_linear=weighted_kappa(pred_idx, truth_idx, "linear",
                                     METACLASS_CATEGORIES),
        wkappa_quadratic=weighted_kappa(pred_idx, truth_idx, "quadratic",
                                        METACLASS_CATEGORIES),
        stage_kappa=cohen_kappa([p.primary for p in preds],
                                [t.primary for t in truths], list(STAGES)),
        maxdiff={o: maxdiff_accuracy(preds, truths, o) for o in range(4)},
        displacement=displacement_report(preds, truths, min_support),
        mean_ndcg=mean_ndcg,
        metaclass_support=dict(sorted(support.items())),
    )


def format_report(report: EvaluationReport,
                  baseline: Optional[EvaluationReport] = None) -> str:
    """Human-readable report; per-metaclass displacement is row-normalized."""
    lines = []
    lines.append("Phenology prediction evaluation")
    lines.append(f"  paired observations: {report.n_pairs}")
    lines.append("")
    lines.append("Metric                        " +
                 ("    model  baseline" if baseline else "    model"))

    def metric_row(name, value, base_value):
        row = f"  {name:<28}  {value:7.2f}"
        if baseline is not None:
            row += f"  {base_value:8.2f}"
        return row

    pairs = [
        ("maxdiff-0", lambda r: r.maxdiff[0]),
        ("maxdiff-1", lambda r: r.maxdiff[1]),
        ("maxdiff-2", lambda r: r.maxdiff[2]),
        ("maxdiff-3", lambda r: r.maxdiff[3]),
        ("Cohen's kappa", lambda r: r.kappa),
        ("Weighted kappa (linear)", lambda r: r.wkappa_linear),
        ("Weighted kappa (quadratic)", lambda r: r.wkappa_quadratic),
    ]
    for name, getter in pairs:
        lines.append(metric_row(name, getter(report),
                                getter(baseline) if baseline else 0.0))
    if report.mean_ndcg is not None:
        base_ndcg = baseline.mean_ndcg if baseline and baseline.mean_ndcg else 0.0
        lines.append(metric_row("NDCG@2", report.mean_ndcg, base_ndcg))
    lines.append("")
    lines.append(f"Principal stages: overall accuracy "
                 f"{report.overall_accuracy:.4f}, kappa {report.stage_kappa:.4f}")
    lines.append("  confusion matrix (rows = truth, cols = prediction)")
    header = "        " + "".join(f"{s.name:>6}" for s in STAGES)
    lines.append(header)
    for i, stage in enumerate(STAGES):
        cells = "".join(f"{int(v):>6}" for v in report.confusion[i])
        lines.append(f"  {stage.name:>4}  {cells}")
    lines.append("")
    lines.append(f"Displacement by truth metaclass "
                 f"(support >= threshold; row-normalized confusion)")
    lines.append("  index  metaclass   support  mean displacement")
    for row in report.displacement.rows:
        lines.append(f"  {row.metaclass.index:>5}  {str(row.metaclass):<10}  "
                     f"{row.support:>7}  {row.mean_displacement:>17.2f}")
    lines.append(f"  {'':>5}  {'average':<10}  "
                 f"{report.displacement.total_support:>7}  "
                 f"{report.displacement.average:>17.2f}")
    return "\n".join(lines) + "\n"


def report_to_dict(report: EvaluationReport) -> dict:
    """JSON-serializable form of the report."""
    return {
        "n_pairs": report.n_pairs,
        "overall_accuracy": report.overall_accuracy,
        "kappa": report.kappa,
        "wkappa_linear": report.wkappa_linear,
        "wkappa_quadratic": report.wkappa_quadratic,
        "stage_kappa": report.stage_kappa,
        "maxdiff": {str(o): v for o, v in report.maxdiff.items()},
        "mean_ndcg": report.mean_ndcg,
        "confusion": report.confusion.tolist(),
        "confusion_stages": [s.name for s in STAGES],
        "displacement": {
            "normalization": "row-wise",
            "rows": [
                {"index": r.metaclass.index, "metaclass": str(r.metaclass),
                 "support": r.support, "mean_displacement": r.mean_displacement}
                for r in report.displacement.rows
            ],
            "total_support": report.displacement.total_support,
            "average": report.displacement.average,
        },
        "metaclass_support": {str(k): v
                              for k, v in report.metaclass_support.items()},
    }
