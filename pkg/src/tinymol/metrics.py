"""Evaluation metrics and capability scorecards.

Raw metric values are min-max normalized to [0, 100] across the evaluated
models (lower-better metrics are sign-inverted first), then each
capability dimension reports the arithmetic mean of its member metrics.
"""

import math
from dataclasses import dataclass

from .errors import Error

DIMENSIONS = (
    "Knowledge Core",
    "Mol-Text Translation",
    "Molecule Generation",
    "Quantitative Prediction",
    "Synthesis Reasoning",
)

HIGHER, LOWER = "higher-better", "lower-better"


class LengthMismatch(Error):
    pass


class EmptyList(Error):
    pass


class UngroupedMetric(Error):
    pass


@dataclass
class MetricReport:
    name: str
    orientation: str
    value: float
    samples: int = 1

    def __post_init__(self):
        if self.orientation not in (HIGHER, LOWER):
            raise Error(f"orientation must be {HIGHER!r} or {LOWER!r}")
        if self.samples < 1:
            raise Error("sample count must be >= 1")
        if not math.isfinite(self.value):
            raise Error(f"metric {self.name}: value must be finite")


@dataclass
class CapabilityScore:
    dimension: str
    score: float


def minmax_normalize(values, orientation: str = HIGHER) -> list:
    """Scale values to [0, 100]; degenerate input (all equal) maps to 50.

    Lower-better metrics are inverted before scaling, so the best model
    always lands at 100.
    """
    values = [float(v) for v in values]
    if not values:
        raise EmptyList("no values to normalize")
    if orientation == LOWER:
        values = [-v for v in values]
    elif orientation != HIGHER:
        raise Error(f"unknown orientation {orientation!r}")
    lo, hi = min(values), max(values)
    if hi == lo:
        return [50.0] * len(values)
    return [(v - lo) / (hi - lo) * 100.0 for v in values]


def aggregate_capability(scores, grouping):
    """Average normalized metric scores into capability dimensions.

    ``scores`` maps metric name to a normalized value; ``grouping`` maps
    metric name to a dimension. Returns (capability scores, warnings);
    dimensions with no metrics are omitted with a warning record.
    """
    for name in scores:
        if name not in grouping:
            raise UngroupedMetric(f"metric {name!r} is not assigned to a dimension")
    buckets = {dim: [] for dim in DIMENSIONS}
    for name, value in scores.items():
        dim = grouping[name]
        if dim not in buckets:
            raise Error(f"unknown dimension {dim!r} for metric {name!r}")
        buckets[dim].append(value)
    out, warnings = [], []
    for dim in DIMENSIONS:
        if buckets[dim]:
            out.append(CapabilityScore(dim, sum(buckets[dim]) / len(buckets[dim])))
        else:
            warnings.append(f"dimension {dim!r} has no metrics and was omitted")
    return out, warnings


def ndcg(ranking, gains) -> float:
    """Normalized discounted cumulative gain of a predicted item order.

    ``ranking`` lists item indices best-first; ``gains`` holds nonnegative
    relevances per item.
    """
    if len(ranking) == 0:
        raise EmptyList("empty ranking")
    if sorted(ranking) != list(range(len(gains))):
        raise Error("ranking must be a permutation of the item indices")
    if any(g < 0 for g in gains):
        raise Error("gains must be nonnegative")

    def dcg(ordered):
        return sum(g / math.log2(i + 2) for i, g in enumerate(ordered))

    ideal = dcg(sorted(gains, reverse=True))
    if ideal == 0.0:
        return 1.0
    return dcg([gains[i] for i in ranking]) / ideal


def regression_metrics(pred, true):
    """(MAE, RMSE) of paired predictions."""
    if len(pred) != len(true) or not pred:
        raise LengthMismatch(f"{len(pred)} predictions vs {len(true)} targets")
    errors = [float(p) - float(t) for p, t in zip(pred, true)]
    mae = sum(abs(e) for e in errors) / len(errors)
    rmse = math.sqrt(sum(e * e for e in errors) / len(errors))
    return mae, rmse


def classification_metrics(pred, true):
    """(accuracy, F1); F1 assumes binary 0/1 labels and is 0 when P+R=0."""
    if len(pred) != len(true) or not pred:
        raise LengthMismatch(f"{len(pred)} predictions vs {len(true)} targets")
    correct = sum(1 for p, t in zip(pred, true) if p == t)
    accuracy = correct / len(pred)
    tp = sum(1 for p, t in zip(pred, true) if p == 1 and t == 1)
    fp = sum(1 for p, t in zip(pred, true) if p == 1 and t == 0)
    fn = sum(1 for p, t in zip(pred, true) if p == 0 and t == 1)
    if tp == 0:
        f1 = 0.0
    else:
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        f1 = 2 * precision * recall / (precision + recall)
    return accuracy, f1


DEFAULT_GROUPING = {
    "mmlu_accuracy": "Knowledge Core",
    "knowledge_accuracy": "Knowledge Core",
    "caption_similarity": "Mol-Text Translation",
    "name_conversion_similarity": "Mol-Text Translation",
    "translation_validity": "Mol-Text Translation",
    "generation_tanimoto": "Molecule Generation",
    "generation_validity": "Molecule Generation",
    "edit_similarity": "Molecule Generation",
    "yield_mae": "Quantitative Prediction",
    "yield_rmse": "Quantitative Prediction",
    "property_mae": "Quantitative Prediction",
    "yield_ndcg": "Quantitative Prediction",
    "product_tanimoto": "Synthesis Reasoning",
    "product_validity": "Synthesis Reasoning",
    "retro_tanimoto": "Synthesis Reasoning",
    "retro_validity": "Synthesis Reasoning",
    "product_top1": "Synthesis Reasoning",
}


def build_scorecard(model_reports: dict, grouping=None) -> dict:
    """Cross-model normalization plus per-model capability aggregation.

    ``model_reports`` maps model name to a list of MetricReport. Metrics
    are matched by name across models; normalization needs at least two
    models. Returns the radar payload as a plain dict.
    """
    if len(model_reports) < 2:
        raise Error("scorecard normalization needs at least two models")
    grouping = grouping or DEFAULT_GROUPING
    by_metric = {}
    for model, reports in model_reports.items():
        for report in reports:
            by_metric.setdefault(report.name, {})[model] = report

    normalized = {model: {} for model in model_reports}
    for name, per_model in by_metric.items():
        if len(per_model) != len(model_reports):
            missing = set(model_reports) - set(per_model)
            raise Error(f"metric {name!r} missing for models: {sorted(missing)}")
        orientations = {r.orientation for r in per_model.values()}
        if len(orientations) != 1:
            raise Error(f"metric {name!r} has inconsistent orientations")
        models = list(per_model)
        scores = minmax_normalize([per_model[m].value for m in models],
                                  orientations.pop())
        for model, score in zip(models, scores):
            normalized[model][name] = score

    payload = {"dimensions": list(DIMENSIONS), "models": []}
    all_warnings = []
    for model in model_reports:
        capability, warnings = aggregate_capability(normalized[model], grouping)
        payload["models"].append({
            "model": model,
            "scores": {c.dimension: c.score for c in capability},
        })
        all_warnings.extend(f"{model}: {w}" for w in warnings)
    if all_warnings:
        payload["warnings"] = sorted(set(all_warnings))
    return payload


def scorecard_svg(payload: dict, size: int = 420) -> str:
    """Minimal static radar rendering of a scorecard payload."""
    dims = payload["dimensions"]
    center = size / 2.0
    radius = size * 0.36
    n = len(dims)

    def point(i, value):
        angle = -math.pi / 2 + 2 * math.pi * i / n
        r = radius * value / 100.0
        return (center + r * math.cos(angle), center + r * math.sin(angle))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">']
    for frac in (0.25, 0.5, 0.75, 1.0):
        ring = " ".join(f"{x:.1f},{y:.1f}" for x, y in
                        (point(i, 100 * frac) for i in range(n)))
        parts.append(f'<polygon points="{ring}" fill="none" stroke="#ccc"/>')
    for i, dim in enumerate(dims):
        x, y = point(i, 112)
        parts.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="10" '
                     f'text-anchor="middle">{dim}</text>')
    palette = ("#3366cc", "#dc3912", "#ff9900", "#109618", "#990099")
    for k, entry in enumerate(payload["models"]):
        pts = " ".join(
            f"{x:.1f},{y:.1f}" for x, y in
            (point(i, entry["scores"].get(dim, 0.0)) for i, dim in enumerate(dims)))
        color = palette[k % len(palette)]
        parts.append(f'<polygon points="{pts}" fill="{color}22" stroke="{color}"/>')
        parts.append(f'<text x="8" y="{14 + 12 * k}" font-size="10" '
                     f'fill="{color}">{entry["model"]}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
