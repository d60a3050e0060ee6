"""Grounding accuracy, cumulative IoU curves, and ROUGE text metrics.

Predictions are matched to references by maximizing total rotated IoU
(bipartite matching on cost 1 - IoU); every reference then owns one
matched IoU, zero if unmatched, and accuracy at threshold tau is the
fraction of references whose matched IoU exceeds tau. The reference-box
denominator makes multi-object records strictly harder to game than a
per-prediction count. A sample-level mode (all boxes in a record must
clear tau) is available behind a flag and reported alongside.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .assignment import hungarian
from .geometry import OrientedBox, rotated_iou, size_bucket

DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(21))


class EvalError(ValueError):
    pass


@dataclass
class EvalRecord:
    sample_id: int
    pred_boxes: tuple[OrientedBox, ...]
    ref_boxes: tuple[OrientedBox, ...]
    pred_tokens: tuple[str, ...]
    ref_tokens: tuple[str, ...]
    task_tag: str
    matched_ious: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not self.matched_ious:
            self.matched_ious = tuple(match_for_eval(self.pred_boxes, self.ref_boxes))
        if len(self.matched_ious) != len(self.ref_boxes):
            raise EvalError("one matched IoU per reference box required")


def match_for_eval(pred, ref) -> list[float]:
    """Per-reference IoUs under the max-total-IoU one-to-one matching;
    unmatched references score 0, surplus predictions are dropped."""
    if len(ref) == 0:
        return []
    ious = [0.0] * len(ref)
    if len(pred) == 0:
        return ious
    iou = np.array([[rotated_iou(p, r) for r in ref] for p in pred])
    match = hungarian(1.0 - iou)
    for i, j in match.pairs:
        ious[j] = float(iou[i, j])
    return ious


def accuracy(records: list[EvalRecord], tau: float, sample_level: bool = False) -> float:
    """Fraction of reference boxes with matched IoU > tau. In sample-level
    mode a record counts only if every one of its boxes clears tau."""
    if not (0 < tau < 1):
        raise EvalError(f"tau must be in (0,1), got {tau}")
    if not records:
        raise EvalError("no evaluation records")
    if sample_level:
        scored = [r for r in records if r.ref_boxes]
        if not scored:
            raise EvalError("no reference boxes in any record")
        hits = sum(all(m > tau for m in r.matched_ious) for r in scored)
        return hits / len(scored)
    total = sum(len(r.ref_boxes) for r in records)
    if total == 0:
        raise EvalError("no reference boxes in any record")
    hits = sum(sum(m > tau for m in r.matched_ious) for r in records)
    return hits / total


def accuracy_breakdown(records: list[EvalRecord], tau: float) -> dict:
    """Overall accuracy plus size-bucket, task-tag and single/multi splits."""
    out = {"overall": accuracy(records, tau)}
    by_bucket: dict[str, list[int]] = {}
    for r in records:
        for b, m in zip(r.ref_boxes, r.matched_ious):
            by_bucket.setdefault(size_bucket(b), []).append(m > tau)
    out["by_bucket"] = {k: float(np.mean(vs)) for k, vs in sorted(by_bucket.items())}
    by_task: dict[str, list[EvalRecord]] = {}
    for r in records:
        by_task.setdefault(r.task_tag, []).append(r)
    out["by_task"] = {k: accuracy(v, tau) for k, v in sorted(by_task.items())}
    single = [r for r in records if len(r.ref_boxes) == 1]
    multi = [r for r in records if len(r.ref_boxes) > 1]
    out["single"] = accuracy(single, tau) if single else None
    out["multi"] = accuracy(multi, tau) if multi else None
    out["sample_level"] = accuracy(records, tau, sample_level=True)
    return out


def cumulative_curve(
    records: list[EvalRecord], grid=DEFAULT_GRID, per_sample_mean: bool = False
) -> list[tuple[float, float]]:
    """Empirical CDF of matched IoUs: fraction of boxes with IoU <= x.

    Lower curves are better. Per-box points by default; the flag collapses
    each record to its mean IoU first.
    """
    grid = list(grid)
    if any(g2 < g1 for g1, g2 in zip(grid, grid[1:])) or not grid:
        raise EvalError("grid must be a nonempty sorted list")
    if per_sample_mean:
        values = [float(np.mean(r.matched_ious)) for r in records if r.matched_ious]
    else:
        values = [m for r in records for m in r.matched_ious]
    if not values:
        raise EvalError("no matched IoUs to aggregate")
    arr = np.sort(np.asarray(values))
    return [(g, float(np.searchsorted(arr, g, side="right")) / len(arr)) for g in grid]


def rouge1(candidate, reference) -> float:
    """Clipped unigram-overlap F1. Both empty -> 1.0; one empty -> 0.0."""
    if not candidate and not reference:
        return 1.0
    if not candidate or not reference:
        return 0.0
    c = Counter(candidate)
    r = Counter(reference)
    overlap = sum((c & r).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(candidate)
    recall = overlap / len(reference)
    return 2 * precision * recall / (precision + recall)


def _lcs_length(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rougeL(candidate, reference) -> float:
    """Longest-common-subsequence F1, same empty conventions as rouge1."""
    if not candidate and not reference:
        return 1.0
    if not candidate or not reference:
        return 0.0
    lcs = _lcs_length(list(candidate), list(reference))
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


def build_report(records: list[EvalRecord], taus=(0.5, 0.25), grid=DEFAULT_GRID) -> dict:
    report = {
        "n_records": len(records),
        "n_reference_boxes": sum(len(r.ref_boxes) for r in records),
        "acc": {str(t): accuracy_breakdown(records, t) for t in taus},
        "curve": {
            "grid": [g for g, _ in cumulative_curve(records, grid)],
            "fraction": [f for _, f in cumulative_curve(records, grid)],
        },
        "rouge1": float(np.mean([rouge1(r.pred_tokens, r.ref_tokens) for r in records])),
        "rougeL": float(np.mean([rougeL(r.pred_tokens, r.ref_tokens) for r in records])),
    }
    return report


def report_to_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


def curve_to_csv(curve: list[tuple[float, float]]) -> str:
    lines = ["iou,fraction"]
    for g, f in curve:
        lines.append(f"{g:.6g},{f:.10g}")
    return "\n".join(lines) + "\n"


# --- plotting ---------------------------------------------------------------

_SVG_COLORS = ("#2166ac", "#b2182b", "#1b7837", "#e08214", "#762a83", "#35978f", "#c51b7d")


def curves_svg(curves: list[tuple[str, list[tuple[float, float]]]]) -> str:
    """Line plot of cumulative IoU curves as a standalone SVG string.

    Hand-rolled so the bytes are a pure function of the inputs (golden-file
    friendly); no plotting library involved.
    """
    width, height = 480, 340
    ml, mr, mt, mb = 54, 16, 18, 44

    def sx(x: float) -> float:
        return ml + x * (width - ml - mr)

    def sy(y: float) -> float:
        return height - mb - y * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for k in range(6):
        t = k / 5.0
        parts.append(
            f'<line x1="{sx(t):.2f}" y1="{sy(0):.2f}" x2="{sx(t):.2f}" y2="{sy(1):.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<line x1="{sx(0):.2f}" y1="{sy(t):.2f}" x2="{sx(1):.2f}" y2="{sy(t):.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{sx(t):.2f}" y="{height - mb + 16}" font-size="11" '
            f'text-anchor="middle" font-family="sans-serif">{t:.1f}</text>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{sy(t) + 4:.2f}" font-size="11" '
            f'text-anchor="end" font-family="sans-serif">{t:.1f}</text>'
        )
    parts.append(
        f'<rect x="{ml}" y="{mt}" width="{width - ml - mr}" height="{height - mt - mb}" '
        f'fill="none" stroke="#333333" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{(ml + width - mr) / 2:.2f}" y="{height - 8}" font-size="12" '
        f'text-anchor="middle" font-family="sans-serif">IoU quantile</text>'
    )
    parts.append(
        f'<text x="14" y="{(mt + height - mb) / 2:.2f}" font-size="12" text-anchor="middle" '
        f'font-family="sans-serif" transform="rotate(-90 14 {(mt + height - mb) / 2:.2f})">'
        f"fraction of boxes</text>"
    )
    for idx, (label, curve) in enumerate(curves):
        color = _SVG_COLORS[idx % len(_SVG_COLORS)]
        points = " ".join(f"{sx(g):.2f},{sy(f):.2f}" for g, f in curve)
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        ly = mt + 16 + 16 * idx
        parts.append(
            f'<line x1="{ml + 10}" y1="{ly - 4}" x2="{ml + 34}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{ml + 40}" y="{ly}" font-size="11" font-family="sans-serif">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
