"""Sample-saving metric, cost and time models, region partition, reports."""

from __future__ import annotations

import csv
import datetime
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class MetricsError(ValueError):
    pass


def pav_nondecreasing(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators fit: the closest nondecreasing sequence."""
    vals = np.asarray(y, dtype=np.float64)
    blocks: list[list[float]] = []  # [weight, mean, count]
    for v in vals:
        blocks.append([1.0, float(v), 1])
        while len(blocks) > 1 and blocks[-2][1] > blocks[-1][1]:
            w2, m2, c2 = blocks.pop()
            w1, m1, c1 = blocks.pop()
            w = w1 + w2
            blocks.append([w, (w1 * m1 + w2 * m2) / w, c1 + c2])
    out = np.empty(len(vals))
    pos = 0
    for _, mean, count in blocks:
        out[pos : pos + count] = mean
        pos += count
    return out


@dataclass
class BaselineCurve:
    """Random-baseline (label count, accuracy) points, isotonic-regressed."""

    labels: np.ndarray
    accuracy: np.ndarray

    @classmethod
    def from_points(cls, points: Sequence[tuple[float, float]]) -> "BaselineCurve":
        if len(points) < 2:
            raise MetricsError(f"baseline curve needs >= 2 points, got {len(points)}")
        labels = np.asarray([p[0] for p in points], dtype=np.float64)
        acc = np.asarray([p[1] for p in points], dtype=np.float64)
        if not np.all(np.diff(labels) > 0):
            raise MetricsError("baseline label counts must be strictly increasing")
        return cls(labels=labels, accuracy=pav_nondecreasing(acc))

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.labels.tolist(), self.accuracy.tolist()))


@dataclass
class SavingResult:
    n2: float
    saved: float
    ratio: float
    extrapolated: bool = False


def saving(curve: BaselineCurve, n1: float, accuracy: float) -> SavingResult:
    """Invert the baseline curve at the achieved accuracy.

    N2 is the random-baseline label count reaching the same accuracy, found
    by piecewise-linear interpolation; knot accuracies return their exact
    label count (leftmost knot on ties). Outside the curve the terminal
    segment extends linearly, N2 clamps at 1, and the result is flagged.
    """
    if len(curve.labels) < 2:
        raise MetricsError("baseline curve needs >= 2 points")
    ns, accs = curve.labels, curve.accuracy
    n2: float
    extrapolated = False
    knot_hits = np.flatnonzero(accs == accuracy)
    if knot_hits.size:
        n2 = float(ns[knot_hits[0]])
    elif accuracy < accs[0] or accuracy > accs[-1]:
        extrapolated = True
        j = 0 if accuracy < accs[0] else len(ns) - 2
        slope = (accs[j + 1] - accs[j]) / (ns[j + 1] - ns[j])
        if slope > 0:
            n2 = float(ns[j] + (accuracy - accs[j]) / slope)
        else:
            # a flat terminal segment never attains the target accuracy
            n2 = -np.inf if accuracy < accs[0] else np.inf
        n2 = max(n2, 1.0)
    else:
        j = int(np.searchsorted(accs, accuracy, side="right") - 1)
        j = min(max(j, 0), len(ns) - 2)
        t = (accuracy - accs[j]) / (accs[j + 1] - accs[j])
        n2 = float(ns[j] + t * (ns[j + 1] - ns[j]))
        n2 = max(n2, 1.0)
    saved = n2 - n1
    # a flat curve extrapolates to an unbounded N2; the ratio limit is 1
    ratio = 1.0 if np.isinf(n2) else saved / n2
    return SavingResult(n2=n2, saved=saved, ratio=ratio, extrapolated=extrapolated)


def avg_saving_ratio(ratios: Sequence[float]) -> float:
    if len(ratios) == 0:
        raise MetricsError("cannot average an empty ratio list")
    return float(np.mean(ratios))


@dataclass
class CostModel:
    """price_per_label includes any review multiplier; training_cost is
    instance hourly rate times measured hours."""

    price_per_label: float = 0.04
    training_cost: float = 0.0

    def validate(self) -> None:
        if self.price_per_label < 0 or self.training_cost < 0:
            raise MetricsError("cost components must be >= 0")


def overall_cost(n1: float, model: CostModel) -> float:
    model.validate()
    return n1 * model.price_per_label + model.training_cost


@dataclass
class TimeModel:
    t_pre: float = 0.0
    t_tr_full: float = 0.0
    t_f_full: float = 0.0
    t_tr_proxy: float = 0.0
    t_f_proxy: float = 0.0
    n_al: int = 10

    def validate(self) -> None:
        if min(self.t_pre, self.t_tr_full, self.t_f_full, self.t_tr_proxy, self.t_f_proxy) < 0:
            raise MetricsError("time components must be >= 0")
        if self.n_al < 1:
            raise MetricsError("n_al must be >= 1")


def al_time(mode: str, tm: TimeModel) -> float:
    """Total selection-pipeline hours for one run of the given mode."""
    tm.validate()
    if mode == "standard":
        return tm.n_al * (tm.t_tr_full + tm.t_f_full)
    if mode == "svpp":
        return tm.n_al * (tm.t_tr_proxy + tm.t_f_proxy) + tm.t_pre
    if mode == "asvp":
        return tm.n_al * (tm.t_tr_proxy + tm.t_f_proxy) + 2.0 * tm.t_pre + tm.t_tr_full
    raise MetricsError(f"unknown mode {mode!r}")


class RegionLabel(enum.Enum):
    O = "O"
    FT_ONLY_B2 = "ft_only_b2"
    FT_ONLY_AB1 = "ft_only_ab1"
    PROXY_ONLY_C = "proxy_only_c"
    PROXY_ONLY_D = "proxy_only_d"
    NEITHER = "neither"


def region_partition(unlabeled: Sequence[int],
                     proxy_probs: np.ndarray, proxy_preds: np.ndarray,
                     full_probs: np.ndarray, full_preds: np.ndarray,
                     proxy_sel: Sequence[int], full_sel: Sequence[int],
                     truth: np.ndarray, tau: float = 0.9) -> dict[int, RegionLabel]:
    """Assign every unlabeled sample to exactly one selection-diagram region.

    Probability/prediction arrays are indexed over the whole pool universe.
    """
    u_set = set(int(i) for i in unlabeled)
    p_set = set(int(i) for i in proxy_sel)
    f_set = set(int(i) for i in full_sel)
    if not p_set <= u_set:
        raise MetricsError("proxy selection contains labeled indices")
    if not f_set <= u_set:
        raise MetricsError("full-model selection contains labeled indices")
    out: dict[int, RegionLabel] = {}
    proxy_conf = proxy_probs.max(axis=1)
    full_conf = full_probs.max(axis=1)
    for i in unlabeled:
        i = int(i)
        in_p = i in p_set
        in_f = i in f_set
        if in_p and in_f:
            out[i] = RegionLabel.O
        elif in_f:
            if proxy_preds[i] == truth[i] and proxy_conf[i] >= tau:
                out[i] = RegionLabel.FT_ONLY_B2
            else:
                out[i] = RegionLabel.FT_ONLY_AB1
        elif in_p:
            if full_preds[i] == truth[i] and full_conf[i] >= tau:
                out[i] = RegionLabel.PROXY_ONLY_C
            else:
                out[i] = RegionLabel.PROXY_ONLY_D
        else:
            out[i] = RegionLabel.NEITHER
    return out


def redundant_ratio(batch_indices: Sequence[int], regions: Mapping[int, RegionLabel]) -> float:
    """Share of the batch sitting in the redundant region C."""
    if len(batch_indices) == 0:
        raise MetricsError("redundant ratio of an empty batch is undefined")
    hits = sum(1 for i in batch_indices if regions[int(i)] is RegionLabel.PROXY_ONLY_C)
    return hits / len(batch_indices)


CSV_COLUMNS = ["iteration", "labeled", "accuracy_final", "accuracy_proxy", "n2",
               "saved", "saving_ratio", "redundant_ratio", "feature_version",
               "training_method", "update_fired", "timestamp"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(ledger, curve: BaselineCurve, cost: CostModel, time_model: TimeModel,
                out_dir: str | Path, timestamp: str | None = None) -> tuple[Path, Path]:
    """Write per-iteration CSV rows and the JSON summary; returns the paths.

    All nondeterminism is confined to the timestamp column (one emission
    time repeated per row) so golden-file diffs stay clean.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = timestamp or datetime.datetime.now(datetime.timezone.utc).isoformat()

    ratios = []
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in ledger.records:
            sv = saving(curve, rec.labeled_count, rec.accuracy_final)
            ratios.append(sv.ratio)
            writer.writerow([
                _fmt(rec.iteration),
                _fmt(rec.labeled_count),
                _fmt(rec.accuracy_final),
                _fmt(rec.accuracy_proxy),
                _fmt(sv.n2),
                _fmt(sv.saved),
                _fmt(sv.ratio),
                _fmt(rec.redundant_ratio),
                _fmt(rec.feature_version),
                _fmt(rec.training_method),
                _fmt(rec.update_fired),
                stamp,
            ])

    summary = {
        "avg_saving_ratio": avg_saving_ratio(ratios),
        "overall_cost": overall_cost(ledger.records[-1].labeled_count, cost),
        "al_time_hours": al_time(ledger.mode, time_model),
        "mode": ledger.mode,
        "strategy": ledger.strategy,
        "seeds": ledger.seeds,
    }
    json_path = out_dir / "summary.json"
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    return csv_path, json_path
