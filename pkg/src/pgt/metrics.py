"""Per-task dense-prediction metrics and the multi-task delta-m summary.

Functions accept numpy arrays or :class:`~pgt.numerics.Tensor` values, either
a single map or a list of maps (dataset-level accumulation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import DataError, UndefinedMetricError

IGNORE_LABEL = 255
ODS_THRESHOLDS = np.round(np.arange(1, 100) / 100.0, 2)
EDGE_TOLERANCE = 1


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def predicted_labels(logits) -> np.ndarray:
    """Argmax over channels; a single channel is read as a binary logit."""
    a = _arr(logits)
    if a.ndim >= 3 and a.shape[-1] == 1:
        return (a[..., 0] > 0).astype(np.int64)
    return a.argmax(axis=-1)


def confusion_matrix(pred_labels, gt, num_classes: int, ignore_label: int = IGNORE_LABEL):
    gt = np.asarray(gt).astype(np.int64)
    pred_labels = np.asarray(pred_labels).astype(np.int64)
    valid = gt != ignore_label
    if np.any((gt[valid] < 0) | (gt[valid] >= num_classes)):
        raise DataError(f"ground-truth labels outside [0, {num_classes}) and not {ignore_label}")
    idx = gt[valid] * num_classes + pred_labels[valid]
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def miou(pred, gt, num_classes: int, ignore_label: int = IGNORE_LABEL) -> float:
    """Mean IoU over classes present in the ground truth (fraction in [0, 1])."""
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, g in zip(_as_list(pred), _as_list(gt)):
        conf += confusion_matrix(predicted_labels(p), _arr(g), num_classes, ignore_label)
    if conf.sum() == 0:
        raise UndefinedMetricError("mIoU undefined: no valid ground-truth pixels")
    tp = np.diag(conf).astype(np.float64)
    gt_count = conf.sum(axis=1)
    union = gt_count + conf.sum(axis=0) - tp
    present = gt_count > 0
    return float(np.mean(tp[present] / union[present]))


def _squeeze_map(x) -> np.ndarray:
    a = _arr(x)
    return a[..., 0] if a.ndim == 3 and a.shape[-1] == 1 else a


def rmse(pred, gt, mask=None) -> float:
    """Root mean squared error over masked pixels, pooled over the dataset."""
    preds, gts = _as_list(pred), _as_list(gt)
    masks = _as_list(mask) if mask is not None else [None] * len(preds)
    sq, n = 0.0, 0
    for p, g, m in zip(preds, gts, masks):
        p, g = _squeeze_map(p), _squeeze_map(g)
        m = np.ones(g.shape, bool) if m is None else np.asarray(m, bool)
        d = (p - g)[m]
        sq += float(np.sum(d * d))
        n += d.size
    if n == 0:
        raise UndefinedMetricError("RMSE undefined: empty mask")
    return math.sqrt(sq / n)


def _angles(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    pn = np.linalg.norm(p, axis=-1)
    gn = np.linalg.norm(g, axis=-1)
    if np.any(gn == 0):
        raise DataError("zero-length ground-truth normal inside the mask")
    safe = np.where(pn > 0, pn, 1.0)
    cos = np.sum(p * g, axis=-1) / (safe * gn)
    ang = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return np.where(pn > 0, ang, 90.0)


def mean_angle(pred, gt, mask=None) -> float:
    """Mean angular error in degrees; a zero-length prediction scores 90."""
    preds, gts = _as_list(pred), _as_list(gt)
    masks = _as_list(mask) if mask is not None else [None] * len(preds)
    total, n = 0.0, 0
    for p, g, m in zip(preds, gts, masks):
        p, g = _arr(p), _arr(g)
        m = np.ones(g.shape[:-1], bool) if m is None else np.asarray(m, bool)
        a = _angles(p[m], g[m])
        total += float(a.sum())
        n += a.size
    if n == 0:
        raise UndefinedMetricError("mean angle undefined: empty mask")
    return total / n


def _near(binary: np.ndarray, radius: int) -> np.ndarray:
    if radius == 0:
        return binary
    return maximum_filter(binary.astype(np.uint8), size=2 * radius + 1, mode="constant") > 0


def edge_counts(prob, gt, threshold: float, radius: int = EDGE_TOLERANCE):
    """(matched predictions, all predictions, matched gt, all gt) at one threshold."""
    pb = _squeeze_map(prob) >= threshold
    gb = _squeeze_map(gt) > 0.5
    matched_pred = int(np.sum(pb & _near(gb, radius)))
    matched_gt = int(np.sum(gb & _near(pb, radius)))
    return matched_pred, int(pb.sum()), matched_gt, int(gb.sum())


def f_measure(tp_pred, n_pred, tp_gt, n_gt) -> float:
    p = tp_pred / n_pred if n_pred else 0.0
    r = tp_gt / n_gt if n_gt else 0.0
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def ods_f(preds, gts, thresholds=ODS_THRESHOLDS, radius: int = EDGE_TOLERANCE) -> float:
    """Optimal-dataset-scale F-measure: best single threshold over all images."""
    preds, gts = _as_list(preds), _as_list(gts)
    if sum(int(np.sum(_squeeze_map(g) > 0.5)) for g in gts) == 0:
        raise UndefinedMetricError("odsF undefined: no positive edge pixels in the dataset")
    probs = [_squeeze_map(p) for p in preds]
    near_gt = [_near(_squeeze_map(g) > 0.5, radius) for g in gts]
    gbins = [_squeeze_map(g) > 0.5 for g in gts]
    best = 0.0
    for t in thresholds:
        tp_p = n_p = tp_g = n_g = 0
        for p, ng, gb in zip(probs, near_gt, gbins):
            pb = p >= t
            tp_p += int(np.sum(pb & ng))
            n_p += int(pb.sum())
            tp_g += int(np.sum(gb & _near(pb, radius)))
            n_g += int(gb.sum())
        best = max(best, f_measure(tp_p, n_p, tp_g, n_g))
    return best


def delta_m(rows) -> float:
    """Average sign-corrected relative change versus baseline, in percent.

    ``rows`` holds ``(multi_task_value, baseline_value, lower_is_better)``.
    """
    rows = list(rows)
    if not rows:
        raise UndefinedMetricError("delta_m needs at least one task")
    total = 0.0
    for m, b, lower in rows:
        if b == 0:
            raise UndefinedMetricError("delta_m undefined for a zero baseline")
        sign = -1.0 if lower else 1.0
        total += sign * (m - b) / b
    return 100.0 * total / len(rows)


@dataclass
class MetricsReport:
    """Per-task (value, baseline, lower_is_better) triples plus delta-m."""

    values: dict = field(default_factory=dict)
    metric_names: dict = field(default_factory=dict)
    lower_is_better: dict = field(default_factory=dict)
    baselines: dict = field(default_factory=dict)

    def add(self, task: str, value: float, metric: str, lower: bool):
        self.values[task] = float(value)
        self.metric_names[task] = metric
        self.lower_is_better[task] = bool(lower)

    def with_baseline(self, baseline: "MetricsReport") -> "MetricsReport":
        missing = set(self.values) - set(baseline.values)
        if missing:
            raise DataError(f"baseline lacks tasks {sorted(missing)}")
        out = MetricsReport(dict(self.values), dict(self.metric_names), dict(self.lower_is_better))
        out.baselines = {t: baseline.values[t] for t in self.values}
        return out

    @property
    def delta_m(self):
        if not self.baselines:
            return None
        return delta_m(
            (self.values[t], self.baselines[t], self.lower_is_better[t]) for t in self.values
        )

    def as_lines(self) -> list[str]:
        lines = []
        for t in self.values:
            lines.append(f"task.{t}.metric = {self.metric_names[t]}")
            lines.append(f"task.{t}.value = {self.values[t]!r}")
            lines.append(f"task.{t}.lower_is_better = {int(self.lower_is_better[t])}")
            if t in self.baselines:
                lines.append(f"task.{t}.baseline = {self.baselines[t]!r}")
        dm = self.delta_m
        if dm is not None:
            lines.append(f"delta_m = {dm!r}")
            lines.append(f"delta_m_rounded = {dm:.2f}")
        return lines

    def csv_rows(self) -> list[str]:
        rows = ["task,metric,value,baseline,lower_is_better"]
        for t in self.values:
            base = self.baselines.get(t)
            rows.append(",".join([
                t,
                self.metric_names[t],
                repr(self.values[t]),
                "" if base is None else repr(base),
                str(int(self.lower_is_better[t])),
            ]))
        return rows

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.as_lines()) + "\n")

    @classmethod
    def read(cls, path) -> "MetricsReport":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataError(f"cannot read metrics file {path}: {exc}") from exc
        return cls.parse(text)

    @classmethod
    def parse(cls, text: str) -> "MetricsReport":
        kv = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataError(f"malformed metrics line {raw!r}")
            kv[key.strip()] = value.strip()
        rep = cls()
        tasks = []
        for key in kv:
            if key.startswith("task.") and key.endswith(".value"):
                tasks.append(key[len("task."):-len(".value")])
        for t in tasks:
            rep.add(
                t,
                float(kv[f"task.{t}.value"]),
                kv.get(f"task.{t}.metric", "?"),
                kv.get(f"task.{t}.lower_is_better", "0") in ("1", "true", "True"),
            )
            if f"task.{t}.baseline" in kv:
                rep.baselines[t] = float(kv[f"task.{t}.baseline"])
        return rep
