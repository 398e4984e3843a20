"""Task-conditional training: per-task losses, AdamW, warmup + cosine schedule.

Each optimisation step draws one task, forwards only that task and updates
only the shared parameters and the parameters owned by that task.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, DataError, NumericAbort
from .metrics import IGNORE_LABEL, MetricsReport, miou, mean_angle, ods_f, rmse
from .model import PGT, TaskSpec, save_checkpoint
from .numerics import Tape, Tensor
from .synthdata import SplitMix64, augment

EDGE_POS_WEIGHT = 0.95
EDGE_NEG_WEIGHT = 0.05
SAMPLING = ("round_robin", "uniform_random")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    warmup_epochs: int = 5
    seed: int = 0
    task_sampling: str = "round_robin"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    augment: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.epochs > 0 and not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"warmup_epochs ({self.warmup_epochs}) must be below epochs ({self.epochs})"
            )
        if self.task_sampling not in SAMPLING:
            raise ConfigError(f"task_sampling must be one of {SAMPLING}")


# losses ----------------------------------------------------------------------

def _expect(pred: Tensor, shape, task: TaskSpec):
    if tuple(pred.shape) != tuple(shape):
        raise ContractError(f"task {task.name}: prediction shape {pred.shape} != expected {tuple(shape)}")


def task_loss(pred, gt, task: TaskSpec) -> Tensor:
    """Scalar loss for one task; ``gt`` is a numpy label array."""
    pred = nx.as_tensor(pred)
    gt = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    kind = task.loss_kind
    if kind == "cross_entropy":
        _expect(pred, gt.shape + (task.out_channels,), task)
        labels = gt.astype(np.int64)
        valid = labels != IGNORE_LABEL
        onehot = np.zeros(pred.shape)
        onehot[valid, labels[valid]] = 1.0
        n = max(int(valid.sum()), 1)
        return nx.tsum(nx.log_softmax(pred, axis=-1) * onehot) * (-1.0 / n)
    if kind == "binary_cross_entropy":
        if gt.shape == pred.shape[:-1]:
            gt = gt[..., None]
        _expect(pred, gt.shape, task)
        weight = np.where(gt > 0.5, EDGE_POS_WEIGHT, EDGE_NEG_WEIGHT)
        per_pixel = nx.softplus(pred) - pred * gt
        return nx.mean(per_pixel * weight)
    if gt.shape == pred.shape[:-1] and pred.shape[-1] == 1:
        gt = gt[..., None]
    _expect(pred, gt.shape, task)
    diff = pred - gt
    if kind == "l1":
        return nx.mean(nx.absolute(diff))
    if kind == "l2":
        return nx.mean(diff * diff)
    raise ConfigError(f"unknown loss kind {kind!r}")


# optimiser -------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)


class AdamW:
    """Adaptive moments with decoupled weight decay.

    Step counters are kept per parameter: task parameters only advance on
    steps of their own task, so their bias correction stays exact.
    """

    def __init__(self, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = OptimizerState()

    def step(self, store, names, lr: float) -> None:
        b1, b2 = self.betas
        st = self.state
        for name in names:
            p = store[name]
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            if name not in st.m:
                st.m[name] = np.zeros(p.shape)
                st.v[name] = np.zeros(p.shape)
                st.steps[name] = 0
            st.steps[name] += 1
            t = st.steps[name]
            m = st.m[name] = b1 * st.m[name] + (1 - b1) * g
            v = st.v[name] = b2 * st.v[name] + (1 - b2) * g * g
            if lr == 0:
                continue
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``cfg.lr``, then half-cosine decay to zero."""
    if total_steps <= 0:
        return 0.0
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    warm = cfg.warmup_epochs / cfg.epochs * total_steps if cfg.epochs else 0.0
    if step < warm:
        return cfg.lr * step / warm
    if total_steps == warm:
        return cfg.lr
    progress = (step - warm) / (total_steps - warm)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def train_step(batch, task: str, model: PGT, opt: AdamW, lr: float) -> float:
    """One update on ``batch = (images, {task: labels})`` for a single task."""
    images, labels = batch
    if task not in labels:
        raise DataError(f"batch carries no labels for task {task!r}")
    spec = model.config.task(task)
    store = model.params
    names = store.select(task)
    for name in names:
        store[name].grad = None
    with Tape() as tape:
        loss = task_loss(model.forward(images, task), labels[task], spec)
    tape.backward(loss)
    value = loss.item()
    if not math.isfinite(value):
        return value
    opt.step(store, names, lr)
    return value


# evaluation --------------------------------------------------------------------

def predict(model: PGT, scenes, task: str, batch_size: int = 16) -> list[np.ndarray]:
    out = []
    for i in range(0, len(scenes), batch_size):
        imgs = np.stack([s.image for s in scenes[i:i + batch_size]])
        out.extend(model.forward(imgs, task).data)
    return out


def evaluate(model: PGT, scenes, batch_size: int = 16) -> MetricsReport:
    """Each task's metric over ``scenes`` via separate forward passes."""
    report = MetricsReport()
    for spec in model.config.tasks:
        preds = predict(model, scenes, spec.name, batch_size)
        gts = [s.labels[spec.name] for s in scenes]
        kind = spec.metric_kind
        if kind == "miou":
            k = 2 if spec.out_channels == 1 else spec.out_channels
            value = miou(preds, gts, k)
        elif kind == "odsF":
            value = ods_f([nx._sigmoid(p) for p in preds], gts)
        elif kind == "rmse":
            value = rmse(preds, gts)
        else:
            value = mean_angle(preds, gts)
        report.add(spec.name, value, kind, spec.lower_is_better)
    return report


# fit ----------------------------------------------------------------------------

@dataclass
class FitResult:
    log: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    final_metrics: MetricsReport | None = None
    steps: int = 0
    task_trace: list = field(default_factory=list)


LOG_FIELDS = ("epoch", "task", "loss", "metric", "value", "lr")


def _permutation(n: int, rng: SplitMix64) -> list[int]:
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.randint(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def task_schedule(tasks, n_steps: int, mode: str, seed: int) -> list[str]:
    names = list(tasks)
    if mode == "round_robin":
        return [names[i % len(names)] for i in range(n_steps)]
    rng = SplitMix64(seed ^ 0x5EED)
    return [names[rng.randint(len(names))] for _ in range(n_steps)]


def smoothed(values, window: int = 5) -> list[float]:
    """Means over consecutive non-overlapping windows (last partial one dropped)."""
    return [
        float(np.mean(values[i:i + window]))
        for i in range(0, len(values) - window + 1, window)
    ]


def fit(train, val, model: PGT, cfg: TrainConfig, checkpoint_path=None, log_path=None,
        progress=None) -> FitResult:
    """Train ``model`` in place; optionally write the checkpoint and CSV log."""
    if not train or not val:
        raise DataError("fit needs non-empty training and validation splits")
    tasks = [t.name for t in model.config.tasks]
    for t in tasks:
        if t not in train[0].labels:
            raise DataError(f"training scenes carry no labels for task {t!r}")
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    schedule = task_schedule(tasks, total, cfg.task_sampling, cfg.seed)
    opt = AdamW(cfg.betas, cfg.eps, cfg.weight_decay)
    result = FitResult(task_trace=schedule)
    order_rng = SplitMix64(cfg.seed)
    step = 0
    for epoch in range(cfg.epochs):
        order = _permutation(len(train), order_rng)
        per_task: dict = {t: [] for t in tasks}
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            scenes = [train[i] for i in idx]
            if cfg.augment:
                scenes = [
                    augment(s, (cfg.seed * 1_000_003 + step * 131 + k) & 0xFFFFFFFF)
                    for k, s in enumerate(scenes)
                ]
            task = schedule[step]
            images = np.stack([s.image for s in scenes])
            labels = {task: np.stack([s.labels[task] for s in scenes])}
            lr = lr_at(step + 1, total, cfg)
            loss = train_step((images, labels), task, model, opt, lr)
            if not math.isfinite(loss):
                raise NumericAbort(f"non-finite loss {loss} at step {step} (epoch {epoch}, task {task})")
            per_task[task].append(loss)
            step += 1
        report = evaluate(model, val)
        lr_end = lr_at(step, total, cfg)
        epoch_total = 0.0
        for t in tasks:
            mean_loss = float(np.mean(per_task[t])) if per_task[t] else float("nan")
            if per_task[t]:
                epoch_total += mean_loss
            result.log.append({
                "epoch": epoch,
                "task": t,
                "loss": mean_loss,
                "metric": report.metric_names[t],
                "value": report.values[t],
                "lr": lr_end,
            })
        result.epoch_losses.append(epoch_total)
        result.final_metrics = report
        if progress:
            progress(epoch, epoch_total, report)
    result.steps = step
    if result.final_metrics is None:
        result.final_metrics = evaluate(model, val)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path, {"train": {"epochs": cfg.epochs, "seed": cfg.seed}})
    if log_path is not None:
        write_log(log_path, result.log)
    return result


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
