"""Named parameter registry, shared/task partition and growth-law analysis.

Every parameter name starts with ``shared.`` or ``task.<name>.``, so the
split of the model into shared parameters and per-task parameters can be
recovered from names alone (e.g. from a checkpoint file).
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, RegistryError

SHARED = "shared."
TASK = "task."


def _numel(entry) -> int:
    shape = entry.shape if hasattr(entry, "shape") else tuple(entry)
    return int(np.prod(shape, dtype=np.int64))


def owner(name: str) -> str | None:
    """Task that owns ``name``, or None for shared parameters."""
    if name.startswith(SHARED):
        return None
    if name.startswith(TASK):
        rest = name[len(TASK):]
        task, dot, tail = rest.partition(".")
        if task and dot and tail:
            return task
    raise RegistryError(f"parameter name {name!r} lacks a 'shared.' or 'task.<name>.' prefix")


class ParamStore:
    """Ordered ``name -> Tensor`` registry.

    Entries may also be bare shapes (tuples) when only counting is needed;
    the counting functions below accept either.
    """

    def __init__(self, entries: Iterable | None = None):
        self._entries: OrderedDict = OrderedDict()
        for name, value in (entries.items() if isinstance(entries, Mapping) else entries or ()):
            self.add(name, value)

    def add(self, name: str, value):
        owner(name)
        if name in self._entries:
            raise RegistryError(f"duplicate parameter name {name!r}")
        self._entries[name] = value
        return value

    def __getitem__(self, name):
        try:
            return self._entries[name]
        except KeyError:
            raise RegistryError(f"no parameter named {name!r}") from None

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def numel(self) -> int:
        return sum(_numel(v) for v in self._entries.values())

    def shapes(self) -> "OrderedDict[str, tuple]":
        return OrderedDict(
            (k, tuple(v.shape) if hasattr(v, "shape") else tuple(v))
            for k, v in self._entries.items()
        )

    def select(self, task: str | None = None, shared: bool = True) -> list[str]:
        """Names in the shared set (if ``shared``) plus those owned by ``task``."""
        out = []
        for name in self._entries:
            t = owner(name)
            if (t is None and shared) or (task is not None and t == task):
                out.append(name)
        return out


@dataclass
class ParamReport:
    total: int
    shared: int
    per_task: dict = field(default_factory=dict)
    decoder_shared: int = 0
    decoder_fraction: float = 0.0
    prompt_params_per_task: dict = field(default_factory=dict)
    head_params_per_task: dict = field(default_factory=dict)
    positional: int = 0

    def as_lines(self) -> list[str]:
        lines = [
            f"total = {self.total}",
            f"total_m = {self.total / 1e6:.1f}",
            f"shared = {self.shared}",
            f"decoder_shared = {self.decoder_shared}",
            f"decoder_fraction = {self.decoder_fraction:.2f}",
            f"encoder_positional = {self.positional}",
        ]
        for t in self.per_task:
            lines.append(f"task.{t}.params = {self.per_task[t]}")
            lines.append(f"task.{t}.prompt_params = {self.prompt_params_per_task[t]}")
            lines.append(f"task.{t}.head_params = {self.head_params_per_task[t]}")
        lines.append(
            "note = positional embedding counted under shared.encoder.pos "
            "(absolute embedding replaces windowed relative bias)"
        )
        return lines


def partition(store) -> ParamReport:
    """Exact integer parameter counts split by name prefix."""
    items = store.items() if hasattr(store, "items") else store
    shared = decoder = pos = 0
    per_task: dict = {}
    prompts: dict = {}
    heads: dict = {}
    for name, value in items:
        n = _numel(value)
        t = owner(name)
        if t is None:
            shared += n
            if name.startswith("shared.decoder."):
                decoder += n
            if name.startswith("shared.encoder.pos"):
                pos += n
            continue
        per_task[t] = per_task.get(t, 0) + n
        prompts.setdefault(t, 0)
        heads.setdefault(t, 0)
        if name.startswith(f"task.{t}.prompt."):
            prompts[t] += n
        elif name.startswith(f"task.{t}.head."):
            heads[t] += n
    total = shared + sum(per_task.values())
    frac = 100.0 * (decoder + sum(heads.values())) / total if total else 0.0
    return ParamReport(
        total=total,
        shared=shared,
        per_task=per_task,
        decoder_shared=decoder,
        decoder_fraction=frac,
        prompt_params_per_task=prompts,
        head_params_per_task=heads,
        positional=pos,
    )


def predict_total(c: int, theta_t: int, n_tasks: int) -> int:
    """Linear growth law: total = c + (n - 1) * theta_t."""
    if n_tasks < 1:
        raise ConfigError(f"need at least one task, got {n_tasks}")
    return c + (n_tasks - 1) * theta_t


FAMILIES = ("multi_decoder", "task_conditional_legacy", "pgt")


def growth_curves(
    family: str,
    base_config,
    n_range,
    m_pair: int | None = None,
    m_adapt: int | None = None,
) -> list[tuple[int, int]]:
    """Total parameter count versus number of tasks for an architecture family.

    The PGT curve is measured from the real parameter layout of
    ``base_config`` with its first task replicated ``n`` times. The other two
    families are stylised models sharing the same encoder:

    * ``multi_decoder``: one full decoder + head per task, plus an interaction
      module of ``m_pair`` parameters per ordered task pair;
    * ``task_conditional_legacy``: the prompt-free stem plus an adapter of
      ``m_adapt`` parameters per task.
    """
    from .model import param_layout, replicate_tasks

    ns = list(n_range)
    if not ns:
        raise ConfigError("growth_curves needs a non-empty task-count range")
    if family not in FAMILIES:
        raise ConfigError(f"unknown architecture family {family!r}; expected one of {FAMILIES}")

    one = partition(param_layout(replicate_tasks(base_config, 1)))
    task_name = next(iter(one.per_task))
    head = one.head_params_per_task[task_name]
    encoder = one.shared - one.decoder_shared
    if m_pair is None:
        m_pair = one.decoder_shared // 4
    if m_adapt is None:
        m_adapt = encoder // 10

    out = []
    for n in ns:
        if family == "pgt":
            total = partition(param_layout(replicate_tasks(base_config, n))).total
        elif family == "multi_decoder":
            total = encoder + n * (one.decoder_shared + head) + n * (n - 1) * m_pair
        else:
            total = encoder + one.decoder_shared + n * (m_adapt + head)
        out.append((n, total))
    return out
