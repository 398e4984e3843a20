"""Read-only analyses of a trained model: prompt similarity and feature heatmaps.

Similarity matrices are written as CSV. Heatmaps are written as PGTT tensors
and as plain-text PGM (P2) images that any image viewer can open.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import write_tensor
from .errors import ConfigError, SelectorError, UndefinedMetricError

SIMILARITY_MODES = ("flatten", "token_mean")


@dataclass
class SimilarityMatrix:
    tasks: list
    values: np.ndarray

    def csv_lines(self) -> list[str]:
        lines = ["task," + ",".join(self.tasks)]
        for t, row in zip(self.tasks, self.values):
            lines.append(t + "," + ",".join(repr(float(v)) for v in row))
        return lines

    def write_csv(self, path) -> None:
        Path(path).write_text("\n".join(self.csv_lines()) + "\n")


def _unit_rows(mat: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise UndefinedMetricError(f"cosine similarity undefined: zero vector in {what}")
    return mat / norms


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine of the rows of ``vectors`` with an exact unit diagonal."""
    u = _unit_rows(np.asarray(vectors, dtype=np.float64), "input")
    sim = np.clip(u @ u.T, -1.0, 1.0)
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return sim


def prompt_similarity(bank, block_id: str, mode: str = "flatten") -> SimilarityMatrix:
    """Task-by-task cosine similarity of the prompts at one block.

    ``flatten`` compares whole prompt matrices as vectors. ``token_mean``
    averages the cosines of matching prompt tokens.
    """
    if mode not in SIMILARITY_MODES:
        raise ConfigError(f"similarity mode must be one of {SIMILARITY_MODES}, got {mode!r}")
    if bank.config.prompt_len == 0:
        raise UndefinedMetricError("cosine similarity undefined for empty prompts")
    if block_id not in bank.block_ids():
        raise SelectorError(f"unknown block id {block_id!r}; choose from {bank.block_ids()}")
    tasks = bank.tasks()
    prompts = [np.asarray(bank[t, block_id].data, dtype=np.float64) for t in tasks]
    if mode == "flatten":
        values = cosine_matrix(np.stack([p.ravel() for p in prompts]))
    else:
        units = np.stack([_unit_rows(p, f"prompt of task {t!r}") for t, p in zip(tasks, prompts)])
        values = np.einsum("ipd,jpd->ij", units, units) / units.shape[1]
        values = np.clip(0.5 * (values + values.T), -1.0, 1.0)
        np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(tasks=list(tasks), values=values)


def feature_heatmap(features) -> np.ndarray:
    """Mean absolute activation per pixel, min-max scaled to [0, 1].

    A constant map has no contrast to show and comes back as zeros.
    """
    e = np.asarray(getattr(features, "data", features), dtype=np.float64)
    if e.ndim != 3 or e.shape[-1] < 1:
        raise ConfigError(f"feature map must be h x w x c with c >= 1, got shape {e.shape}")
    energy = np.abs(e).mean(axis=-1)
    lo, hi = energy.min(), energy.max()
    if hi == lo:
        return np.zeros_like(energy)
    return (energy - lo) / (hi - lo)


def pgm_text(heatmap: np.ndarray, maxval: int = 255) -> str:
    """Portable graymap (plain P2) rendering of a [0, 1] map."""
    h, w = heatmap.shape
    levels = np.rint(np.clip(heatmap, 0.0, 1.0) * maxval).astype(int)
    rows = [" ".join(str(v) for v in row) for row in levels]
    return f"P2\n{w} {h}\n{maxval}\n" + "\n".join(rows) + "\n"


def write_heatmap(stem, heatmap: np.ndarray) -> list[Path]:
    """Write ``<stem>.pgtt`` and ``<stem>.pgm``; returns both paths."""
    stem = Path(stem)
    tensor_path = stem.with_name(stem.name + ".pgtt")
    image_path = stem.with_name(stem.name + ".pgm")
    write_tensor(tensor_path, heatmap)
    image_path.write_text(pgm_text(heatmap))
    return [tensor_path, image_path]


def stage_selector(selector: str, num_stages: int = 4) -> int:
    """Parse ``E1``..``E4`` (or a bare stage number) into a zero-based index."""
    s = selector.strip().upper().lstrip("E")
    if not s.isdigit() or not 1 <= int(s) <= num_stages:
        raise SelectorError(f"unknown stage selector {selector!r}; use E1..E{num_stages}")
    return int(s) - 1
