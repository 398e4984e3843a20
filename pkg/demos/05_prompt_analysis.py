"""Inspect what the prompts learned.

Trains the tiny model briefly, then prints the task-by-task cosine
similarity of the prompts at every conditioned block and writes
stage-wise feature heatmaps (PGM images) for each task into
``demo_heatmaps/``.

    python demos/05_prompt_analysis.py [epochs]
"""

import sys
from pathlib import Path

from pgt.analysis import feature_heatmap, prompt_similarity, write_heatmap
from pgt.model import PGT, task_preset, tiny_config
from pgt.synthdata import gen_scene
from pgt.trainer import TrainConfig, fit

TASKS = ("semseg", "edge", "depth")


def main(epochs=8):
    train = [gen_scene(s, 32, 32, TASKS) for s in range(32)]
    val = [gen_scene(s, 32, 32, TASKS) for s in range(1000, 1004)]
    model = PGT.build(tiny_config([task_preset(t) for t in TASKS]), seed=0)
    fit(train, val, model, TrainConfig(epochs=epochs, batch_size=1, lr=3e-3, warmup_epochs=1))

    for block in model.bank.block_ids():
        sim = prompt_similarity(model.bank, block)
        off = [sim.values[i, j] for i in range(3) for j in range(3) if i < j]
        print(f"{block:<10} " + "  ".join(f"{v:+.3f}" for v in off) + "   (semseg-edge, semseg-depth, edge-depth)")

    out = Path("demo_heatmaps")
    out.mkdir(exist_ok=True)
    image = gen_scene(2024, 32, 32, ()).image
    for task in TASKS:
        feats = model.encoder_forward(image, task)
        for k, e in enumerate(feats, 1):
            write_heatmap(out / f"E{k}_{task}", feature_heatmap(e))
    print(f"heatmaps written to {out}/")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 8)
