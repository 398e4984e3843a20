"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance
criteria" section at the end of the report (or use ``-s`` to see the lines
inline).
"""

import csv
import hashlib
import time
from pathlib import Path

import numpy as np

import oracles
from pgt import numerics as nx
from pgt.accounting import partition, predict_total
from pgt.cli import DEFAULTS, cmd_eval, run
from pgt.metrics import ODS_THRESHOLDS, delta_m, mean_angle, miou, ods_f, rmse
from pgt.model import PGT, param_layout, replicate_tasks, swin_t_config, task_preset, tiny_config
from pgt.numerics import Tape
from pgt.synthdata import gen_scene
from pgt.trainer import AdamW, TrainConfig, evaluate, fit, smoothed, task_loss, train_step

FIXTURES = Path(__file__).parent / "fixtures"
TASKS3 = ("semseg", "edge", "depth")
quiet = lambda *_: None


def tiny_model(seed=0, **kw):
    return PGT.build(tiny_config([task_preset(t) for t in TASKS3], **kw), seed=seed)


def test_criterion_1_delta_m_tables(tmp_path, verdict):
    start = time.perf_counter()
    checked, wrong = 0, []
    for group in sorted(p for p in FIXTURES.iterdir() if p.is_dir()):
        with open(group / "expected.csv") as fh:
            for row in csv.DictReader(fh):
                cfg = dict(DEFAULTS, out=str(tmp_path / "e"), baseline=str(group / "baseline.txt"))
                rep = cmd_eval(cfg, metrics_file=str(group / f"{row['row']}.txt"), log=quiet)
                checked += 1
                if round(rep.delta_m, 2) != float(row["delta_m"]):
                    wrong.append(f"{group.name}/{row['row']}={rep.delta_m:.4f}")
    elapsed = time.perf_counter() - start
    ok = checked > 0 and not wrong and elapsed < 1.0
    verdict(1, "delta-m rows reproduce to two decimals, < 1 s",
            ok, f"{checked} rows, {len(wrong)} mismatches {wrong}, {elapsed * 1e3:.0f} ms")
    assert ok


def test_criterion_2_prompt_parameter_count(verdict):
    report = partition(param_layout(swin_t_config()))
    counts = report.prompt_params_per_task
    ok = len(counts) == 5 and all(v == 48_000 for v in counts.values())
    verdict(2, "prompt params per task == 48,000", ok, f"{counts}")
    assert ok


def test_criterion_3_decoder_and_head_size(verdict):
    start = time.perf_counter()
    report = partition(param_layout(swin_t_config()))
    dec = report.decoder_shared
    head = report.head_params_per_task["semseg"]
    elapsed = time.perf_counter() - start
    dec_rel = abs(dec - 640_000) / 640_000
    head_rel = abs(head - 23_400) / 23_400
    ok = dec_rel <= 0.05 and head_rel <= 0.15 and elapsed < 1.0
    verdict(3, "decoder within 5% of 0.64M, head within 15% of 23.4K", ok,
            f"decoder {dec} ({dec_rel:.1%}), semseg head {head} ({head_rel:.1%}), {elapsed:.2f}s")
    assert ok


def test_criterion_4_growth_law(verdict):
    base = swin_t_config()
    totals = {n: partition(param_layout(replicate_tasks(base, n))).total for n in range(1, 7)}
    one = partition(param_layout(replicate_tasks(base, 1)))
    theta_t = next(iter(one.per_task.values()))
    c = totals[1]
    law_err = max(abs(totals[n] - predict_total(c, theta_t, n)) for n in totals)
    # the same law on models that are actually built (tiny scale, real tensors)
    tiny = tiny_config([task_preset("depth")])
    built = {n: PGT.build(replicate_tasks(tiny, n), seed=n).params.numel() for n in range(1, 7)}
    tiny_theta = next(iter(partition(param_layout(replicate_tasks(tiny, 1))).per_task.values()))
    built_err = max(abs(built[n] - predict_total(built[1], tiny_theta, n)) for n in built)
    increment = theta_t / totals[4]
    ok = law_err == 0 and built_err == 0 and increment < 0.003
    verdict(4, "total(N) = c + (N-1)|theta_t| exactly, increment < 0.3% of N=4 total", ok,
            f"layout err {law_err}, built err {built_err}, increment {increment:.4%}")
    assert ok


def _full_loss(model, image, scene):
    total = None
    for spec in model.config.tasks:
        l = task_loss(model.forward(image, spec.name), scene.labels[spec.name], spec)
        total = l if total is None else total + l
    return total


def test_criterion_5_full_model_gradient(verdict):
    start = time.perf_counter()
    model = tiny_model(seed=1)
    scene = gen_scene(3, 32, 32, TASKS3)
    image = scene.image
    store = model.params
    rng = np.random.default_rng(0)
    eps = 1e-5
    for name in store.names():
        store[name].grad = None
        store[name].requires_grad = True
    with Tape() as tape:
        loss = _full_loss(model, image, scene)
    tape.backward(loss)
    worst, worst_name, n_checked = 0.0, "", 0
    for name in store.names():
        p = store[name]
        flat = p.data.reshape(-1)
        coords = rng.choice(flat.size, min(3, flat.size), replace=False)
        analytic = p.grad.reshape(-1)[coords]
        numeric = []
        for c in coords:
            old = flat[c]
            flat[c] = old + eps
            up = _full_loss(model, image, scene).item()
            flat[c] = old - eps
            down = _full_loss(model, image, scene).item()
            flat[c] = old
            numeric.append((up - down) / (2 * eps))
        err = float(np.max(nx.relative_error(analytic, np.array(numeric))))
        n_checked += len(coords)
        if err > worst:
            worst, worst_name = err, name
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 120
    verdict(5, "full-model gradient check, max rel err < 1e-4, < 2 min", ok,
            f"{n_checked} coords over {len(store)} tensors, max {worst:.2e} at {worst_name}, {elapsed:.1f}s")
    assert ok


def test_criterion_6_task_conditioning(verdict):
    rng = np.random.default_rng(5)
    image = rng.uniform(size=(32, 32, 3))
    # (a) empty prompts equal the plain-block baseline bit for bit
    empty = tiny_model(seed=2, prompt_len=0)
    plain = tiny_model(seed=2, prompt_len=0, pct_in_encoder=False, pct_in_decoder=False)
    with_prompts_off = tiny_model(seed=2, pct_in_encoder=False, pct_in_decoder=False)
    same_a = all(
        empty.forward(image, t).data.tobytes() == plain.forward(image, t).data.tobytes()
        == with_prompts_off.forward(image, t).data.tobytes()
        for t in TASKS3
    )

    # (b) isolation: perturb every semseg/depth prompt and head, watch edge
    scene = gen_scene(9, 32, 32, TASKS3)
    spec = task_preset("edge")

    def edge_run(model):
        store = model.params
        for n in store.names():
            store[n].grad = None
            store[n].requires_grad = True
        with Tape() as tape:
            out = model.forward(scene.image, "edge")
            loss = task_loss(out, scene.labels["edge"], spec)
        tape.backward(loss)
        grads = {n: store[n].grad.tobytes() for n in store.select("edge")}
        return out.data.tobytes(), loss.data.tobytes(), grads

    a = tiny_model(seed=3)
    b = tiny_model(seed=3)
    others = [n for n in b.params.names() if n.startswith(("task.semseg.", "task.depth."))]
    for n in others:
        b.params[n].data += rng.normal(size=b.params[n].shape) * 10.0
    out_a, loss_a, g_a = edge_run(a)
    out_b, loss_b, g_b = edge_run(b)
    same_b = out_a == out_b and loss_a == loss_b and g_a == g_b

    before = {n: b.params[n].data.tobytes() for n in others}
    images = np.stack([scene.image])
    train_step((images, {"edge": scene.labels["edge"][None]}), "edge", b, AdamW(weight_decay=0.1), 1e-2)
    untouched = all(b.params[n].data.tobytes() == before[n] for n in others)
    ok = same_a and same_b and untouched
    verdict(6, "empty-prompt equivalence and task isolation", ok,
            f"empty==plain {same_a}, edge invariant to other tasks {same_b}, train_step leaves them {untouched}")
    assert ok


def test_criterion_7_desk_scale_learning(verdict):
    start = time.perf_counter()
    train = [gen_scene(s, 32, 32, TASKS3) for s in range(64)]
    val = [gen_scene(s, 32, 32, TASKS3) for s in range(1000, 1016)]
    untrained = evaluate(tiny_model(seed=0), val).values["depth"]
    model = tiny_model(seed=0)
    cfg = TrainConfig(epochs=30, batch_size=1, lr=3e-3, weight_decay=1e-4, warmup_epochs=5, seed=0, augment=True)
    result = fit(train, val, model, cfg)
    elapsed = time.perf_counter() - start
    final = result.final_metrics.values
    smooth = smoothed(result.epoch_losses, 5)
    monotone = all(b <= a for a, b in zip(smooth, smooth[1:]))
    ok = (final["semseg"] > 0.5 and final["edge"] > 0.4 and final["depth"] <= 0.5 * untrained
          and monotone and elapsed < 600)
    verdict(7, "tiny model learns synthetic scenes in < 10 min", ok,
            f"mIoU {final['semseg']:.3f}, odsF {final['edge']:.3f}, depth RMSE {final['depth']:.3f} "
            f"vs untrained {untrained:.3f}, smoothed loss {[round(v, 3) for v in smooth]}, {elapsed:.0f}s")
    assert ok


def test_criterion_8_metric_oracles(verdict):
    worst = 0.0
    for seed in range(200):
        inst = oracles.random_instance(np.random.default_rng(10_000 + seed))
        diffs = [
            miou(inst["logits"], inst["labels"], inst["k"]) - oracles.miou(inst["logits"], inst["labels"], inst["k"]),
            rmse(inst["dp"], inst["dg"], inst["masks"]) - oracles.rmse(inst["dp"], inst["dg"], inst["masks"]),
            mean_angle(inst["np_"], inst["ng"], inst["masks"]) - oracles.mean_angle(inst["np_"], inst["ng"], inst["masks"]),
            ods_f(inst["probs"], inst["edges"]) - oracles.ods_f(inst["probs"], inst["edges"], ODS_THRESHOLDS),
            delta_m(inst["rows"]) - oracles.delta_m(inst["rows"]),
        ]
        worst = max(worst, max(abs(d) for d in diffs))
    ok = worst <= 1e-9
    verdict(8, "metrics match brute-force oracles on 200 random 8x8 instances", ok, f"max abs diff {worst:.1e}")
    assert ok


def _tree_hash(path):
    h = hashlib.sha256()
    for f in sorted(Path(path).rglob("*")):
        if f.is_file():
            h.update(str(f.relative_to(path)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def test_criterion_9_determinism(tmp_path, verdict):
    hashes = {}
    for tag in ("a", "b"):
        root = tmp_path / tag
        assert run(["synth", "--out", str(root / "train"), "--set", "count=6"], log=quiet) == 0
        assert run(["synth", "--seed", "1000", "--out", str(root / "val"), "--set", "count=2"], log=quiet) == 0
        assert run(["train", "--out", str(root / "run"), "--set", f"train_data={root / 'train'}",
                    "--set", f"val_data={root / 'val'}", "--set", "epochs=2", "--set", "warmup_epochs=1"],
                   log=quiet) == 0
        hashes[tag] = (_tree_hash(root / "train"), _tree_hash(root / "val"),
                       hashlib.sha256((root / "run" / "checkpoint.pgtc").read_bytes()).hexdigest())
    ok = hashes["a"] == hashes["b"]
    verdict(9, "synth and train reruns are byte-identical", ok, f"checkpoint sha256 {hashes['a'][2][:16]}")
    assert ok
