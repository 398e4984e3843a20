"""``pgt`` command-line entry point.

Every subcommand reads a flat ``key = value`` config file (``#`` starts a
comment). Unknown keys are rejected and every key has a default, listed in
``DEFAULTS``. Command-line flags override file values, and ``--set KEY=VALUE``
overrides any key. ``--print-config`` echoes the resolved configuration in the
same format and exits, so its output is itself a valid config file.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .accounting import FAMILIES, growth_curves, partition
from .errors import ConfigError, DataError, PGTError
from .metrics import MetricsReport
from .model import PGT, ModelConfig, PromptBank, load_checkpoint, param_layout, task_preset
from .synthdata import boundary, gen_scene, load_dataset, read_manifest, verify_scene, write_dataset
from .trainer import TrainConfig, evaluate, fit

DEFAULTS = {
    # data
    "seed": 0,
    "count": 64,
    "height": 32,
    "width": 32,
    "tasks": ("semseg", "edge", "depth"),
    "num_classes": 6,
    "train_data": "data/train",
    "val_data": "data/val",
    # model
    "base_dim": 8,
    "stage_depths": (1, 1, 1, 1),
    "stage_heads": (2, 2, 4, 8),
    "prompt_len": 2,
    "decoder_depth": 1,
    "mlp_ratio": 4,
    "pct_in_encoder": True,
    "pct_in_decoder": True,
    "prompt_init": "independent",
    # training
    "epochs": 30,
    "batch_size": 1,
    "lr": 3e-3,
    "weight_decay": 1e-4,
    "warmup_epochs": 5,
    "task_sampling": "round_robin",
    "augment": True,
    # outputs and analysis
    "out": "run",
    "checkpoint": "run/checkpoint.pgtc",
    "baseline": "",
    "growth_max_tasks": 6,
    "which": "prompt-sim",
    "selector": "enc.s1.b0",
    "similarity": "flatten",
    "image_seed": 0,
}

TRAIN_KEYS = ("epochs", "batch_size", "lr", "weight_decay", "warmup_epochs", "task_sampling", "augment")


# config parsing ------------------------------------------------------------

def _coerce(key: str, text: str):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            return tuple(int(s) for s in items) if isinstance(default[0], int) else tuple(items)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value)
    return values


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {_format(cfg[k])}\n" for k in DEFAULTS)


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        cfg.update(parse_config_text(text, args.config))
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        if key.strip() not in DEFAULTS:
            raise ConfigError(f"--set: unknown key {key.strip()!r}")
        cfg[key.strip()] = _coerce(key.strip(), value)
    for key in ("seed", "out", "checkpoint", "baseline", "which", "selector"):
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = _coerce(key, str(flag))
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        image_h=cfg["height"],
        image_w=cfg["width"],
        base_dim=cfg["base_dim"],
        stage_depths=cfg["stage_depths"],
        stage_heads=cfg["stage_heads"],
        prompt_len=cfg["prompt_len"],
        decoder_depth=cfg["decoder_depth"],
        mlp_ratio=cfg["mlp_ratio"],
        tasks=tuple(task_preset(t, cfg["num_classes"]) for t in cfg["tasks"]),
        pct_in_encoder=cfg["pct_in_encoder"],
        pct_in_decoder=cfg["pct_in_decoder"],
        prompt_init=cfg["prompt_init"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(seed=cfg["seed"], **{k: cfg[k] for k in TRAIN_KEYS})


# subcommands ---------------------------------------------------------------

def cmd_synth(cfg: dict, force: bool = False, log=print) -> Path:
    out = Path(cfg["out"])
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"{out} exists and is not empty; pass --force to overwrite")
    if out.exists() and force:
        for f in out.iterdir():
            if f.is_file():
                f.unlink()
    seeds = range(cfg["seed"], cfg["seed"] + cfg["count"])
    write_dataset(out, seeds, cfg["height"], cfg["width"], cfg["tasks"])
    log(f"wrote {cfg['count']} scenes to {out}")
    return out


def _load_split(path) -> list:
    if not Path(path).is_dir():
        raise DataError(f"dataset directory {path} does not exist")
    return load_dataset(path)


def cmd_train(cfg: dict, log=print):
    tcfg = train_config(cfg)
    mcfg = model_config(cfg)
    train = _load_split(cfg["train_data"])
    val = _load_split(cfg["val_data"])
    man = read_manifest(cfg["train_data"])
    if (man["height"], man["width"]) != (mcfg.image_h, mcfg.image_w):
        raise ConfigError(
            f"dataset is {man['height']}x{man['width']} but config says {mcfg.image_h}x{mcfg.image_w}"
        )
    model = PGT.build(mcfg, seed=cfg["seed"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.pgtc"

    def progress(epoch, loss, report):
        vals = " ".join(f"{t}={v:.4f}" for t, v in report.values.items())
        log(f"epoch {epoch + 1}/{tcfg.epochs} loss={loss:.4f} {vals}")

    result = fit(train, val, model, tcfg, checkpoint_path=ckpt, log_path=out / "train_log.csv",
                 progress=progress)
    result.final_metrics.write(out / "metrics.txt")
    log(f"checkpoint written to {ckpt}")
    return result


def cmd_eval(cfg: dict, metrics_file: str | None = None, log=print) -> MetricsReport:
    if metrics_file:
        report = MetricsReport.read(metrics_file)
    else:
        model = load_checkpoint(cfg["checkpoint"])
        report = evaluate(model, _load_split(cfg["val_data"]))
    if cfg["baseline"]:
        report = report.with_baseline(MetricsReport.read(cfg["baseline"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "eval_metrics.txt")
    (out / "eval_metrics.csv").write_text("\n".join(report.csv_rows()) + "\n")
    for line in report.as_lines():
        log(line)
    return report


def cmd_params(cfg: dict, log=print):
    mcfg = model_config(cfg)
    report = partition(param_layout(mcfg))
    for line in report.as_lines():
        log(line)
    ns = range(1, cfg["growth_max_tasks"] + 1)
    curves = {fam: dict(growth_curves(fam, mcfg, ns)) for fam in FAMILIES}
    rows = ["n_tasks," + ",".join(FAMILIES)]
    rows += [f"{n}," + ",".join(str(curves[f][n]) for f in FAMILIES) for n in ns]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "params.txt").write_text("\n".join(report.as_lines()) + "\n")
    (out / "growth.csv").write_text("\n".join(rows) + "\n")
    log(f"growth curves written to {out / 'growth.csv'}")
    return report, curves


def cmd_analyze(cfg: dict, log=print) -> list[Path]:
    model = load_checkpoint(cfg["checkpoint"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    which, selector = cfg["which"], cfg["selector"]
    if which == "prompt-sim":
        sim = analysis.prompt_similarity(PromptBank(model.params, model.config), selector, cfg["similarity"])
        path = out / f"prompt_sim_{selector}.csv"
        sim.write_csv(path)
        for line in sim.csv_lines():
            log(line)
        return [path]
    if which == "heatmap":
        stage = analysis.stage_selector(selector)
        c = model.config
        scene = gen_scene(cfg["image_seed"], c.image_h, c.image_w, ())
        written = []
        for t in c.tasks:
            feats = model.encoder_forward(scene.image, t.name)
            heat = analysis.feature_heatmap(feats[stage])
            written += analysis.write_heatmap(out / f"heatmap_E{stage + 1}_{t.name}", heat)
        log(f"wrote {len(written)} heatmap files to {out}")
        return written
    raise ConfigError(f"--which must be 'prompt-sim' or 'heatmap', got {which!r}")


def cmd_verify(cfg: dict, log=print) -> int:
    """Check every scene of a dataset against the label-consistency oracles."""
    path = cfg["train_data"]
    scenes = _load_split(path)
    problems = []
    for i, scene in enumerate(scenes):
        for p in verify_scene(scene):
            problems.append(f"scene {i}: {p}")
        if "edge" in scene.labels and "semseg" in scene.labels:
            if not np.array_equal(scene.labels["edge"], boundary(scene.labels["semseg"])):
                problems.append(f"scene {i}: edge map disagrees with semseg boundaries")
    for p in problems:
        log(p)
    if problems:
        raise DataError(f"{len(problems)} problem(s) in {path}")
    log(f"{len(scenes)} scenes in {path} verified")
    return len(scenes)


# entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgt", description="Prompt-conditioned multi-task dense prediction")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--print-config", action="store_true", help="echo the resolved config and exit")
    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    sub.add_parser("train", parents=[common], help="train and write checkpoint, log, metrics")
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or a metrics file")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", help="single-task metrics file for delta-m")
    p.add_argument("--metrics", help="use this metrics file instead of running a model")
    sub.add_parser("params", parents=[common], help="parameter report and growth curves")
    p = sub.add_parser("analyze", parents=[common], help="prompt similarity or feature heatmaps")
    p.add_argument("--checkpoint")
    p.add_argument("--which", choices=("prompt-sim", "heatmap"))
    p.add_argument("--selector", help="block id (prompt-sim) or stage E1..E4 (heatmap)")
    sub.add_parser("verify", parents=[common], help="check dataset labels for consistency")
    return parser


def run(argv=None, log=print) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(format_config(cfg))
            return 0
        if args.command == "synth":
            cmd_synth(cfg, force=args.force, log=log)
        elif args.command == "train":
            cmd_train(cfg, log=log)
        elif args.command == "eval":
            cmd_eval(cfg, metrics_file=args.metrics, log=log)
        elif args.command == "params":
            cmd_params(cfg, log=log)
        elif args.command == "analyze":
            cmd_analyze(cfg, log=log)
        else:
            cmd_verify(cfg, log=log)
    except PGTError as exc:
        print(f"pgt {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def main() -> None:
    sys.exit(run())

