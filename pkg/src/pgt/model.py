"""Prompt-conditioned transformer model: encoder, fusion decoder, task heads.

One forward pass serves one task. Shared weights live under ``shared.`` and
each task owns its prompts (one ``[N_p, d]`` matrix per conditioned block)
and its prediction head under ``task.<name>.``.
"""

from __future__ import annotations

import dataclasses
import zlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .accounting import ParamStore
from .errors import ConditioningError, ConfigError, ShapeError, TaskLookupError
from .layers import (
    Conv2d,
    LayerNorm,
    LinearLayer,
    Mlp,
    MsaLayer,
    msa_forward,
    patch_embed,
    patch_merge,
    upsample_bilinear,
)
from .numerics import Tensor

LOSS_KINDS = ("cross_entropy", "binary_cross_entropy", "l1", "l2")
METRIC_KINDS = ("miou", "rmse", "mean_angle", "odsF")
MIN_HEAD_DIM = 8


@dataclass(frozen=True)
class TaskSpec:
    name: str
    out_channels: int
    loss_kind: str
    metric_kind: str
    lower_is_better: bool

    def __post_init__(self):
        if not self.name or "." in self.name:
            raise ConfigError(f"invalid task name {self.name!r}")
        if self.out_channels < 1:
            raise ConfigError(f"task {self.name}: out_channels must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"task {self.name}: unknown loss {self.loss_kind!r}")
        if self.metric_kind not in METRIC_KINDS:
            raise ConfigError(f"task {self.name}: unknown metric {self.metric_kind!r}")


def task_preset(name: str, num_classes: int = 6) -> TaskSpec:
    """Standard dense-prediction task definitions keyed by short name."""
    presets = {
        "semseg": (num_classes, "cross_entropy", "miou", False),
        "parts": (7, "cross_entropy", "miou", False),
        "edge": (1, "binary_cross_entropy", "odsF", False),
        "saliency": (1, "binary_cross_entropy", "miou", False),
        "normal": (3, "l1", "mean_angle", True),
        "depth": (1, "l2", "rmse", True),
    }
    if name not in presets:
        raise ConfigError(f"no preset for task {name!r}; known: {sorted(presets)}")
    return TaskSpec(name, *presets[name])


@dataclass(frozen=True)
class ModelConfig:
    image_h: int = 32
    image_w: int = 32
    base_dim: int = 8
    stage_depths: tuple = (1, 1, 1, 1)
    stage_heads: tuple = (2, 2, 4, 8)
    prompt_len: int = 2
    decoder_depth: int = 1
    mlp_ratio: int = 4
    tasks: tuple = ()
    pct_in_encoder: bool = True
    pct_in_decoder: bool = True
    prompt_init: str = "independent"

    def __post_init__(self):
        object.__setattr__(self, "stage_depths", tuple(int(v) for v in self.stage_depths))
        object.__setattr__(self, "stage_heads", tuple(int(v) for v in self.stage_heads))
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if len(self.stage_depths) != 4 or len(self.stage_heads) != 4:
            raise ConfigError("stage_depths and stage_heads need exactly four entries")
        if self.image_h % 32 or self.image_w % 32:
            raise ConfigError(f"image size {self.image_h}x{self.image_w} not divisible by 32")
        for dim, heads in zip(self.stage_dims, self.stage_heads):
            if heads < 1 or dim % heads:
                raise ConfigError(f"stage dim {dim} not divisible by {heads} heads")
        if min(self.stage_depths) < 1 or self.decoder_depth < 0 or self.prompt_len < 0:
            raise ConfigError("depths must be >= 1, decoder_depth and prompt_len >= 0")
        if self.base_dim % 4:
            raise ConfigError(f"base_dim {self.base_dim} must be divisible by 4 (head width C/4)")
        if self.prompt_init not in ("independent", "shared"):
            raise ConfigError("prompt_init must be 'independent' or 'shared'")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate task names in {names}")

    @property
    def stage_dims(self) -> tuple:
        c = self.base_dim
        return (c, 2 * c, 4 * c, 8 * c)

    @property
    def stage_grids(self) -> tuple:
        return tuple((self.image_h // (4 << s), self.image_w // (4 << s)) for s in range(4))

    @property
    def head_dim(self) -> int:
        """Hidden width of the task heads: C/4, floored at MIN_HEAD_DIM."""
        return max(self.base_dim // 4, MIN_HEAD_DIM)

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise TaskLookupError(f"unknown task {name!r}; configured: {[t.name for t in self.tasks]}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stage_depths"] = list(self.stage_depths)
        d["stage_heads"] = list(self.stage_heads)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["tasks"] = tuple(TaskSpec(**t) for t in d.get("tasks", ()))
        return cls(**d)


def swin_t_config(tasks=None, image_h: int = 512, image_w: int = 512, **overrides) -> ModelConfig:
    """Swin-T-sized configuration: C=96, depths 2-2-6-2, N_p=10, decoder depth 4."""
    if tasks is None:
        tasks = [task_preset(n, 21) for n in ("edge", "semseg", "parts", "normal", "saliency")]
    kw = dict(
        image_h=image_h,
        image_w=image_w,
        base_dim=96,
        stage_depths=(2, 2, 6, 2),
        stage_heads=(3, 6, 12, 24),
        prompt_len=10,
        decoder_depth=4,
        mlp_ratio=4,
        tasks=tuple(tasks),
    )
    kw.update(overrides)
    return ModelConfig(**kw)


def tiny_config(tasks=None, **overrides) -> ModelConfig:
    if tasks is None:
        tasks = [task_preset(n) for n in ("semseg", "edge", "depth")]
    kw = dict(tasks=tuple(tasks))
    kw.update(overrides)
    return ModelConfig(**kw)


def replicate_tasks(config: ModelConfig, n: int) -> ModelConfig:
    """Config with ``n`` copies of the first task (names ``<task>0..``)."""
    if not config.tasks:
        raise ConfigError("config has no tasks to replicate")
    t = config.tasks[0]
    tasks = tuple(dataclasses.replace(t, name=f"{t.name}{i}") for i in range(n))
    return dataclasses.replace(config, tasks=tasks)


# parameter layout ------------------------------------------------------------

def _block_layout(prefix: str, d: int, mlp_ratio: int):
    h = d * mlp_ratio
    yield f"{prefix}.norm1.weight", (d,)
    yield f"{prefix}.norm1.bias", (d,)
    yield f"{prefix}.msa.qkv.weight", (d, 3 * d)
    yield f"{prefix}.msa.qkv.bias", (3 * d,)
    yield f"{prefix}.msa.proj.weight", (d, d)
    yield f"{prefix}.msa.proj.bias", (d,)
    yield f"{prefix}.norm2.weight", (d,)
    yield f"{prefix}.norm2.bias", (d,)
    yield f"{prefix}.mlp.fc1.weight", (d, h)
    yield f"{prefix}.mlp.fc1.bias", (h,)
    yield f"{prefix}.mlp.fc2.weight", (h, d)
    yield f"{prefix}.mlp.fc2.bias", (d,)


def encoder_block_ids(config: ModelConfig) -> list[tuple[str, int]]:
    """``(block id, dim)`` for every encoder block, e.g. ``("enc.s1.b0", C)``."""
    return [
        (f"enc.s{s + 1}.b{b}", config.stage_dims[s])
        for s in range(4)
        for b in range(config.stage_depths[s])
    ]


def decoder_block_ids(config: ModelConfig) -> list[tuple[str, int]]:
    return [(f"dec.b{b}", config.base_dim) for b in range(config.decoder_depth)]


def conditioned_block_ids(config: ModelConfig) -> list[tuple[str, int]]:
    if config.prompt_len == 0:
        return []
    ids = []
    if config.pct_in_encoder:
        ids += encoder_block_ids(config)
    if config.pct_in_decoder:
        ids += decoder_block_ids(config)
    return ids


def param_layout(config: ModelConfig) -> "OrderedDict[str, tuple]":
    """Every parameter name and shape, in registration order."""
    c = config.base_dim
    dims = config.stage_dims
    out = OrderedDict()
    out["shared.encoder.patch_embed.weight"] = (48, c)
    out["shared.encoder.patch_embed.bias"] = (c,)
    gh, gw = config.stage_grids[0]
    out["shared.encoder.pos"] = (gh * gw, c)
    for s in range(4):
        for b in range(config.stage_depths[s]):
            out.update(_block_layout(f"shared.encoder.stage{s + 1}.block{b}", dims[s], config.mlp_ratio))
        if s < 3:
            out[f"shared.encoder.merge{s + 1}.reduce.weight"] = (4 * dims[s], 2 * dims[s])
            out[f"shared.encoder.merge{s + 1}.reduce.bias"] = (2 * dims[s],)
    for i in range(4):
        out[f"shared.decoder.fuse.proj{i + 1}.weight"] = (dims[i], c)
        out[f"shared.decoder.fuse.proj{i + 1}.bias"] = (c,)
    out["shared.decoder.fuse.out.weight"] = (4 * c, c)
    out["shared.decoder.fuse.out.bias"] = (c,)
    for b in range(config.decoder_depth):
        out.update(_block_layout(f"shared.decoder.block{b}", c, config.mlp_ratio))
    hd = config.head_dim
    for t in config.tasks:
        for block_id, d in conditioned_block_ids(config):
            out[f"task.{t.name}.prompt.{block_id}"] = (config.prompt_len, d)
        out[f"task.{t.name}.head.conv1.weight"] = (3, 3, c, hd)
        out[f"task.{t.name}.head.conv1.bias"] = (hd,)
        out[f"task.{t.name}.head.conv2.weight"] = (3, 3, hd, hd)
        out[f"task.{t.name}.head.conv2.bias"] = (hd,)
        out[f"task.{t.name}.head.conv3.weight"] = (1, 1, hd, t.out_channels)
        out[f"task.{t.name}.head.conv3.bias"] = (t.out_channels,)
    return out


PROMPT_INIT_RANGE = 0.02
POS_INIT_STD = 0.02


def _rng(seed: int, key: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(key.encode())])


def init_param(name: str, shape: tuple, seed: int, prompt_init: str = "independent") -> np.ndarray:
    """Deterministic initial value; depends only on (seed, name, shape)."""
    if ".prompt." in name:
        key = name
        if prompt_init == "shared":
            key = "task.*." + name.split(".", 2)[2]
        return _rng(seed, key).uniform(-PROMPT_INIT_RANGE, PROMPT_INIT_RANGE, shape)
    leaf = name.rsplit(".", 2)
    if name.endswith(".bias"):
        return np.zeros(shape)
    if leaf[-2].startswith("norm"):
        return np.ones(shape)
    if name.endswith(".pos"):
        return _rng(seed, name).normal(0.0, POS_INIT_STD, shape)
    fan_in = int(np.prod(shape[:-1]))
    bound = 1.0 / np.sqrt(fan_in)
    return _rng(seed, name).uniform(-bound, bound, shape)


def build_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    store = ParamStore()
    for name, shape in param_layout(config).items():
        store.add(name, Tensor(init_param(name, shape, seed, config.prompt_init), requires_grad=True))
    return store


# forward pass ----------------------------------------------------------------

@dataclass
class PctBlock:
    norm1: LayerNorm
    msa: MsaLayer
    norm2: LayerNorm
    mlp: Mlp

    @property
    def dim(self) -> int:
        return self.msa.dim


def pct_block_forward(z_prev, prompt, block: PctBlock):
    """z' = MSA([p; LN(z)]) minus prompt rows; z^ = z' + z; out = MLP(LN(z^)) + z^."""
    z_prev = nx.as_tensor(z_prev)
    if prompt is not None and prompt.shape[-1] != block.dim:
        raise ConditioningError(
            f"prompt dim {prompt.shape[-1]} does not match block dim {block.dim}"
        )
    z_attn, _ = msa_forward(block.norm1(z_prev), prompt, block.msa)
    z_hat = z_attn + z_prev
    return block.mlp(block.norm2(z_hat)) + z_hat


@dataclass
class MultiScaleFeatures:
    E1: Tensor
    E2: Tensor
    E3: Tensor
    E4: Tensor

    def __iter__(self):
        return iter((self.E1, self.E2, self.E3, self.E4))

    def __getitem__(self, i):
        return (self.E1, self.E2, self.E3, self.E4)[i]


class PromptBank:
    """Read view of prompt tensors keyed by ``(task, block id)``."""

    def __init__(self, store: ParamStore, config: ModelConfig):
        self.store = store
        self.config = config

    def block_ids(self) -> list[str]:
        return [b for b, _ in conditioned_block_ids(self.config)]

    def tasks(self) -> list[str]:
        return [t.name for t in self.config.tasks]

    def get(self, task: str, block_id: str):
        name = f"task.{task}.prompt.{block_id}"
        if name in self.store:
            return self.store[name]
        return None

    def __getitem__(self, key):
        task, block_id = key
        p = self.get(task, block_id)
        if p is None:
            raise TaskLookupError(f"no prompt for task {task!r} at block {block_id!r}")
        return p


def _linear(store, prefix) -> LinearLayer:
    return LinearLayer(store[f"{prefix}.weight"], store[f"{prefix}.bias"])


def _block(store, prefix, heads) -> PctBlock:
    return PctBlock(
        norm1=LayerNorm(store[f"{prefix}.norm1.weight"], store[f"{prefix}.norm1.bias"]),
        msa=MsaLayer(heads, _linear(store, f"{prefix}.msa.qkv"), _linear(store, f"{prefix}.msa.proj")),
        norm2=LayerNorm(store[f"{prefix}.norm2.weight"], store[f"{prefix}.norm2.bias"]),
        mlp=Mlp(_linear(store, f"{prefix}.mlp.fc1"), _linear(store, f"{prefix}.mlp.fc2")),
    )


class PGT:
    """Task-conditional multi-task dense predictor.

    Images are ``[H, W, 3]`` or ``[B, H, W, 3]``; every output keeps the same
    batching as the input.
    """

    def __init__(self, config: ModelConfig, params: ParamStore):
        self.config = config
        self.params = params
        expected = param_layout(config)
        got = params.shapes()
        if list(expected) != list(got):
            missing = sorted(set(expected) - set(got)) or sorted(set(got) - set(expected))
            raise ShapeError(f"parameter set does not match config near {missing[:3]}")
        for name, shape in expected.items():
            if got[name] != shape:
                raise ShapeError(f"parameter {name} has shape {got[name]}, config needs {shape}")
        self.bank = PromptBank(params, config)
        p = params
        self.embed = _linear(p, "shared.encoder.patch_embed")
        self.pos = p["shared.encoder.pos"]
        self.stages = [
            [_block(p, f"shared.encoder.stage{s + 1}.block{b}", config.stage_heads[s])
             for b in range(config.stage_depths[s])]
            for s in range(4)
        ]
        self.merges = [_linear(p, f"shared.encoder.merge{s + 1}.reduce") for s in range(3)]
        self.fuse_proj = [_linear(p, f"shared.decoder.fuse.proj{i + 1}") for i in range(4)]
        self.fuse_out = _linear(p, "shared.decoder.fuse.out")
        self.decoder = [
            _block(p, f"shared.decoder.block{b}", config.stage_heads[0])
            for b in range(config.decoder_depth)
        ]

    @classmethod
    def build(cls, config: ModelConfig, seed: int = 0) -> "PGT":
        return cls(config, build_params(config, seed))

    def head(self, task: str) -> list[Conv2d]:
        self.config.task(task)
        p = self.params
        return [
            Conv2d(p[f"task.{task}.head.conv{i}.weight"], p[f"task.{task}.head.conv{i}.bias"])
            for i in (1, 2, 3)
        ]

    def _prompt(self, bank, task, block_id, enabled):
        if not enabled:
            return None
        return bank.get(task, block_id)

    def encoder_forward(self, image, task: str, bank: PromptBank | None = None) -> MultiScaleFeatures:
        cfg = self.config
        cfg.task(task)
        bank = bank or self.bank
        image = nx.as_tensor(image)
        if tuple(image.shape[-3:]) != (cfg.image_h, cfg.image_w, 3):
            raise ShapeError(f"image shape {image.shape} does not match config {cfg.image_h}x{cfg.image_w}x3")
        batched = image.ndim == 4
        x = image if batched else nx.reshape(image, (1,) + image.shape)
        b = x.shape[0]
        z = patch_embed(x, self.embed) + self.pos
        feats = []
        for s in range(4):
            h, w = cfg.stage_grids[s]
            for j, block in enumerate(self.stages[s]):
                prompt = self._prompt(bank, task, f"enc.s{s + 1}.b{j}", cfg.pct_in_encoder)
                z = pct_block_forward(z, prompt, block)
            e = nx.reshape(z, (b, h, w, cfg.stage_dims[s]))
            feats.append(e if batched else e[0])
            if s < 3:
                z = patch_merge(z, h, w, self.merges[s])
        return MultiScaleFeatures(*feats)

    def fuse_features(self, feats: MultiScaleFeatures):
        parts = []
        for i, (e, proj) in enumerate(zip(feats, self.fuse_proj)):
            f = proj(e)
            if i > 0:
                f = upsample_bilinear(f, 2 ** i)
            parts.append(f)
        return self.fuse_out(nx.concat(parts, axis=-1))

    def decoder_forward(self, fused, task: str, bank: PromptBank | None = None):
        cfg = self.config
        cfg.task(task)
        bank = bank or self.bank
        fused = nx.as_tensor(fused)
        if not self.decoder:
            return fused
        lead = fused.shape[:-3]
        h, w, c = fused.shape[-3:]
        z = nx.reshape(fused, lead + (h * w, c))
        for j, block in enumerate(self.decoder):
            prompt = self._prompt(bank, task, f"dec.b{j}", cfg.pct_in_decoder)
            z = pct_block_forward(z, prompt, block)
        return nx.reshape(z, lead + (h, w, c))

    def head_forward(self, decoded, task: str):
        conv1, conv2, conv3 = self.head(task)
        # purely linear: upsample, 3x3 conv, upsample, 3x3 conv, 1x1 conv
        x = conv1(upsample_bilinear(decoded, 2))
        x = conv2(upsample_bilinear(x, 2))
        return conv3(x)

    def forward(self, image, task: str, bank: PromptBank | None = None):
        feats = self.encoder_forward(image, task, bank)
        fused = self.fuse_features(feats)
        return self.head_forward(self.decoder_forward(fused, task, bank), task)

    __call__ = forward

    def forward_all(self, image) -> dict:
        """One separate pass per configured task."""
        return {t.name: self.forward(image, t.name) for t in self.config.tasks}


# checkpoints -----------------------------------------------------------------

def save_checkpoint(model: PGT, path, meta: dict | None = None) -> None:
    from .container import write_archive

    info = {"config": model.config.to_dict()}
    info.update(meta or {})
    write_archive(path, {name: t.data for name, t in model.params.items()}, info)


def load_checkpoint(path, config: ModelConfig | None = None) -> PGT:
    """Rebuild a model from an archive; ``config`` (if given) must match it."""
    from .container import read_archive
    from .errors import LoadError

    arrays, meta = read_archive(path)
    stored = ModelConfig.from_dict(meta["config"])
    cfg = config or stored
    layout = param_layout(cfg)
    for name, shape in layout.items():
        if name not in arrays:
            raise LoadError(f"checkpoint {path} lacks parameter {name}")
        if tuple(arrays[name].shape) != shape:
            raise LoadError(
                f"parameter {name}: checkpoint shape {tuple(arrays[name].shape)} != config shape {shape}"
            )
    extra = set(arrays) - set(layout)
    if extra:
        raise LoadError(f"checkpoint {path} has parameters unknown to the config: {sorted(extra)[:3]}")
    store = ParamStore((n, Tensor(arrays[n], requires_grad=True)) for n in layout)
    return PGT(cfg, store)
