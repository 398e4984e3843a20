"""Deterministic synthetic multi-task scenes.

A scene is a background plus 2-5 axis-aligned rectangles and discs of
distinct classes stacked in a random z-order. Every label is derived from
the same painted geometry, so the maps are mutually consistent:

* ``semseg``: class id per pixel (0 = background);
* ``edge``: pixels whose class differs from a 4-neighbour;
* ``depth``: one value per object, strictly decreasing with z-order;
* ``normal``: unit normal of a per-object slanted plane;
* ``saliency``: foreground mask.

All randomness comes from :class:`SplitMix64`, which is specified down to its
constants so datasets can be regenerated bit-for-bit by other implementations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .container import read_tensor, write_tensor
from .errors import ConfigError, DataError

TASKS = ("semseg", "edge", "depth", "normal", "saliency")
NUM_CLASSES = 6
BACKGROUND_DEPTH = 3.0

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

# RGB base colour per class; class 0 is the background.
PALETTE = np.array(
    [
        [0.45, 0.45, 0.45],
        [0.90, 0.15, 0.15],
        [0.15, 0.80, 0.20],
        [0.15, 0.25, 0.95],
        [0.95, 0.85, 0.10],
        [0.80, 0.20, 0.85],
    ]
)
LIGHT = np.array([0.4, -0.3, 0.866]) / np.linalg.norm([0.4, -0.3, 0.866])


class SplitMix64:
    """SplitMix64: state += 0x9E3779B97F4A7C15, then the two-multiply finaliser."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * MIX1) & MASK64
        z = ((z ^ (z >> 27)) * MIX2) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def randint(self, n: int) -> int:
        return int(self.uniform() * n)

    def uniform_array(self, n: int) -> np.ndarray:
        """``n`` consecutive ``uniform()`` draws, vectorised."""
        with np.errstate(over="ignore"):
            k = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + k * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


@dataclass
class Scene:
    image: np.ndarray  # [H, W, 3] in [0, 1]
    labels: dict = field(default_factory=dict)

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[:2]


def boundary(semseg: np.ndarray) -> np.ndarray:
    """1 where any 4-neighbour inside the image carries a different class."""
    s = np.asarray(semseg)
    e = np.zeros(s.shape, dtype=bool)
    dv = s[1:, :] != s[:-1, :]
    dh = s[:, 1:] != s[:, :-1]
    e[1:, :] |= dv
    e[:-1, :] |= dv
    e[:, 1:] |= dh
    e[:, :-1] |= dh
    return e.astype(np.float64)


def _check_tasks(tasks):
    tasks = tuple(tasks)
    bad = [t for t in tasks if t not in TASKS]
    if bad:
        raise ConfigError(f"unsupported task(s) {bad}; synthetic scenes provide {TASKS}")
    return tasks


def gen_scene(seed: int, height: int, width: int, tasks=TASKS, n_shapes: int | None = None) -> Scene:
    """Generate one scene; ``n_shapes`` forces the object count (0 allowed)."""
    tasks = _check_tasks(tasks)
    if height % 32 or width % 32:
        raise ConfigError(f"scene size {height}x{width} not divisible by 32")
    rng = SplitMix64(seed)
    n = 2 + rng.randint(4)
    if n_shapes is not None:
        n = n_shapes
    if not 0 <= n <= NUM_CLASSES - 1:
        raise ConfigError(f"shape count {n} outside [0, {NUM_CLASSES - 1}]")
    classes = list(range(1, NUM_CLASSES))
    for i in range(len(classes) - 1, 0, -1):
        j = rng.randint(i + 1)
        classes[i], classes[j] = classes[j], classes[i]

    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    semseg = np.zeros((height, width), dtype=np.int64)
    depth = np.full((height, width), BACKGROUND_DEPTH)
    normal = np.zeros((height, width, 3))
    normal[..., 2] = 1.0
    shade = np.full((height, width), float(LIGHT[2]))
    tint = np.zeros((height, width))
    short = min(height, width)
    for z in range(n):
        cls = classes[z]
        if rng.uniform() < 0.5:
            h = short * (0.2 + 0.3 * rng.uniform())
            w = short * (0.2 + 0.3 * rng.uniform())
            y0 = rng.uniform() * (height - h)
            x0 = rng.uniform() * (width - w)
            mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        else:
            r = short * (0.1 + 0.15 * rng.uniform())
            cy = r + rng.uniform() * (height - 2 * r)
            cx = r + rng.uniform() * (width - 2 * r)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        d = 2.4 - 0.45 * z + 0.15 * rng.uniform()
        nvec = np.array([1.2 * rng.uniform() - 0.6, 1.2 * rng.uniform() - 0.6, 1.0])
        nvec /= np.linalg.norm(nvec)
        brightness = 0.2 * rng.uniform() - 0.1
        semseg[mask] = cls
        depth[mask] = d
        normal[mask] = nvec
        shade[mask] = float(nvec @ LIGHT)
        tint[mask] = brightness

    noise = rng.uniform_array(height * width * 3).reshape(height, width, 3)
    base = PALETTE[semseg] * (0.55 + 0.45 * shade)[..., None] + tint[..., None]
    image = np.clip(base + 0.06 * (noise - 0.5), 0.0, 1.0)
    full = {
        "semseg": semseg.astype(np.float64),
        "edge": boundary(semseg),
        "depth": depth,
        "normal": normal,
        "saliency": (semseg > 0).astype(np.float64),
    }
    return Scene(image=image, labels={t: full[t] for t in tasks})


def _resample_index(n_out: int, n_in: int, scale: float, offset: float) -> np.ndarray:
    src = (np.arange(n_out) + offset + 0.5) / scale - 0.5
    return np.clip(np.floor(src + 0.5).astype(np.int64), 0, n_in - 1)


def _bilinear_axis(n_out: int, n_in: int, scale: float, offset: float):
    src = np.clip((np.arange(n_out) + offset + 0.5) / scale - 0.5, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def augment(scene: Scene, seed: int, scale: bool = True, flip: bool | None = None, jitter: bool = True) -> Scene:
    """Random scale + crop, horizontal flip and photometric jitter.

    ``flip=None`` flips with probability 0.5; True/False force it. Geometric
    transforms use nearest-neighbour sampling for labels; the edge map is
    re-derived from the transformed segmentation so it stays consistent.
    """
    rng = SplitMix64(seed)
    u_scale, u_oy, u_ox, u_flip, u_bright, u_contrast = (rng.uniform() for _ in range(6))
    h, w = scene.size
    image = scene.image
    labels = dict(scene.labels)

    if scale:
        s = 0.75 + 0.5 * u_scale
        oy = u_oy * (h * s - h)
        ox = u_ox * (w * s - w)
        iy = _resample_index(h, h, s, oy)
        ix = _resample_index(w, w, s, ox)
        for key in labels:
            labels[key] = labels[key][iy][:, ix]
        y0, y1, ty = _bilinear_axis(h, h, s, oy)
        x0, x1, tx = _bilinear_axis(w, w, s, ox)
        ty, tx = ty[:, None, None], tx[None, :, None]
        top = image[y0][:, x0] * (1 - tx) + image[y0][:, x1] * tx
        bot = image[y1][:, x0] * (1 - tx) + image[y1][:, x1] * tx
        image = top * (1 - ty) + bot * ty

    do_flip = (u_flip < 0.5) if flip is None else flip
    if do_flip:
        image = image[:, ::-1]
        for key in labels:
            labels[key] = labels[key][:, ::-1]
        if "normal" in labels:
            labels["normal"] = labels["normal"] * np.array([-1.0, 1.0, 1.0])

    if jitter:
        bright = 0.2 * u_bright - 0.1
        contrast = 0.8 + 0.4 * u_contrast
        m = image.mean()
        image = np.clip((image - m) * contrast + m + bright, 0.0, 1.0)

    labels = {k: np.ascontiguousarray(v) for k, v in labels.items()}
    if "edge" in labels and "semseg" in labels:
        labels["edge"] = boundary(labels["semseg"])
    return replace(scene, image=np.ascontiguousarray(image), labels=labels)


def verify_scene(scene: Scene) -> list[str]:
    """Label-consistency problems of a scene (empty list when consistent)."""
    problems = []
    lab = scene.labels
    img = scene.image
    if img.min() < 0 or img.max() > 1:
        problems.append("image values outside [0, 1]")
    seg = lab.get("semseg")
    if seg is not None and "edge" in lab:
        if not np.array_equal(lab["edge"], boundary(seg)):
            problems.append("edge map differs from the semseg boundary")
    if "normal" in lab:
        norms = np.linalg.norm(lab["normal"], axis=-1)
        if np.max(np.abs(norms - 1.0)) > 1e-9:
            problems.append("normals are not unit length")
    if "depth" in lab:
        d = lab["depth"]
        if np.any(d <= 0):
            problems.append("non-positive depth")
        if seg is not None:
            for c in np.unique(seg):
                if np.unique(d[seg == c]).size != 1:
                    problems.append(f"depth not constant over class {int(c)}")
    if seg is not None and "saliency" in lab:
        if not np.array_equal(lab["saliency"], (seg > 0).astype(np.float64)):
            problems.append("saliency differs from the foreground mask")
    return problems


# on-disk datasets -------------------------------------------------------------

MANIFEST = "manifest.txt"


def write_dataset(path, seeds, height: int, width: int, tasks=TASKS) -> list[Path]:
    tasks = _check_tasks(tasks)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in seeds]
    written = []
    for index, seed in enumerate(seeds):
        scene = gen_scene(seed, height, width, tasks)
        fields = {"image": scene.image, **scene.labels}
        for name, arr in fields.items():
            f = path / f"{index}.{name}.pgtt"
            write_tensor(f, arr)
            written.append(f)
    lines = [
        f"count = {len(seeds)}",
        f"height = {height}",
        f"width = {width}",
        f"tasks = {','.join(tasks)}",
        f"num_classes = {NUM_CLASSES}",
        f"seeds = {','.join(str(s) for s in seeds)}",
    ]
    (path / MANIFEST).write_text("\n".join(lines) + "\n")
    return written


def read_manifest(path) -> dict:
    f = Path(path) / MANIFEST
    if not f.is_file():
        raise DataError(f"no dataset manifest at {f}")
    kv = {}
    for line in f.read_text().splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            kv[k.strip()] = v.strip()
    return {
        "count": int(kv["count"]),
        "height": int(kv["height"]),
        "width": int(kv["width"]),
        "tasks": tuple(t for t in kv["tasks"].split(",") if t),
        "num_classes": int(kv.get("num_classes", NUM_CLASSES)),
        "seeds": [int(s) for s in kv["seeds"].split(",") if s],
    }


def load_dataset(path) -> list[Scene]:
    man = read_manifest(path)
    path = Path(path)
    scenes = []
    for i in range(man["count"]):
        try:
            image = read_tensor(path / f"{i}.image.pgtt")
            labels = {t: read_tensor(path / f"{i}.{t}.pgtt") for t in man["tasks"]}
        except FileNotFoundError as exc:
            raise DataError(f"dataset {path} is missing {exc.filename}") from exc
        scenes.append(Scene(image=image, labels=labels))
    return scenes
