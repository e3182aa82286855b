"""Dataset plumbing: JSON-lines manifests, binary PGM images, the
augmentation protocol (per-class expansion factors, 90-degree rotations,
flips, bounded translation, 256x256 crop), batching, and a synthetic
micrograph generator for desk-scale experiments.

Synthetic compatible images are smooth low-contrast fields (homogeneous
single phase); incompatible ones add bright non-overlapping ellipses with
sharp boundaries (dispersed-phase islands in a matrix).
"""

import json
import logging
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, RecipeError, ShapeError, UsageError

log = logging.getLogger(__name__)

LABELS = ("compatible", "incompatible", "partially_compatible")
SPLITS = ("train", "test")
CROP_SIZE = 256
DEFAULT_FACTORS = {"compatible": 12, "incompatible": 3, "partially_compatible": 3}

# binary reduction used for training and metrics: partially compatible
# counts as incompatible; the three-way label stays in the manifest
BINARY_INDEX = {"compatible": 1, "incompatible": 0, "partially_compatible": 0}
INDEX_TO_LABEL = {1: "compatible", 0: "incompatible"}


@dataclass
class ManifestEntry:
    path: str
    label: str
    split: str
    scale_um_per_px: float = None
    source: str = None

    def validate(self, where=""):
        if not self.path:
            raise FormatError(f"{where}: empty image path")
        if self.label not in LABELS:
            raise FormatError(f"{where}: unknown label {self.label!r}; expected one of {LABELS}")
        if self.split not in SPLITS:
            raise FormatError(f"{where}: unknown split {self.split!r}; expected one of {SPLITS}")
        if self.scale_um_per_px is not None and not self.scale_um_per_px > 0:
            raise FormatError(f"{where}: scale_um_per_px must be > 0, got {self.scale_um_per_px}")
        return self

    def binary_index(self):
        return BINARY_INDEX[self.label]


def parse_manifest(path):
    """Read a JSON-lines manifest; unknown object fields are ignored."""
    entries = []
    fields = set(ManifestEntry.__dataclass_fields__)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{where}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise FormatError(f"{where}: expected a JSON object, got {type(obj).__name__}")
            missing = [k for k in ("path", "label", "split") if k not in obj]
            if missing:
                raise FormatError(f"{where}: missing required fields {missing}")
            kwargs = {k: v for k, v in obj.items() if k in fields}
            entries.append(ManifestEntry(**kwargs).validate(where))
    return entries


def write_manifest(entries, path):
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            obj = {k: v for k, v in asdict(e).items() if v is not None}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# PGM (binary, P5, maxval 255)


def _read_pgm_header(fh, path):
    def token():
        tok = b""
        while True:
            ch = fh.read(1)
            if not ch:
                raise FormatError(f"{path}: truncated PGM header")
            if ch == b"#":
                while ch not in (b"\n", b""):
                    ch = fh.read(1)
                continue
            if ch.isspace():
                if tok:
                    return tok
                continue
            tok += ch

    magic = token()
    if magic != b"P5":
        raise FormatError(f"{path}: unsupported magic {magic!r}; only binary PGM (P5) is read")
    width, height, maxval = (int(token()) for _ in range(3))
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: non-positive image extent {width}x{height}")
    return width, height


def load_pgm(path):
    """Decode a binary PGM into a (height, width) uint8 array."""
    with open(path, "rb") as fh:
        width, height = _read_pgm_header(fh, path)
        payload = fh.read(width * height + 1)
    if len(payload) < width * height:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {width * height}")
    return np.frombuffer(payload[:width * height], dtype=np.uint8).reshape(height, width).copy()


def pgm_size(path):
    """Header-only read: (width, height)."""
    with open(path, "rb") as fh:
        return _read_pgm_header(fh, path)


def save_pgm(path, img):
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ShapeError(f"save_pgm needs a 2-d uint8 array, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentRecipe:
    augment_index: int
    rotation: int          # degrees, multiple of 90
    flip_h: bool
    flip_v: bool
    translate_dx: int
    translate_dy: int
    crop_x: int
    crop_y: int


def _recipe_rng(seed, image_key, index):
    # reproducible per (dataset seed, image identity, variant index)
    return np.random.default_rng([seed, zlib.crc32(image_key.encode("utf-8")), index])


def make_recipe(index, width, height, seed, image_key, crop=CROP_SIZE):
    """Recipe ``index`` for an image; index 0 is identity + center crop."""
    if width < crop or height < crop:
        raise ShapeError(f"image {width}x{height} smaller than crop {crop}")
    if index == 0:
        return AugmentRecipe(0, 0, False, False, 0, 0,
                             (width - crop) // 2, (height - crop) // 2)
    rng = _recipe_rng(seed, image_key, index)
    rotation = int(rng.integers(0, 4)) * 90
    rw, rh = (height, width) if rotation in (90, 270) else (width, height)
    flip_h = bool(rng.integers(0, 2))
    flip_v = bool(rng.integers(0, 2))
    max_dx = rw // 10
    max_dy = rh // 10
    dx = int(rng.integers(-max_dx, max_dx + 1))
    dy = int(rng.integers(-max_dy, max_dy + 1))
    cx = int(rng.integers(0, rw - crop + 1))
    cy = int(rng.integers(0, rh - crop + 1))
    return AugmentRecipe(index, rotation, flip_h, flip_v, dx, dy, cx, cy)


def apply_recipe(img, recipe, crop=CROP_SIZE):
    """Rotate, flip, translate (edge pixels replicated), then crop."""
    out = img
    if recipe.rotation:
        out = np.rot90(out, recipe.rotation // 90)
    if recipe.flip_h:
        out = out[:, ::-1]
    if recipe.flip_v:
        out = out[::-1]
    if recipe.translate_dx or recipe.translate_dy:
        h, w = out.shape
        ys = np.clip(np.arange(h) - recipe.translate_dy, 0, h - 1)
        xs = np.clip(np.arange(w) - recipe.translate_dx, 0, w - 1)
        out = out[np.ix_(ys, xs)]
    h, w = out.shape
    if not (0 <= recipe.crop_x <= w - crop and 0 <= recipe.crop_y <= h - crop):
        raise RecipeError(
            f"crop origin ({recipe.crop_x}, {recipe.crop_y}) outside {w}x{h} image for crop {crop}")
    return np.ascontiguousarray(out[recipe.crop_y:recipe.crop_y + crop,
                                    recipe.crop_x:recipe.crop_x + crop])


def augment_expand(entries, factors=None, seed=0, crop=CROP_SIZE, size_of=pgm_size):
    """Expand train entries into (entry, recipe) pairs, factor(label) each.

    Images smaller than the crop are skipped with a warning and returned in
    the skip list. Test entries are rejected: augmentation never touches
    the test split.
    """
    factors = dict(DEFAULT_FACTORS if factors is None else factors)
    if any(f < 1 for f in factors.values()):
        raise UsageError(f"augmentation factors must be >= 1, got {factors}")
    expanded = []
    skipped = []
    for entry in entries:
        if entry.split != "train":
            raise UsageError(f"augment_expand got a {entry.split!r} entry: {entry.path}")
        if entry.label not in factors:
            raise UsageError(f"no augmentation factor for label {entry.label!r}")
        width, height = size_of(entry.path)
        if width < crop or height < crop:
            log.warning("skipping %s: %dx%d smaller than crop %d",
                        entry.path, width, height, crop)
            skipped.append(entry)
            continue
        for index in range(factors[entry.label]):
            expanded.append((entry, make_recipe(index, width, height, seed, entry.path, crop)))
    return expanded, skipped


def center_crop(img, crop=CROP_SIZE):
    h, w = img.shape
    if h < crop or w < crop:
        raise ShapeError(f"image {w}x{h} smaller than crop {crop}")
    y, x = (h - crop) // 2, (w - crop) // 2
    return np.ascontiguousarray(img[y:y + crop, x:x + crop])


# ---------------------------------------------------------------------------
# batching


def image_to_input(img, norm_mean=0.0, norm_std=1.0):
    """uint8 grayscale plane -> (3, H, W) float32 in [0,1], normalized,
    channel-replicated so ImageNet-shaped stems accept it."""
    x = img.astype(np.float32) / 255.0
    if norm_mean != 0.0 or norm_std != 1.0:
        x = (x - norm_mean) / norm_std
    return np.broadcast_to(x, (3,) + x.shape)


def batch_iter(items, batch_size, seed, epoch, transform=image_to_input):
    """Seeded permutation of (payload, label) pairs, stacked into batches.

    The order is a pure function of (seed XOR epoch); the final short batch
    is kept. With transform=None payloads are stacked as-is.
    """
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    n = len(items)
    order = np.random.default_rng(seed ^ epoch).permutation(n)
    for start in range(0, n, batch_size):
        chunk = [items[i] for i in order[start:start + batch_size]]
        arrays = [(transform(p) if transform is not None else p) for p, _ in chunk]
        labels = np.array([lab for _, lab in chunk], dtype=np.int64)
        yield np.stack(arrays).astype(np.float32, copy=False), labels


def load_split(entries, split, factors=None, seed=0, crop=CROP_SIZE):
    """Materialize (cropped uint8 image, binary label) items for one split.

    Train entries are expanded by the augmentation factors (pass factors of
    1 for no expansion); test entries get the identity center crop only.
    """
    chosen = [e for e in entries if e.split == split]
    items = []
    skipped = []
    if split == "train":
        expanded, skipped = augment_expand(chosen, factors, seed, crop)
        for entry, recipe in expanded:
            img = load_pgm(entry.path)
            items.append((apply_recipe(img, recipe, crop), entry.binary_index()))
    else:
        for entry in chosen:
            items.append((center_crop(load_pgm(entry.path), crop), entry.binary_index()))
    return items, skipped


# ---------------------------------------------------------------------------
# dataset statistics


@dataclass
class DatasetStats:
    raw_total: int
    train_total: int
    test_total: int
    train_incompatible_fraction: float
    test_incompatible_fraction: float
    augmented_train_total: int

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def dataset_stats(entries, augmented_train_total=None):
    train = [e for e in entries if e.split == "train"]
    test = [e for e in entries if e.split == "test"]

    def inc_frac(group):
        if not group:
            return 0.0
        return sum(1 for e in group if e.binary_index() == 0) / len(group)

    return DatasetStats(
        raw_total=len(entries),
        train_total=len(train),
        test_total=len(test),
        train_incompatible_fraction=inc_frac(train),
        test_incompatible_fraction=inc_frac(test),
        augmented_train_total=len(train) if augmented_train_total is None else augmented_train_total,
    )


# ---------------------------------------------------------------------------
# synthetic micrographs


def _bilinear_upsample(grid, size):
    """Interpolate a coarse noise grid to size x size (smooth field)."""
    gh, gw = grid.shape
    ys = np.linspace(0, gh - 1, size)
    xs = np.linspace(0, gw - 1, size)
    y0 = np.minimum(ys.astype(np.int64), gh - 2)
    x0 = np.minimum(xs.astype(np.int64), gw - 2)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = grid[np.ix_(y0, x0)]
    b = grid[np.ix_(y0, x0 + 1)]
    c = grid[np.ix_(y0 + 1, x0)]
    d = grid[np.ix_(y0 + 1, x0 + 1)]
    return (a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx
            + c * wy * (1 - wx) + d * wy * wx)


def _smooth_background(rng, size, amplitude):
    base = rng.uniform(95.0, 140.0)
    coarse = rng.standard_normal((size // 16 + 2, size // 16 + 2))
    field = base + amplitude * _bilinear_upsample(coarse, size)
    field += rng.standard_normal((size, size)) * 1.2  # faint sensor grain
    return field


def synth_compatible(rng, size):
    """Homogeneous phase: smooth long-wavelength texture, soft gradients."""
    return np.clip(_smooth_background(rng, size, amplitude=9.0), 0, 255).astype(np.uint8)


def synth_incompatible(rng, size, max_retries=200):
    """Sea-island morphology: bright sharp-edged ellipses on a smooth matrix.

    Ellipses are placed without overlap; if placement cannot be satisfied
    within the retry budget the island count is reduced with a warning.
    """
    field = _smooth_background(rng, size, amplitude=6.0)
    want = int(rng.integers(8, 19))
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    placed = []
    retries = 0
    while len(placed) < want and retries < max_retries:
        r = rng.uniform(size / 32.0, size / 11.0)
        ax = r * rng.uniform(0.7, 1.3)
        ay = r * rng.uniform(0.7, 1.3)
        theta = rng.uniform(0.0, np.pi)
        margin = max(ax, ay) + 2.0
        cx = rng.uniform(margin, size - margin)
        cy = rng.uniform(margin, size - margin)
        if any((cx - px) ** 2 + (cy - py) ** 2 < (margin + pm) ** 2
               for px, py, pm in placed):
            retries += 1
            continue
        brightness = rng.uniform(60.0, 105.0)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xs - cx) * ct + (ys - cy) * st
        v = -(xs - cx) * st + (ys - cy) * ct
        mask = (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
        field[mask] += brightness
        placed.append((cx, cy, margin))
    if len(placed) < want:
        log.warning("placed %d of %d islands before retry budget ran out", len(placed), want)
    return np.clip(field, 0, 255).astype(np.uint8)


def synth_generate(out_dir, n_compatible, n_incompatible, size=CROP_SIZE, seed=0,
                   test_fraction=0.2):
    """Write PGM micrographs, a manifest, and stats.json; fully seeded.

    The train/test split is stratified per label; test_fraction of each
    class (rounded) goes to the test split.
    """
    if size < CROP_SIZE:
        raise UsageError(f"size must be >= {CROP_SIZE}, got {size}")
    if not (0.0 <= test_fraction < 1.0):
        raise UsageError(f"test_fraction must be in [0, 1), got {test_fraction}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for label, count, maker in (("compatible", n_compatible, synth_compatible),
                                ("incompatible", n_incompatible, synth_incompatible)):
        n_test = int(round(count * test_fraction))
        for i in range(count):
            rng = np.random.default_rng([seed, zlib.crc32(label.encode()), i])
            img = maker(rng, size)
            name = f"{label}_{i:04d}.pgm"
            save_pgm(out / name, img)
            entries.append(ManifestEntry(
                path=str(out / name), label=label,
                split="test" if i < n_test else "train", source="synthetic"))
    write_manifest(entries, out / "manifest.jsonl")
    stats = dataset_stats(entries)
    (out / "stats.json").write_text(stats.to_json())
    return entries, stats
