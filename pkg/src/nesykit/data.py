"""Dataset ingestion and task synthesis.

Image pools come either from IDX files on disk (MNIST/EMNIST layout,
gzip-aware) or from the built-in synthetic renderer, which draws digit
and operator glyphs with random affine jitter and noise. Task builders
compose pools into labeled samples; every builder is deterministic per
seed and its labels can be re-checked against the task oracle with
verify_dataset.
"""

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

OP_NAMES = ("add", "sub", "mul", "div")


@dataclass
class LabeledImageSet:
    images: np.ndarray  # (N, H, W) floats in [0, 1]
    labels: np.ndarray  # (N,) ints

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("image/label counts differ")

    def __len__(self):
        return len(self.images)

    def indices_of(self, label):
        return np.flatnonzero(self.labels == label)


@dataclass
class TaskDataset:
    kind: str
    pool: LabeledImageSet
    inputs: np.ndarray  # image indices; layout depends on kind
    labels: np.ndarray
    op_pool: LabeledImageSet = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.inputs)

    def gather(self, rows):
        """Model inputs for the given sample rows, shaped per kind."""
        idx = self.inputs[rows]
        if self.kind in ("sum", "minus"):
            return [self.pool.images[idx[:, 0]], self.pool.images[idx[:, 1]]]
        if self.kind == "multiop":
            return [self.pool.images[idx[:, 0]],
                    self.op_pool.images[idx[:, 1]],
                    self.pool.images[idx[:, 2]]]
        # parity (B, L, H, W) and multidigit (B, 2, K, H, W)
        return self.pool.images[idx]


# ---------------------------------------------------------------------------
# IDX ingestion

def parse_idx(blob):
    """Parse one IDX payload: images -> (N,H,W) floats, labels -> (N,) ints."""
    if len(blob) < 4:
        raise ValueError("short read")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic == IMAGE_MAGIC:
        if len(blob) < 16:
            raise ValueError("short read")
        n, rows, cols = struct.unpack(">III", blob[4:16])
        need = 16 + n * rows * cols
        if len(blob) < need:
            raise ValueError("short read")
        pixels = np.frombuffer(blob, dtype=np.uint8, count=n * rows * cols, offset=16)
        return pixels.reshape(n, rows, cols).astype(np.float64) / 255.0
    if magic == LABEL_MAGIC:
        if len(blob) < 8:
            raise ValueError("short read")
        (n,) = struct.unpack(">I", blob[4:8])
        if len(blob) < 8 + n:
            raise ValueError("short read")
        return np.frombuffer(blob, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    raise ValueError("unrecognized IDX magic")


def load_idx_file(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def _find_idx(directory, stem):
    directory = Path(directory)
    # both historical name layouts, optionally gzipped
    matches = sorted(p for p in directory.glob(f"{stem}*ubyte*")
                     if p.name.endswith(("ubyte", "ubyte.gz")))
    if not matches:
        raise FileNotFoundError(f"no IDX file matching {stem!r} under {directory}")
    return matches[0]


def load_mnist(directory):
    """Load the standard MNIST train/test splits from a directory."""
    train = LabeledImageSet(
        images=load_idx_file(_find_idx(directory, "train-images")),
        labels=load_idx_file(_find_idx(directory, "train-labels")))
    test = LabeledImageSet(
        images=load_idx_file(_find_idx(directory, "t10k-images")),
        labels=load_idx_file(_find_idx(directory, "t10k-labels")))
    return train, test


def load_emnist_ops(directory, per_class=1000):
    """EMNIST letters A-D as the four operator glyph classes.

    EMNIST images are stored transposed relative to MNIST; fixed on load.
    """
    images = load_idx_file(_find_idx(directory, "emnist-letters-train-images"))
    labels = load_idx_file(_find_idx(directory, "emnist-letters-train-labels"))
    images = images.transpose(0, 2, 1)
    keep = (labels >= 1) & (labels <= 4)
    images, labels = images[keep], labels[keep] - 1
    out_img, out_lab = [], []
    for cls in range(4):
        idx = np.flatnonzero(labels == cls)[:per_class]
        out_img.append(images[idx])
        out_lab.append(labels[idx])
    return LabeledImageSet(np.concatenate(out_img), np.concatenate(out_lab))


# ---------------------------------------------------------------------------
# synthetic glyph corpus (fallback when no IDX files are configured)

_GLYPH_CACHE = {}


def _base_glyph(char, size):
    """Render one character as a centered 28x28 float image."""
    key = (char, size)
    if key not in _GLYPH_CACHE:
        from PIL import Image, ImageDraw, ImageFont

        font = ImageFont.load_default(size=size)
        img = Image.new("L", (56, 56), 0)
        draw = ImageDraw.Draw(img)
        left, top, right, bottom = draw.textbbox((0, 0), char, font=font)
        draw.text((28 - (left + right) / 2, 28 - (top + bottom) / 2), char,
                  fill=255, font=font)
        arr = np.asarray(img, dtype=np.float64) / 255.0
        _GLYPH_CACHE[key] = arr[14:42, 14:42]
    return _GLYPH_CACHE[key]


def _jitter(base, rng):
    from scipy import ndimage

    img = ndimage.rotate(base, rng.uniform(-12, 12), reshape=False, order=1)
    dx, dy = rng.integers(-2, 3, size=2)
    img = np.roll(img, (dy, dx), axis=(0, 1))
    img *= rng.uniform(0.8, 1.0)
    img += rng.normal(0.0, 0.06, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_digits(count, seed, classes=10):
    """Synthetic stand-in for a handwritten-digit pool."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=count)
    sizes = rng.integers(17, 24, size=count)
    images = np.empty((count, 28, 28))
    for i in range(count):
        images[i] = _jitter(_base_glyph(str(labels[i]), int(sizes[i])), rng)
    return LabeledImageSet(images, labels)


def synth_ops(count, seed):
    """Synthetic operator glyphs (letter shapes A-D, labels 0-3)."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, size=count)
    sizes = rng.integers(17, 24, size=count)
    images = np.empty((count, 28, 28))
    for i in range(count):
        images[i] = _jitter(_base_glyph("ABCD"[labels[i]], int(sizes[i])), rng)
    return LabeledImageSet(images, labels)


def cached_pool(kind, count, seed, cache_dir=None):
    """Synthetic pool with an optional on-disk cache (checkpoint envelope)."""
    maker = {"digits": synth_digits, "ops": synth_ops}[kind]
    if cache_dir is None:
        return maker(count, seed)
    from .checkpoint import load_checkpoint, save_checkpoint

    path = Path(cache_dir) / f"{kind}-{count}-{seed}.pool"
    if path.exists():
        blob = load_checkpoint(path)
        return LabeledImageSet(blob["images"], blob["labels"].astype(np.int64))
    pool = maker(count, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, [("images", pool.images),
                           ("labels", pool.labels.astype(np.float64))])
    return pool


# ---------------------------------------------------------------------------
# index sampling helpers

class _IndexSampler:
    """Without replacement until the pool is exhausted, then with."""

    def __init__(self, pool_size, rng):
        self.rng = rng
        self.queue = list(rng.permutation(pool_size))
        self.pool_size = pool_size

    def draw(self, n):
        out = []
        while len(out) < n:
            if self.queue:
                out.append(self.queue.pop())
            else:
                out.extend(self.rng.integers(0, self.pool_size,
                                             size=n - len(out)).tolist())
        return np.array(out[:n])


def _pick_of_label(pool, label, rng, size=None):
    idx = pool.indices_of(label)
    if len(idx) == 0:
        raise ValueError(f"pool has no images labeled {label}")
    return rng.choice(idx, size=size)


# ---------------------------------------------------------------------------
# task builders

def build_sum_dataset(pool, pair_count, seed):
    """Pairs of digit images labeled with the sum (0..18)."""
    rng = np.random.default_rng(seed)
    sampler = _IndexSampler(len(pool), rng)
    idx = sampler.draw(2 * pair_count).reshape(pair_count, 2)
    labels = pool.labels[idx[:, 0]] + pool.labels[idx[:, 1]]
    return TaskDataset("sum", pool, idx, labels)


def build_minus_dataset(pool, seed):
    """Exactly one sample per ordered digit pair; label = d1 - d2 + 9."""
    rng = np.random.default_rng(seed)
    inputs, labels = [], []
    for d1 in range(10):
        for d2 in range(10):
            inputs.append([_pick_of_label(pool, d1, rng), _pick_of_label(pool, d2, rng)])
            labels.append(d1 - d2 + 9)
    return TaskDataset("minus", pool, np.array(inputs), np.array(labels))


def build_minus_pairs(pool, pair_count, seed):
    """Freely sampled digit pairs labeled d1 - d2 + 9 (evaluation sets)."""
    rng = np.random.default_rng(seed)
    sampler = _IndexSampler(len(pool), rng)
    idx = sampler.draw(2 * pair_count).reshape(pair_count, 2)
    labels = pool.labels[idx[:, 0]] - pool.labels[idx[:, 1]] + 9
    return TaskDataset("minus", pool, idx, labels)


def build_parity_dataset(pool, seq_len, count, seed):
    """Sequences of 0/1 images labeled with the XOR fold of their bits."""
    rng = np.random.default_rng(seed)
    binary = np.flatnonzero(pool.labels <= 1)
    if len(binary) == 0:
        raise ValueError("pool has no images labeled 0 or 1")
    idx = rng.choice(binary, size=(count, seq_len)) if seq_len > 0 else \
        np.empty((count, 0), dtype=np.int64)
    labels = np.bitwise_xor.reduce(pool.labels[idx], axis=1) if seq_len > 0 else \
        np.zeros(count, dtype=np.int64)
    return TaskDataset("parity", pool, idx, labels, meta={"seq_len": seq_len})


def _zero_pads(pool, rng, size):
    return _pick_of_label(pool, 0, rng, size=size)


def build_multidigit_dataset(pool, num_digits, phase, seed, count=20000):
    """Curriculum phases and eval sets for the multi-digit sum task.

    Phase 1: single digits, no padding, label = (a + b) mod 10 as a
    1-digit list (the carry stays unsupervised). Phase 2 and "eval":
    N-digit numbers padded with a most-significant zero image to N+1
    positions; labels are the full N+1-digit sum including leading
    zeros. Digit lists are most-significant first.
    """
    rng = np.random.default_rng(seed)
    if phase == 1:
        if num_digits != 1:
            raise ValueError("phase 1 is single-digit only")
        idx = rng.integers(0, len(pool), size=(count, 2, 1))
        a = pool.labels[idx[:, 0, 0]]
        b = pool.labels[idx[:, 1, 0]]
        labels = ((a + b) % 10)[:, None]
        return TaskDataset("multidigit", pool, idx, labels,
                           meta={"phase": 1, "digits": 1})
    if phase == 2 and num_digits != 2:
        raise ValueError("phase 2 is two-digit only")
    if phase not in (2, "eval"):
        raise ValueError(f"unknown curriculum phase: {phase}")
    width = num_digits + 1
    idx = np.empty((count, 2, width), dtype=np.int64)
    idx[:, :, 0] = _zero_pads(pool, rng, (count, 2))
    idx[:, :, 1:] = rng.integers(0, len(pool), size=(count, 2, num_digits))
    digits = pool.labels[idx]  # (count, 2, width)
    place = 10 ** np.arange(width - 1, -1, -1, dtype=object)
    totals = (digits * place).sum(axis=2)
    sums = totals[:, 0] + totals[:, 1]
    labels = np.empty((count, width), dtype=np.int64)
    for pos in range(width):
        labels[:, width - 1 - pos] = [(int(s) // 10 ** pos) % 10 for s in sums]
    return TaskDataset("multidigit", pool, idx, labels,
                       meta={"phase": phase, "digits": num_digits})


def apply_op(op, d1, d2):
    if op == 0:
        return d1 + d2
    if op == 1:
        return d1 - d2
    if op == 2:
        return d1 * d2
    if op == 3:
        return d1 // d2
    raise ValueError(f"unknown operator {op}")


def build_multiop_dataset(pool, op_pool, count, seed):
    """(digit, operator glyph, digit) triples; subtraction never goes
    negative and division is integer with a positive divisor."""
    rng = np.random.default_rng(seed)
    inputs = np.empty((count, 3), dtype=np.int64)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        op = int(rng.integers(0, 4))
        d1 = int(rng.integers(0, 10))
        if op == 1:
            d2 = int(rng.integers(0, d1 + 1))
        elif op == 3:
            d2 = int(rng.integers(1, 10))
        else:
            d2 = int(rng.integers(0, 10))
        inputs[i, 0] = _pick_of_label(pool, d1, rng)
        inputs[i, 1] = _pick_of_label(op_pool, op, rng)
        inputs[i, 2] = _pick_of_label(pool, d2, rng)
        labels[i] = apply_op(op, d1, d2)
    return TaskDataset("multiop", pool, inputs, labels, op_pool=op_pool)


# ---------------------------------------------------------------------------
# oracle re-check

def verify_dataset(ds):
    """Re-derive every label from the constituent image labels; raises on
    any mismatch or constraint violation."""
    pool = ds.pool
    if ds.kind == "sum":
        expect = pool.labels[ds.inputs[:, 0]] + pool.labels[ds.inputs[:, 1]]
    elif ds.kind == "minus":
        expect = pool.labels[ds.inputs[:, 0]] - pool.labels[ds.inputs[:, 1]] + 9
    elif ds.kind == "parity":
        if ds.inputs.shape[1] == 0:
            expect = np.zeros(len(ds), dtype=np.int64)
        else:
            bits = pool.labels[ds.inputs]
            if np.any(bits > 1):
                raise ValueError("parity sequence contains a non-binary image")
            expect = np.bitwise_xor.reduce(bits, axis=1)
    elif ds.kind == "multidigit":
        digits = pool.labels[ds.inputs]
        width = ds.labels.shape[1]
        if ds.meta.get("phase") == 1:
            expect = ((digits[:, 0, 0] + digits[:, 1, 0]) % 10)[:, None]
        else:
            place = 10 ** np.arange(digits.shape[2] - 1, -1, -1, dtype=object)
            totals = (digits * place).sum(axis=2)
            sums = totals[:, 0] + totals[:, 1]
            expect = np.empty_like(ds.labels)
            for pos in range(width):
                expect[:, width - 1 - pos] = [(int(s) // 10 ** pos) % 10 for s in sums]
            if np.any(sums >= 10 ** width):
                raise ValueError("sum overflows the padded output width")
    elif ds.kind == "multiop":
        d1 = pool.labels[ds.inputs[:, 0]]
        op = ds.op_pool.labels[ds.inputs[:, 1]]
        d2 = pool.labels[ds.inputs[:, 2]]
        if np.any((op == 1) & (d2 > d1)):
            raise ValueError("subtraction sample with negative result")
        if np.any((op == 3) & (d2 == 0)):
            raise ValueError("division sample with zero divisor")
        expect = np.array([apply_op(int(o), int(a), int(b))
                           for o, a, b in zip(op, d1, d2)])
    else:
        raise ValueError(f"unknown task kind {ds.kind!r}")
    if not np.array_equal(expect, ds.labels):
        raise ValueError(f"{ds.kind} dataset labels disagree with the oracle")
    return True
