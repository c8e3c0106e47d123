"""Dataset ingestion (IDX, PGM), normalization, synthetic textures, checkpoints."""
from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from math import pi
from pathlib import Path

import numpy as np
from PIL import Image

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CHECKPOINT_MAGIC = b"BIQC"
CHECKPOINT_VERSION = 1


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) float64
    labels: np.ndarray  # (N,) int64 in {0, 1}
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.ndim != 3:
            raise ValueError(f"{self.name}: images must be (N, H, W), got {self.images.shape}")
        if self.images.shape[0] != self.labels.size:
            raise ValueError(f"{self.name}: {self.images.shape[0]} images but {self.labels.size} labels")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError(f"{self.name}: labels must be 0 or 1")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def resolution(self) -> tuple[int, int]:
        return self.images.shape[1:]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.name)


def _open(path: Path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse one IDX file of unsigned bytes (gzip is detected and unwrapped)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise ValueError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise ValueError(f"{path}: truncated IDX payload ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray, compress: bool | None = None) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError(f"IDX writer supports uint8 only, got {array.dtype}")
    payload = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def load_idx(images_path, labels_path, keep_labels=None, remap=None, name: str = "idx") -> Dataset:
    """Load an IDX image/label pair, optionally keeping two digits mapped to 0/1.

    ``keep_labels=(3, 5)`` keeps those digits and maps them to 0 and 1 in
    that order unless ``remap`` gives an explicit {digit: label} mapping.
    """
    images = read_idx(images_path, IDX_IMAGES)
    labels = read_idx(labels_path, IDX_LABELS)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images_path} has {images.shape[0]} images but {labels_path} has {labels.shape[0]} labels")
    if keep_labels is None:
        keep_labels = (0, 1)
    keep_labels = tuple(int(k) for k in keep_labels)
    if len(keep_labels) != 2 or keep_labels[0] == keep_labels[1]:
        raise ValueError(f"keep_labels must name two distinct classes, got {keep_labels}")
    remap = dict(remap) if remap else {keep_labels[0]: 0, keep_labels[1]: 1}
    if set(remap) != set(keep_labels) or sorted(remap.values()) != [0, 1]:
        raise ValueError(f"remap {remap} must send {keep_labels} onto {{0, 1}}")
    mask = np.isin(labels, keep_labels)
    mapped = np.array([remap[int(v)] for v in labels[mask]], dtype=np.int64)
    return Dataset(images[mask].astype(np.float64), mapped, name)


def read_pgm(path) -> np.ndarray:
    """Binary P5 PGM with maxval 255 -> float64 matrix in [0, 255]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0].decode(errors='replace')!r}, expected 'P5')")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise ValueError(f"{path}: maxval {maxval} unsupported, expected 255")
    pos += 1  # single whitespace byte before the raster
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise ValueError(f"{path}: truncated PGM raster ({len(data)} of {width * height} bytes)")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).astype(np.float64)


def write_pgm(path, image) -> None:
    pixels = np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {pixels.shape}")
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def load_pgm_dir(directory, class0_prefix: str, class1_prefix: str, name: str | None = None) -> Dataset:
    """Every *.pgm whose name starts with one of the prefixes, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    if class0_prefix.startswith(class1_prefix) or class1_prefix.startswith(class0_prefix):
        raise ValueError(f"prefixes {class0_prefix!r} and {class1_prefix!r} are ambiguous")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".pgm")
    images, labels, shapes = [], [], {}
    for p in files:
        if p.name.startswith(class0_prefix):
            label = 0
        elif p.name.startswith(class1_prefix):
            label = 1
        else:
            continue
        img = read_pgm(p)
        shapes.setdefault(img.shape, p.name)
        images.append(img)
        labels.append(label)
    if not images:
        raise ValueError(f"{directory}: no PGM files with prefix {class0_prefix!r} or {class1_prefix!r}")
    if len(shapes) > 1:
        found = ", ".join(f"{h}x{w} ({f})" for (h, w), f in shapes.items())
        raise ValueError(f"{directory}: mixed resolutions {found}")
    return Dataset(np.stack(images), np.array(labels), name or directory.name)


def normalize_minmax(image) -> np.ndarray:
    """Per-image affine map of [min, max] onto [-pi/2, pi/2]; constant images give zeros."""
    x = np.asarray(image, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return np.clip(-pi / 2 + (x - lo) / (hi - lo) * pi, -pi / 2, pi / 2)


def normalize_batch(images) -> np.ndarray:
    return np.stack([normalize_minmax(img) for img in np.asarray(images, dtype=np.float64)])


def resize(images, height: int, width: int) -> np.ndarray:
    """Area (box) resampling of a (N, H, W) stack of 0..255 images."""
    out = [
        np.asarray(Image.fromarray(img.astype(np.float32), mode="F").resize((width, height), Image.BOX), dtype=np.float64)
        for img in np.asarray(images)
    ]
    return np.stack(out)


def gen_texture(n_per_class: int, resolution: int, seed: int) -> Dataset:
    """Class 0: scattered filled discs (r 3-6). Class 1: filled squares (side 6-12).

    10-20 shapes of intensity 255 per image on a zero background, plus
    additive U[0, 20] noise, clipped to [0, 255]. Labels alternate 0, 1.
    """
    if resolution < 64:
        raise ValueError(f"texture resolution must be >= 64, got {resolution}")
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[:resolution, :resolution]
    images, labels = [], []
    for i in range(2 * n_per_class):
        label = i % 2
        img = np.zeros((resolution, resolution))
        for _ in range(rng.integers(10, 21)):
            if label == 0:
                r = rng.integers(3, 7)
                cy, cx = rng.integers(r, resolution - r, size=2)
                img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 255.0
            else:
                s = rng.integers(6, 13)
                y0, x0 = rng.integers(0, resolution - s + 1, size=2)
                img[y0 : y0 + s, x0 : x0 + s] = 255.0
        img = np.clip(img + rng.uniform(0.0, 20.0, size=img.shape), 0.0, 255.0)
        images.append(img)
        labels.append(label)
    return Dataset(np.stack(images), np.array(labels), f"texture{resolution}")


def split(dataset: Dataset, n_train: int, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded disjoint train/test subsets."""
    if n_train + n_test > len(dataset):
        raise ValueError(f"asked for {n_train}+{n_test} samples from a dataset of {len(dataset)}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train : n_train + n_test])


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict[str, object] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    """magic, u32 version, config text, then (name, rank, dims, float64 LE) per tensor."""
    lines = []
    for key in sorted(checkpoint.config):
        if "\n" in key or "=" in key:
            raise ValueError(f"config key {key!r} may not contain '=' or newlines")
        lines.append(f"{key}={json.dumps(checkpoint.config[key], sort_keys=True)}")
    out = [CHECKPOINT_MAGIC, struct.pack("<I", checkpoint.version), _pack_str("\n".join(lines))]
    for name, tensor in checkpoint.tensors.items():
        arr = np.asarray(tensor, dtype="<f8")
        out += [_pack_str(name), struct.pack("<I", arr.ndim), struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise ValueError(f"{self.path}: truncated checkpoint while reading {what}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def text(self, what: str) -> str:
        return self.take(self.u32(what), what).decode("utf-8")

    @property
    def done(self) -> bool:
        return self.pos >= len(self.raw)


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), path)
    magic = r.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version} is not supported (this build reads version {CHECKPOINT_VERSION})")
    config = {}
    for line in filter(None, r.text("config").split("\n")):
        key, _, value = line.partition("=")
        config[key] = json.loads(value)
    tensors = {}
    while not r.done:
        name = r.text("tensor name")
        what = f"tensor {name!r}"
        rank = r.u32(what)
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, what))
        count = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * count, what), dtype="<f8").reshape(dims).astype(np.float64)
    return Checkpoint(tensors, config, version)
