"""Datasets, loaders, deterministic labeled/unlabeled/test splits and the
synthetic Gaussian-cluster benchmark.

Labels are 0-based class indices. The unlabeled split carries no labels;
its ground truth lives in :class:`SealedLabels`, which only answers
"how many of these predictions are right" and is meant for metrics.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Malformed file content."""


class ManifestError(ValueError):
    """A manifest references a missing file or an invalid label."""


class SpecError(ValueError):
    """A split request cannot be satisfied by the dataset."""


class AuditError(LookupError):
    """Sealed truth was queried for an index it does not hold."""


@dataclass
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    n_classes: int
    tag: str = "full"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise ValueError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.samples.shape[1:])

    def subset(self, idx, tag: str) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.samples[idx], self.labels[idx], self.n_classes, tag)


@dataclass
class UnlabeledSet:
    samples: np.ndarray
    source_index: np.ndarray  # positions in the parent dataset

    def __len__(self):
        return len(self.samples)


class SealedLabels:
    """Ground truth for the unlabeled split, readable only as a correctness count."""

    __slots__ = ("_count", "_size")

    def __init__(self, labels):
        truth = np.array(labels, dtype=np.int64)
        truth.setflags(write=False)

        def count(positions, predicted) -> int:
            positions = np.asarray(positions, dtype=np.int64)
            predicted = np.asarray(predicted, dtype=np.int64)
            if len(positions) != len(predicted):
                raise AuditError("positions and predictions differ in length")
            if len(positions) and (positions.min() < 0 or positions.max() >= len(truth)):
                bad = positions[(positions < 0) | (positions >= len(truth))][0]
                raise AuditError(f"no sealed truth for unlabeled index {int(bad)}")
            return int(np.sum(truth[positions] == predicted))

        self._count = count
        self._size = len(truth)

    def __len__(self):
        return self._size

    def count_correct(self, positions, predicted) -> int:
        return self._count(positions, predicted)


@dataclass(frozen=True)
class SplitSpec:
    n_labeled: int
    seed: int = 0
    balanced: bool = True
    test_fraction: float = 0.1


@dataclass
class Split:
    labeled: Dataset
    unlabeled: UnlabeledSet
    test: Dataset
    sealed: SealedLabels
    labeled_index: np.ndarray
    unlabeled_index: np.ndarray
    test_index: np.ndarray


def split(dataset: Dataset, spec: SplitSpec) -> Split:
    """Deterministic three-way split; identical (dataset, spec) gives identical indices."""
    n = len(dataset)
    if not 0.0 <= spec.test_fraction < 1.0:
        raise SpecError(f"test fraction must lie in [0, 1), got {spec.test_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5EED]))
    order = rng.permutation(n)
    n_test = int(round(spec.test_fraction * n))
    test_idx, train_idx = order[:n_test], order[n_test:]
    if spec.n_labeled < 0 or spec.n_labeled > len(train_idx):
        raise SpecError(f"n_labeled={spec.n_labeled} exceeds the {len(train_idx)} training samples")
    if spec.balanced:
        c = dataset.n_classes
        if spec.n_labeled % c:
            raise SpecError(f"class-balanced n_labeled={spec.n_labeled} is not divisible by C={c}")
        per = spec.n_labeled // c
        train_labels = dataset.labels[train_idx]
        chosen = []
        for k in range(c):
            members = train_idx[train_labels == k]
            if len(members) < per:
                raise SpecError(f"class {k} has {len(members)} training samples, need {per}")
            chosen.append(members[:per])
        lab_idx = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    else:
        lab_idx = train_idx[: spec.n_labeled]
    unl_idx = np.setdiff1d(train_idx, lab_idx)
    lab_idx, test_idx = np.sort(lab_idx), np.sort(test_idx)
    return Split(
        labeled=dataset.subset(lab_idx, "labeled"),
        unlabeled=UnlabeledSet(dataset.samples[unl_idx], unl_idx),
        test=dataset.subset(test_idx, "test"),
        sealed=SealedLabels(dataset.labels[unl_idx]),
        labeled_index=lab_idx,
        unlabeled_index=unl_idx,
        test_index=test_idx,
    )


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------


def synth_benchmark(
    seed: int = 0,
    n_classes: int = 4,
    per_class: int = 600,
    dim: int = 16,
    difficulty: float = 0.6,
    separation: float = 2.0,
) -> Dataset:
    """Anisotropic Gaussian clusters with class-dependent spread.

    Class means sit at distance ``separation / difficulty`` from the origin
    along random directions. Each class gets a random rotation and axis
    scales multiplied by a class spread factor, so some classes overlap
    their neighbours more than others. Features are standardized.
    """
    if not 0.0 < difficulty <= 1.0:
        raise ValueError(f"difficulty must lie in (0, 1], got {difficulty}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    directions = rng.normal(size=(n_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = directions * (separation / difficulty)
    spreads = np.linspace(0.6, 1.4, n_classes)[rng.permutation(n_classes)]
    xs, ys = [], []
    for k in range(n_classes):
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        axes = np.linspace(0.5, 1.5, dim) * spreads[k]
        z = rng.normal(size=(per_class, dim)) * axes
        xs.append(means[k] + z @ q.T)
        ys.append(np.full(per_class, k))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(len(y))
    x, y = x[perm], y[perm]
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    return Dataset(x, y, n_classes, "synthetic")


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.newbyteorder("="): k for k, v in _IDX_TYPES.items()}


def write_idx(path, array: np.ndarray) -> None:
    """Write ``array`` as an idx file: 2 zero bytes, type code, ndim, big-endian extents, payload."""
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise FormatError(f"dtype {array.dtype} has no idx type code")
    head = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(head + array.astype(_IDX_TYPES[code]).tobytes())


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated magic at byte {len(raw)}")
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"{path}: bad magic at byte 0")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise FormatError(f"{path}: unknown type code 0x{code:02x} at byte 2")
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise FormatError(f"{path}: truncated extents at byte {len(raw)}")
    shape = struct.unpack(f">{ndim}I", raw[4:end])
    dtype = _IDX_TYPES[code]
    need = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) - end != need:
        raise FormatError(f"{path}: payload has {len(raw) - end} bytes, header implies {need} (starting at byte {end})")
    return np.frombuffer(raw, dtype=dtype, offset=end).reshape(shape).astype(dtype.newbyteorder("="))


def _to_unit(arr: np.ndarray) -> np.ndarray:
    if arr.dtype.kind == "u" and arr.dtype.itemsize == 1:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def _checked_labels(labels, n_classes, where) -> tuple[np.ndarray, int]:
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and labels.min() < 0:
        raise ManifestError(f"{where}: negative label {int(labels.min())}")
    c = int(labels.max()) + 1 if n_classes is None else n_classes
    if len(labels) and labels.max() >= c:
        raise ManifestError(f"{where}: label {int(labels.max())} outside 0..{c - 1}")
    return labels, max(c, 2)


def write_idx_dataset(dataset: Dataset, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_idx(directory / "samples.idx", dataset.samples)
    write_idx(directory / "labels.idx", dataset.labels.astype(np.int32))
    return directory


def _standardize(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    return (x - mu) / np.where(sd > 0, sd, 1.0)


def _load_text(path: Path, n_classes, standardize: bool) -> Dataset:
    raw = path.read_bytes()
    rows, labels = [], []
    offset = 0
    width = None
    for line in raw.splitlines(keepends=True):
        text = line.decode("utf-8", errors="replace").strip()
        here, offset = offset, offset + len(line)
        if not text or text.startswith("#"):
            continue
        fields = [f for f in (text.split(",") if "," in text else text.split())]
        try:
            values = [float(f) for f in fields[:-1]]
            label = int(fields[-1])
        except ValueError:
            raise FormatError(f"{path}: non-numeric field in record at byte {here}") from None
        if width is None:
            width = len(values)
        if len(values) != width or width == 0:
            raise FormatError(f"{path}: record at byte {here} has {len(values)} features, expected {width}")
        rows.append(values)
        labels.append(label)
    if not rows:
        raise FormatError(f"{path}: no records")
    x = np.array(rows, dtype=np.float64)
    if standardize:
        x = _standardize(x)
    y, c = _checked_labels(labels, n_classes, str(path))
    return Dataset(x, y, c, path.stem)


def read_netpbm(path) -> np.ndarray:
    """Minimal PGM/PPM reader (P2, P3, P5, P6); returns (H, W) or (3, H, W) in [0, 1]."""
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
            raise FormatError(f"{path}: truncated header at byte {pos}")
        tokens.append(raw[start:pos])
    magic = tokens[0]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported raster magic {magic!r} at byte 0")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: bad header field before byte {pos}") from None
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * channels
    if magic in (b"P2", b"P3"):
        vals = np.array(raw[pos:].split()[:count], dtype=np.float64)
    else:
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        vals = np.frombuffer(raw, dtype=dtype, count=min(count, (len(raw) - pos) // dtype.itemsize), offset=pos)
        vals = vals.astype(np.float64)
    if vals.size != count:
        raise FormatError(f"{path}: pixel payload has {vals.size} values, expected {count} (from byte {pos})")
    img = vals.reshape(h, w, channels) / maxval
    return img[..., 0] if channels == 1 else np.ascontiguousarray(img.transpose(2, 0, 1))


def write_pgm(path, img: np.ndarray) -> None:
    img = np.clip(np.round(np.asarray(img) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def _load_raster(path: Path, n_classes) -> Dataset:
    manifest = path / "manifest.csv" if path.is_dir() else path
    root = manifest.parent
    if not manifest.exists():
        raise ManifestError(f"manifest not found: {manifest}")
    images, labels = [], []
    text = manifest.read_text()
    for lineno, record in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not record or record[0].startswith("#"):
            continue
        if len(record) != 2:
            raise ManifestError(f"{manifest}:{lineno}: expected 'path,label'")
        rel, lab = record[0].strip(), record[1].strip()
        file = root / rel
        if not file.exists():
            raise ManifestError(f"{manifest}:{lineno}: missing file {rel}")
        try:
            labels.append(int(lab))
        except ValueError:
            raise ManifestError(f"{manifest}:{lineno}: unknown label {lab!r}") from None
        img = np.load(file) if file.suffix == ".npy" else read_netpbm(file)
        if images and img.shape != images[0].shape:
            raise FormatError(f"{file}: shape {img.shape} differs from {images[0].shape}")
        images.append(np.asarray(img, dtype=np.float64))
    if not images:
        raise ManifestError(f"{manifest}: no records")
    y, c = _checked_labels(labels, n_classes, str(manifest))
    return Dataset(np.stack(images), y, c, root.name)


def _load_idx(path: Path, n_classes) -> Dataset:
    samples = path / "samples.idx"
    labels = path / "labels.idx"
    for f in (samples, labels):
        if not f.exists():
            raise ManifestError(f"missing file {f}")
    x = _to_unit(read_idx(samples))
    y_raw = read_idx(labels)
    if y_raw.ndim != 1 or len(y_raw) != len(x):
        raise FormatError(f"{labels}: expected {len(x)} labels, got shape {y_raw.shape}")
    y, c = _checked_labels(y_raw, n_classes, str(labels))
    return Dataset(x, y, c, path.name)


def load_dataset(path, fmt: str, n_classes: int | None = None, standardize: bool = True) -> Dataset:
    """Load ``fmt`` in {"idx", "raster", "text"}.

    ``idx`` expects a directory holding ``samples.idx`` and ``labels.idx``;
    ``raster`` a directory (or manifest path) with ``manifest.csv`` rows
    ``relative_path,label``; ``text`` a delimited file whose last column is
    the integer label.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt == "text":
        return _load_text(path, n_classes, standardize)
    if fmt == "raster":
        return _load_raster(path, n_classes)
    if fmt == "idx":
        return _load_idx(path, n_classes)
    raise ValueError(f"unknown dataset format {fmt!r}")
