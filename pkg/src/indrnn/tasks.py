"""Data for the three experiments: the adding problem, pixel-by-pixel digit
classification (IDX files or the bundled 8x8 set) and byte-level language
modelling."""
import gzip
import struct
import sysconfig
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, FormatError, ShapeError


@dataclass
class AddingBatch:
    X: np.ndarray  # T x B x 2: values, indicator
    y: np.ndarray  # B


def gen_adding_batch(rng, T, B):
    """One marker in each half of the sequence; target is the sum of the marked values."""
    if T < 2:
        raise ConfigError(f"adding problem needs T >= 2, got {T}", "T")
    half = T // 2
    values = rng.uniform(0.0, 1.0, size=(T, B))
    first = rng.integers(half, (B,))
    second = half + rng.integers(T - half, (B,))
    marks = np.zeros((T, B))
    cols = np.arange(B)
    marks[first, cols] = 1.0
    marks[second, cols] = 1.0
    X = np.stack([values, marks], axis=-1)
    return AddingBatch(X=X, y=values[first, cols] + values[second, cols])


# IDX ----------------------------------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(raw):
    """Decode an IDX byte string into an ndarray (big-endian header and payload)."""
    if len(raw) < 4:
        raise FormatError("truncated IDX header", len(raw))
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in _IDX_TYPES:
        raise FormatError(f"bad IDX magic 0x{int.from_bytes(raw[:4], 'big'):08X}", 0)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError("truncated IDX dimension table", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    dtype = np.dtype(_IDX_TYPES[code])
    need = int(np.prod(dims)) * dtype.itemsize
    have = len(raw) - header_end
    if have < need:
        raise FormatError(f"IDX payload has {have} bytes, dims {dims} need {need}", len(raw))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after IDX payload", header_end + need)
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims)


def read_idx(path):
    return parse_idx(_read_bytes(path))


def idx_magic(path):
    return int.from_bytes(_read_bytes(path)[:4], "big")


def write_idx(path, array, compress=None):
    array = np.ascontiguousarray(array)
    codes = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}
    code = codes.get(array.dtype.newbyteorder("="))
    if code is None:
        raise ConfigError(f"dtype {array.dtype} has no IDX code")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = header + array.astype(_IDX_TYPES[code]).tobytes()
    path = Path(path)
    if compress if compress is not None else path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


@dataclass
class PixelDataset:
    images: np.ndarray  # count x H x W uint8
    labels: np.ndarray
    permutation: Optional[np.ndarray] = None

    def __len__(self):
        return self.images.shape[0]

    @property
    def seq_len(self):
        return self.images.shape[1] * self.images.shape[2]

    def subset(self, idx):
        return PixelDataset(self.images[idx], self.labels[idx], self.permutation)

    def with_permutation(self, permutation):
        return PixelDataset(self.images, self.labels, permutation)


def load_idx(images_path, labels_path, num_classes=10):
    raw_images = _read_bytes(images_path)
    raw_labels = _read_bytes(labels_path)
    if raw_images[:4] != IMAGE_MAGIC.to_bytes(4, "big"):
        raise FormatError(f"{images_path}: not an unsigned-byte rank-3 image file", 0)
    if raw_labels[:4] != LABEL_MAGIC.to_bytes(4, "big"):
        raise FormatError(f"{labels_path}: not an unsigned-byte rank-1 label file", 0)
    images = parse_idx(raw_images)
    labels = parse_idx(raw_labels)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", 4)
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"label {labels.max()} >= {num_classes}", 8 + int(np.argmax(labels)))
    return PixelDataset(images=np.array(images), labels=np.array(labels, dtype=np.int64))


def bundled_digits(split="train"):
    """The bundled 8x8 handwritten-digit subset (pixel values rescaled to 0..255)."""
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    root = resources.files("indrnn") / "data"
    with resources.as_file(root / f"digits8-{split}-images.idx.gz") as img, \
            resources.as_file(root / f"digits8-{split}-labels.idx.gz") as lab:
        return load_idx(img, lab)


def make_permutation(rng, n):
    """Fisher-Yates shuffle of 0..n-1."""
    if n < 1:
        raise ConfigError("permutation length must be >= 1")
    perm = np.arange(n)
    draws = rng.random(max(n - 1, 1))
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = min(int(draws[k] * (i + 1)), i)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def pixelize(dataset, index):
    """Row-major pixel scan scaled to [0, 1]. Returns T x B x 1 (B = 1 for an int index)."""
    idx = np.atleast_1d(index)
    if idx.size and (idx.min() < -len(dataset) or idx.max() >= len(dataset)):
        raise ShapeError(f"index out of range for {len(dataset)} images")
    flat = dataset.images[idx].reshape(idx.size, -1).astype(np.float64) / 255.0
    if dataset.permutation is not None:
        flat = flat[:, dataset.permutation]
    return flat.T[:, :, None]


def depixelize(seq, shape, permutation=None):
    """Inverse of :func:`pixelize` back to uint8 images."""
    flat = np.asarray(seq)[:, :, 0].T
    if permutation is not None:
        out = np.empty_like(flat)
        out[:, permutation] = flat
        flat = out
    return np.rint(flat * 255.0).astype(np.uint8).reshape((-1,) + tuple(shape))


def split_validation(dataset, fraction, rng):
    """Hold out ``fraction`` of a training set (random but seed-fixed)."""
    perm = make_permutation(rng, len(dataset))
    n_valid = int(round(fraction * len(dataset)))
    return dataset.subset(np.sort(perm[n_valid:])), dataset.subset(np.sort(perm[:n_valid]))


# Byte corpora ---------------------------------------------------------------

@dataclass
class CharCorpus:
    ids: np.ndarray
    vocab: list       # id -> byte value; the UNK id is len(vocab)
    splits: tuple     # (train_start, valid_start, test_start)

    @property
    def unk_id(self):
        return len(self.vocab)

    @property
    def vocab_size(self):
        return len(self.vocab) + 1

    def split(self, name):
        a, b, c = self.splits
        bounds = {"train": (a, b), "valid": (b, c), "test": (c, self.ids.size)}
        lo, hi = bounds[name]
        return self.ids[lo:hi]


def corpus_from_bytes(data, split_fractions=(0.9, 0.05, 0.05)):
    data = np.frombuffer(bytes(data), dtype=np.uint8)
    if data.size == 0:
        raise ConfigError("corpus is empty")
    fr = np.asarray(split_fractions, dtype=np.float64)
    if fr.size != 3 or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negatives summing to 1, got {split_fractions}")
    n = data.size
    valid_start = int(np.floor(fr[0] * n + 1e-9))
    test_start = int(np.floor((fr[0] + fr[1]) * n + 1e-9))
    vocab = sorted(set(data[:valid_start].tolist()))
    lut = np.full(256, len(vocab), dtype=np.int64)
    lut[vocab] = np.arange(len(vocab))
    return CharCorpus(ids=lut[data], vocab=vocab, splits=(0, valid_start, test_start))


def load_corpus(path, split_fractions=(0.9, 0.05, 0.05)):
    return corpus_from_bytes(Path(path).read_bytes(), split_fractions)


def stdlib_corpus(min_bytes=1 << 20, root=None):
    """A deterministic byte corpus: the interpreter's standard-library sources,
    sorted by path and concatenated until at least ``min_bytes`` are collected."""
    root = Path(root or sysconfig.get_paths()["stdlib"])
    out, total = [], 0
    for path in sorted(root.rglob("*.py")):
        if "site-packages" in path.parts or "test" in path.parts:
            continue
        data = path.read_bytes()
        out.append(data)
        total += len(data)
        if total >= min_bytes:
            return b"".join(out)
    raise ConfigError(f"only {total} bytes of source under {root}, need {min_bytes}")


def lm_batch_count(length, T, B):
    return (length // B - 1) // T


def batch_lm(stream, T, B, offset=0):
    """Yield (inputs, targets), each T x B, from B contiguous parallel streams.

    Consecutive batches continue each stream, so hidden state can be carried
    over between them. ``offset`` drops that many leading tokens first.
    """
    stream = np.asarray(stream)[offset:]
    if stream.size < B * (T + 1):
        raise ConfigError(f"stream of {stream.size} tokens too short for B={B}, T={T}")
    per = stream.size // B
    lanes = stream[: per * B].reshape(B, per)
    for i in range(lm_batch_count(stream.size, T, B)):
        lo = i * T
        yield lanes[:, lo:lo + T].T, lanes[:, lo + 1:lo + T + 1].T


def order0_entropy_bits(ids):
    counts = np.bincount(np.asarray(ids))
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())
