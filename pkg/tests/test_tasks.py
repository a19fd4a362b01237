import gzip
import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from indrnn.errors import ConfigError, FormatError
from indrnn.numerics import seed_rng
from indrnn.tasks import (
    IMAGE_MAGIC,
    LABEL_MAGIC,
    PixelDataset,
    batch_lm,
    bundled_digits,
    corpus_from_bytes,
    depixelize,
    gen_adding_batch,
    idx_magic,
    lm_batch_count,
    load_corpus,
    load_idx,
    make_permutation,
    order0_entropy_bits,
    parse_idx,
    pixelize,
    read_idx,
    split_validation,
    write_idx,
)


# adding problem -------------------------------------------------------------

def test_adding_t2_forced_positions(rng):
    b = gen_adding_batch(rng, 2, 16)
    assert np.array_equal(b.X[:, :, 1], np.ones((2, 16)))
    assert np.array_equal(b.y, b.X[0, :, 0] + b.X[1, :, 0])


def test_adding_rejects_short():
    with pytest.raises(ConfigError):
        gen_adding_batch(seed_rng(0), 1, 4)


def test_adding_constant_predictor_baseline():
    r = seed_rng(7)
    total, n = 0.0, 0
    for _ in range(20):
        b = gen_adding_batch(r, 10, 50_000)
        total += float(((b.y - 1.0) ** 2).sum())
        n += b.y.size
    assert n == 10**6
    assert abs(total / n - 0.167) < 0.002


@given(st.integers(2, 60), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_adding_batch_invariants(T, B, seed):
    b = gen_adding_batch(seed_rng(seed), T, B)
    marks = b.X[:, :, 1]
    assert set(np.unique(marks)) <= {0.0, 1.0}
    assert np.array_equal(marks.sum(axis=0), np.full(B, 2.0))
    half = T // 2
    assert np.array_equal(marks[:half].sum(axis=0), np.ones(B))
    assert np.allclose(b.y, (b.X[:, :, 0] * marks).sum(axis=0), rtol=0, atol=1e-15)
    assert b.X[:, :, 0].min() >= 0.0 and b.X[:, :, 0].max() < 1.0


def test_adding_batches_are_fresh(rng):
    a, b = gen_adding_batch(rng, 10, 4), gen_adding_batch(rng, 10, 4)
    assert not np.array_equal(a.X, b.X)


# IDX ------------------------------------------------------------------------

def make_idx_pair(tmp_path, n=5, h=28, w=28, gz=False, seed=0):
    r = seed_rng(seed)
    images = r.integers(256, (n, h, w)).astype(np.uint8)
    labels = r.integers(10, (n,)).astype(np.uint8)
    suffix = ".gz" if gz else ""
    ip, lp = tmp_path / f"img.idx{suffix}", tmp_path / f"lab.idx{suffix}"
    write_idx(ip, images)
    write_idx(lp, labels)
    return ip, lp, images, labels


def test_idx_magic_values(tmp_path):
    ip, lp, _, _ = make_idx_pair(tmp_path)
    assert idx_magic(ip) == IMAGE_MAGIC == 0x00000803
    assert idx_magic(lp) == LABEL_MAGIC == 0x00000801
    raw = ip.read_bytes()
    count, = struct.unpack(">I", raw[4:8])
    assert count == (len(raw) - 16) // 784


@pytest.mark.parametrize("gz", [False, True])
def test_idx_round_trip(tmp_path, gz):
    ip, lp, images, labels = make_idx_pair(tmp_path, gz=gz)
    if gz:
        assert ip.read_bytes()[:2] == b"\x1f\x8b"
    ds = load_idx(ip, lp)
    assert np.array_equal(ds.images, images) and np.array_equal(ds.labels, labels)
    assert ds.labels.max() < 10


def test_idx_float_round_trip(tmp_path, rng):
    arr = rng.normal((3, 4))
    write_idx(tmp_path / "f.idx", arr)
    assert np.array_equal(read_idx(tmp_path / "f.idx"), arr)


def test_idx_bad_magic(tmp_path):
    ip, lp, _, _ = make_idx_pair(tmp_path)
    with pytest.raises(FormatError) as info:
        load_idx(lp, lp)
    assert info.value.offset == 0
    raw = bytearray(ip.read_bytes())
    raw[2] = 0x42
    with pytest.raises(FormatError) as info:
        parse_idx(bytes(raw))
    assert info.value.offset == 0


def test_idx_truncated_reports_offset(tmp_path):
    ip, _, _, _ = make_idx_pair(tmp_path)
    raw = ip.read_bytes()[:-10]
    with pytest.raises(FormatError) as info:
        parse_idx(raw)
    assert info.value.offset == len(raw)
    with pytest.raises(FormatError):
        parse_idx(raw[:6])
    with pytest.raises(FormatError):
        parse_idx(b"\x00\x00")


def test_idx_trailing_bytes(tmp_path):
    ip, _, _, _ = make_idx_pair(tmp_path)
    raw = ip.read_bytes()
    with pytest.raises(FormatError) as info:
        parse_idx(raw + b"xx")
    assert info.value.offset == len(raw)


def test_idx_count_mismatch_and_bad_label(tmp_path):
    ip, lp, images, labels = make_idx_pair(tmp_path)
    write_idx(tmp_path / "short.idx", labels[:3])
    with pytest.raises(FormatError):
        load_idx(ip, tmp_path / "short.idx")
    bad = labels.copy()
    bad[2] = 11
    write_idx(tmp_path / "bad.idx", bad)
    with pytest.raises(FormatError) as info:
        load_idx(ip, tmp_path / "bad.idx")
    assert info.value.offset == 8 + 2


def test_idx_corrupt_gzip(tmp_path):
    p = tmp_path / "x.idx.gz"
    p.write_bytes(gzip.compress(b"\x00\x00\x08\x01\x00\x00\x00\x02ab")[:-6])
    with pytest.raises((FormatError, EOFError, OSError)):
        read_idx(p)


def test_bundled_digits():
    train, test = bundled_digits("train"), bundled_digits("test")
    assert train.images.shape[1:] == (8, 8) and train.seq_len == 64
    assert len(train) + len(test) == 1797
    assert train.labels.max() < 10 and set(train.labels.tolist()) == set(range(10))


# pixels ---------------------------------------------------------------------

def small_dataset(rng, n=4):
    return PixelDataset(rng.integers(256, (n, 3, 5)).astype(np.uint8), np.arange(n) % 10)


def test_pixelize_identity_permutation(rng):
    ds = small_dataset(rng)
    plain = pixelize(ds, 1)
    ident = pixelize(ds.with_permutation(np.arange(15)), 1)
    assert np.array_equal(plain, ident)
    assert plain.shape == (15, 1, 1)
    assert np.array_equal(plain[:, 0, 0], ds.images[1].reshape(-1) / 255.0)


def test_pixelize_zero_image():
    ds = PixelDataset(np.zeros((1, 4, 4), dtype=np.uint8), np.array([0]))
    assert not pixelize(ds, 0).any()


def test_pixelize_scaling_range():
    ds = PixelDataset(np.array([[[0, 255]]], dtype=np.uint8), np.array([3]))
    assert pixelize(ds, 0)[:, 0, 0].tolist() == [0.0, 1.0]


@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_permutation_then_inverse(n, seed):
    r = seed_rng(seed)
    perm = make_permutation(r, n)
    x = r.normal((n,))
    inv = np.argsort(perm)
    assert np.array_equal(x[perm][inv], x)


def test_make_permutation_examples():
    assert make_permutation(seed_rng(0), 1).tolist() == [0]
    p = make_permutation(seed_rng(5), 784)
    assert np.array_equal(np.sort(p), np.arange(784))
    assert np.array_equal(p, make_permutation(seed_rng(5), 784))
    assert not np.array_equal(p, np.arange(784))
    with pytest.raises(ConfigError):
        make_permutation(seed_rng(0), 0)


@given(st.integers(0, 2**32 - 1), st.booleans())
def test_pixel_round_trip(seed, permute):
    r = seed_rng(seed)
    ds = small_dataset(r, n=3)
    if permute:
        ds = ds.with_permutation(make_permutation(r, 15))
    seq = pixelize(ds, np.arange(3))
    assert np.array_equal(depixelize(seq, (3, 5), ds.permutation), ds.images)


def test_split_validation_disjoint(rng):
    ds = PixelDataset(np.arange(100, dtype=np.uint8).reshape(100, 1, 1), np.zeros(100, int))
    train, valid = split_validation(ds, 0.05, rng)
    assert len(valid) == 5 and len(train) == 95
    assert not set(train.images.ravel()) & set(valid.images.ravel())


# corpus ---------------------------------------------------------------------

def test_corpus_aab_train_only():
    c = corpus_from_bytes(b"aab", (1.0, 0.0, 0.0))
    assert c.ids.tolist() == [0, 0, 1]
    assert c.vocab == [ord("a"), ord("b")] and c.unk_id == 2 and c.vocab_size == 3


def test_corpus_split_offsets():
    c = corpus_from_bytes(bytes(range(200)) * 5, (0.8, 0.1, 0.1))
    assert c.splits == (0, 800, 900)
    assert c.split("valid").size == 100 and c.split("test").size == 100


def test_corpus_unk_for_unseen_byte():
    c = corpus_from_bytes(b"abababab" + b"z" + b"a", (0.8, 0.1, 0.1))
    assert c.split("valid").tolist() == [c.unk_id]
    assert c.ids.max() < c.vocab_size


def test_corpus_empty(tmp_path):
    (tmp_path / "e.txt").write_bytes(b"")
    with pytest.raises(ConfigError):
        load_corpus(tmp_path / "e.txt")


def test_corpus_bad_fractions():
    with pytest.raises(ConfigError):
        corpus_from_bytes(b"abc", (0.5, 0.1, 0.1))


def test_order0_entropy():
    assert order0_entropy_bits(np.array([0, 1, 2, 3])) == 2.0
    assert order0_entropy_bits(np.array([5, 5, 5])) == 0.0


# LM batching ------------------------------------------------------------------

def test_batch_lm_shift_example():
    (x, y), = list(batch_lm(np.array([0, 1, 2, 3]), 3, 1))
    assert x[:, 0].tolist() == [0, 1, 2] and y[:, 0].tolist() == [1, 2, 3]


def test_batch_lm_two_streams_are_halves():
    stream = np.arange(20)
    batches = list(batch_lm(stream, 3, 2))
    xs = np.concatenate([x for x, _ in batches])
    assert set(xs[:, 0]) <= set(range(10)) and set(xs[:, 1]) <= set(range(10, 20))


@pytest.mark.parametrize("length,T,B", [(100, 7, 3), (1000, 50, 4), (51, 50, 1), (999, 10, 9)])
def test_batch_count(length, T, B):
    n = len(list(batch_lm(np.arange(length), T, B)))
    assert n == lm_batch_count(length, T, B) == math.floor((length / B - 1) / T)


def test_batch_lm_too_short():
    with pytest.raises(ConfigError):
        list(batch_lm(np.arange(7), 3, 2))


@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 200))
def test_batching_preserves_stream(B, T, extra):
    stream = np.arange(B * (T + 1) + extra)
    per = stream.size // B
    batches = list(batch_lm(stream, T, B))
    for lane in range(B):
        got = np.concatenate([x[:, lane] for x, _ in batches])
        assert np.array_equal(got, stream[lane * per: lane * per + got.size])
        assert np.array_equal(np.concatenate([y[:, lane] for _, y in batches]),
                              stream[lane * per + 1: lane * per + 1 + got.size])


def test_stdlib_corpus_is_deterministic_and_large_enough():
    from indrnn.tasks import stdlib_corpus
    a, b = stdlib_corpus(50_000), stdlib_corpus(50_000)
    assert a == b and len(a) >= 50_000


def test_stdlib_corpus_too_small_root(tmp_path):
    from indrnn.tasks import stdlib_corpus
    (tmp_path / "x.py").write_bytes(b"pass\n")
    with pytest.raises(ConfigError):
        stdlib_corpus(1000, root=tmp_path)
