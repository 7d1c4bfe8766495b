import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ridgestream import data as D
from ridgestream.oracle import direct_ridge


def image_payload():
    return struct.pack(">IIII", 0x803, 1, 2, 2) + bytes([0, 255, 128, 0])


def test_images_hand_payload(tmp_path):
    path = tmp_path / "img.idx"
    path.write_bytes(image_payload())
    x = D.load_idx_images(path)
    assert x.shape == (1, 4)
    assert np.array_equal(x, [[0.0, 1.0, 128 / 255, 0.0]])


def test_labels_hand_payload(tmp_path):
    path = tmp_path / "lab.idx"
    path.write_bytes(struct.pack(">II", 0x801, 2) + bytes([3, 0]))
    labels = D.load_idx_labels(path)
    assert labels.tolist() == [3, 0] and labels.dtype == np.int64


def test_truncated_pixels(tmp_path):
    payload = image_payload()[:-1]
    with pytest.raises(D.TruncatedFile) as info:
        D.parse_idx(payload)
    assert info.value.offset == 19
    path = tmp_path / "short.idx"
    path.write_bytes(payload)
    with pytest.raises(D.TruncatedFile) as info:
        D.load_idx_images(path)
    assert str(path) in str(info.value)


def test_truncated_header():
    with pytest.raises(D.TruncatedFile) as info:
        D.parse_idx(struct.pack(">II", 0x803, 1))
    assert info.value.offset == 8
    with pytest.raises(D.TruncatedFile) as info:
        D.parse_idx(b"\x00\x00")
    assert info.value.offset == 2


def test_bad_magic():
    with pytest.raises(D.BadMagic) as info:
        D.parse_idx(struct.pack(">II", 0x0D03, 1) + b"\x00")
    assert info.value.offset == 0
    with pytest.raises(D.BadMagic):
        D.parse_idx(struct.pack(">II", 0x801, 1) + b"\x00", expect_magic=D.IMAGE_MAGIC)


def test_dimension_overflow():
    header = struct.pack(">IIII", 0x803, 1 << 20, 1 << 20, 1 << 20)
    with pytest.raises(D.DimensionOverflow) as info:
        D.parse_idx(header)
    assert info.value.offset == 8  # second dimension field pushes the product past the cap


@given(st.lists(st.integers(0, 5), min_size=1, max_size=4))
def test_header_round_trip(dims):
    arr = (np.arange(int(np.prod(dims))) % 256).astype(np.uint8).reshape(dims)
    header = struct.pack(f">I{len(dims)}I", 0x800 | len(dims), *dims)
    parsed = D.parse_idx(header + arr.tobytes())
    assert parsed.shape == tuple(dims)
    assert np.array_equal(parsed, arr)


def test_write_idx_round_trip(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, size=(3, 4, 5)).astype(np.uint8)
    D.write_idx(tmp_path / "a.idx", arr)
    assert np.array_equal(D.load_idx_images(tmp_path / "a.idx", scale=1.0), arr.reshape(3, 20))


def test_one_hot():
    assert np.array_equal(D.one_hot([3], 10), np.eye(10)[[3]])
    assert np.array_equal(D.one_hot([0, 1], 2), np.eye(2))
    with pytest.raises(ValueError):
        D.one_hot([2], 2)
    with pytest.raises(ValueError):
        D.one_hot([-1], 2)


@given(st.lists(st.integers(0, 9), min_size=1, max_size=30))
def test_one_hot_inverse(labels):
    y = D.one_hot(labels, 10)
    assert y.argmax(axis=1).tolist() == labels
    assert np.all(y.sum(axis=1) == 1.0)


@given(st.integers(0, 2**31), st.integers(1, 20), st.integers(1, 5))
def test_normalize_idempotent(seed, l, q):
    x = np.random.default_rng(seed).normal(scale=10, size=(l, q))
    once = D.normalize(x)
    assert np.all((once >= 0) & (once <= 1))
    assert np.array_equal(D.normalize(once), once)


def test_normalize_with_training_extremes():
    train = np.array([[0.0, 10.0], [2.0, 20.0]])
    test = np.array([[1.0, 30.0]])
    out = D.normalize(test, train.min(axis=0), train.max(axis=0))
    assert out.tolist() == [[0.5, 1.0]]


def test_synth_determinism():
    a = D.synth_dataset(5, 50, 6, 3, 0.5)
    b = D.synth_dataset(5, 50, 6, 3, 0.5)
    assert a.x.tobytes() == b.x.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert D.synth_dataset(6, 50, 6, 3, 0.5).x.tobytes() != a.x.tobytes()


def test_synth_invariants():
    ds = D.synth_dataset(1, 80, 5, 4, 1.0)
    assert len(ds) == 80 and ds.classes == 4
    assert np.all((ds.x >= 0) & (ds.x <= 1))
    assert np.all(ds.y.sum(axis=1) == 1.0)
    assert np.array_equal(ds.y.argmax(axis=1), ds.labels)


def test_synth_rejects_bad_sizes():
    with pytest.raises(ValueError):
        D.synth_dataset(0, 0, 4, 2, 0.1)
    with pytest.raises(ValueError):
        D.synth_dataset(0, 10, 4, 1, 0.1)


def test_noise_free_is_separable():
    ds = D.synth_dataset(2, 300, 20, 5, 0.0)
    w = direct_ridge(ds.x, ds.y, 1e-6).w
    assert np.mean((ds.x @ w).argmax(axis=1) == ds.labels) == 1.0


def test_synth_split():
    train, test = D.synth_split(4, 30, 10, 3, 2, 0.2)
    assert (len(train), len(test)) == (30, 10)
    whole = D.synth_dataset(4, 40, 3, 2, 0.2)
    assert np.array_equal(test.x, whole.x[30:])


def test_csv_quoting(tmp_path):
    rows = [{"a": 1, "b": 'say "hi", ok'}, {"a": None, "b": "x"}]
    text = D.write_csv(rows, ["a", "b"])
    assert text == 'a,b\r\n1,"say ""hi"", ok"\r\n,x\r\n'
    D.write_csv(rows, ["a", "b"], tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_bytes().decode() == text
