import numpy as np
import pytest

from r2f import data, zoo
from r2f.data import Dataset
from r2f.errors import DecodeError


def test_idx_round_trip(tmp_path, rng):
    ds = Dataset(rng.integers(0, 256, (5, 28, 28)).astype(np.uint8), np.arange(5, dtype=np.uint8))
    data.save_dataset(str(tmp_path), "train", ds)
    back = data.load_dataset(str(tmp_path), "train")
    assert np.array_equal(back.images, ds.images) and np.array_equal(back.labels, ds.labels)
    head = (tmp_path / "train-images.idx3-ubyte").read_bytes()[:16]
    assert head.hex() == "00000803" "00000005" "0000001c" "0000001c"


def test_idx_validation(tmp_path):
    p = tmp_path / "x.idx"
    p.write_bytes(b"\x01\x00\x08\x01\x00\x00\x00\x02ab")
    with pytest.raises(DecodeError, match="magic"):
        data.read_idx(str(p))
    p.write_bytes(b"\x00\x00\x08\x02\x00\x00")
    with pytest.raises(DecodeError):
        data.read_idx(str(p))
    p.write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x03ab")
    with pytest.raises(DecodeError, match="dims"):
        data.read_idx(str(p))
    data.write_idx(str(p), np.zeros((2, 3), np.uint8))
    with pytest.raises(DecodeError):
        data.read_idx(str(p), data.IMAGE_MAGIC)


def test_load_checks_shapes(tmp_path):
    data.write_idx(str(tmp_path / "test-images.idx3-ubyte"), np.zeros((3, 10, 10), np.uint8))
    data.write_idx(str(tmp_path / "test-labels.idx1-ubyte"), np.zeros(3, np.uint8))
    with pytest.raises(DecodeError, match="dims"):
        data.load_dataset(str(tmp_path), "test")


def test_digits_dataset(digits):
    train, test = digits
    assert train.images.shape == (1297, 28, 28) and len(test) == data.N_TEST
    assert train.n_classes == test.n_classes == 10
    assert np.bincount(test.labels, minlength=10).min() > 30


def test_digits_are_deterministic():
    a, b = data.digits_28(0), data.digits_28(0)
    assert np.array_equal(a[0].images, b[0].images) and np.array_equal(a[1].labels, b[1].labels)


def test_to_input_quantization():
    img = np.array([[0, 1, 128, 255]], np.uint8).reshape(1, 1, 4)
    x = data.to_input(img)
    assert x.shape == (1, 1, 1, 4) and x.dtype == np.int8
    # pixel/256 at exponent -7 is pixel/2, rounded half away from zero and saturated
    assert x.ravel().tolist() == [0, 1, 64, 127]


def test_pretrained_models_are_accurate(tiny_q, resnet_q, digits):
    assert zoo.clean_accuracy(tiny_q, digits[1]) > 0.9
    assert zoo.clean_accuracy(resnet_q, digits[1]) > 0.9
    assert len(tiny_q.layers) == 8 and len(resnet_q.layers) == 10


def test_pretrained_cache(digits, tmp_path, monkeypatch):
    monkeypatch.setenv("R2F_CACHE", str(tmp_path))
    small = digits[0].subset(np.arange(64))
    a = zoo.pretrained("tiny-net", small, epochs=1)
    assert list(tmp_path.iterdir())
    b = zoo.pretrained("tiny-net", small, epochs=1)
    assert all(np.array_equal(x.weight, y.weight) for x, y in zip(a.layers, b.layers) if x.weighted)
    with pytest.raises(Exception):
        zoo.build("no-such-net")
