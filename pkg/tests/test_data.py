import gzip
import struct

import numpy as np
import pytest

from grasplab.data import IdxFormatError, load_idx, synthetic_dataset, write_idx


def _fixture_bytes():
    # four 2x3 images with hand-picked byte values
    pix = bytes([0, 255, 51, 102, 153, 204,
                 1, 2, 3, 4, 5, 6,
                 255, 255, 255, 0, 0, 0,
                 10, 20, 30, 40, 50, 60])
    img = b"\x00\x00\x08\x03" + b"\x00\x00\x00\x04" + b"\x00\x00\x00\x02" + b"\x00\x00\x00\x03" + pix
    lab = b"\x00\x00\x08\x01" + b"\x00\x00\x00\x04" + bytes([7, 0, 9, 3])
    return img, lab


def _write(tmp_path, img, lab, gz=False):
    ip, lp = tmp_path / "img", tmp_path / "lab"
    ip.write_bytes(gzip.compress(img) if gz else img)
    lp.write_bytes(gzip.compress(lab) if gz else lab)
    return ip, lp


@pytest.mark.parametrize("gz", [False, True])
def test_hand_built_fixture(tmp_path, gz):
    ds = load_idx(*_write(tmp_path, *_fixture_bytes(), gz=gz))
    assert len(ds) == 4 and ds.x.shape == (4, 1, 2, 3) and ds.x.dtype == np.float32
    np.testing.assert_array_equal(ds.y, [7, 0, 9, 3])
    assert ds.x[0, 0, 0, 1] == np.float32(1.0)
    assert ds.x[0, 0, 0, 2] == np.float32(51 / 255)
    assert ds.x[2, 0, 1, 0] == 0.0
    assert ds.x[3, 0, 1, 2] == np.float32(60 / 255)


def test_write_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (5, 4, 4), dtype=np.uint8)
    labels = rng.integers(0, 10, 5)
    ip, lp = tmp_path / "i.gz", tmp_path / "l.gz"
    write_idx(imgs, labels, ip, lp)
    ds = load_idx(ip, lp)
    np.testing.assert_array_equal(np.round(ds.x[:, 0] * 255).astype(np.uint8), imgs)
    np.testing.assert_array_equal(ds.y, labels)
    first = ip.read_bytes()
    write_idx(imgs, labels, ip, lp)
    assert ip.read_bytes() == first


def test_count_mismatch(tmp_path):
    img, lab = _fixture_bytes()
    lab = b"\x00\x00\x08\x01\x00\x00\x00\x03" + bytes([7, 0, 9])
    with pytest.raises(IdxFormatError, match="4 images but 3 labels"):
        load_idx(*_write(tmp_path, img, lab))


def test_empty_file(tmp_path):
    _, lab = _fixture_bytes()
    with pytest.raises(IdxFormatError, match="byte 0"):
        load_idx(*_write(tmp_path, b"", lab))


def test_bad_magic_names_offset(tmp_path):
    img, lab = _fixture_bytes()
    with pytest.raises(IdxFormatError, match="bad magic 2049 at byte 0"):
        load_idx(*_write(tmp_path, lab, lab))


def test_truncated_payload_names_offset(tmp_path):
    img, lab = _fixture_bytes()
    with pytest.raises(IdxFormatError, match="truncated at byte 30"):
        load_idx(*_write(tmp_path, img[:30], lab))


def test_trailing_bytes(tmp_path):
    img, lab = _fixture_bytes()
    with pytest.raises(IdxFormatError, match="trailing"):
        load_idx(*_write(tmp_path, img, lab + b"\x01"))


def test_label_out_of_range(tmp_path):
    img, lab = _fixture_bytes()
    with pytest.raises(IdxFormatError, match="label 12"):
        load_idx(*_write(tmp_path, img, lab[:-1] + bytes([12])))


def test_blobs_balanced_and_deterministic():
    a = synthetic_dataset("blobs", 100, seed=4)
    b = synthetic_dataset("blobs", 100, seed=4)
    assert np.bincount(a.y).tolist() == [50, 50]
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert a.x.tobytes() != synthetic_dataset("blobs", 100, seed=5).x.tobytes()


@pytest.mark.parametrize("kind", ["blobs", "stripes"])
@pytest.mark.parametrize("n", [2, 7, 51])
def test_balance_within_one(kind, n):
    ds = synthetic_dataset(kind, n, seed=0)
    counts = np.bincount(ds.y, minlength=2)
    assert abs(counts[0] - counts[1]) <= 1
    assert ds.x.min() >= 0 and ds.x.max() <= 1


def test_blobs_linearly_separable():
    ds = synthetic_dataset("blobs", 400, seed=1)
    X = np.hstack([ds.x, np.ones((len(ds), 1))])
    w, *_ = np.linalg.lstsq(X, 2.0 * ds.y - 1.0, rcond=None)
    assert np.mean((X @ w > 0) == (ds.y == 1)) >= 0.99


def test_synthetic_errors():
    with pytest.raises(ValueError):
        synthetic_dataset("blobs", 1, seed=0)
    with pytest.raises(ValueError):
        synthetic_dataset("rings", 10, seed=0)


def test_mnist_desk_preset(mnist_desk):
    train, test = mnist_desk
    assert len(train) == 2000 and len(test) == 1000
    assert train.sample_shape == (1, 28, 28)
    assert set(np.unique(train.y)) == set(range(10))
    assert 0.0 <= train.x.min() and train.x.max() <= 1.0
