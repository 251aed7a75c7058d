import gzip
import struct

import numpy as np
import pytest

from vitcae.data import N_SHAPE_CLASSES, make_dataset, make_shapes, read_idx
from vitcae.errors import ConfigError


def test_shapes_shape_and_range():
    ds = make_dataset("shapes", 1000, 3, 16, 16, seed=0)
    assert ds.images.shape == (1000, 3, 16, 16) and len(ds) == 1000
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    assert make_dataset("shapes", 5, 1, 32, 32).images.shape == (5, 1, 32, 32)


def test_shapes_deterministic():
    a, b = make_shapes(64, seed=3), make_shapes(64, seed=3)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, make_shapes(64, seed=4).images)


def test_class_means_differ():
    ds = make_shapes(800, seed=1)
    means = [ds.images[ds.labels == k].mean(axis=0) for k in range(N_SHAPE_CLASSES)]
    for i in range(N_SHAPE_CLASSES):
        for j in range(i + 1, N_SHAPE_CLASSES):
            assert np.abs(means[i] - means[j]).max() > 0.1


def test_unknown_spec_and_channels():
    with pytest.raises(ConfigError, match="unknown dataset"):
        make_dataset("cifar", 4)
    with pytest.raises(ConfigError):
        make_shapes(4, channels=4)


def _write_idx(path, arr, compress=False):
    header = bytes([0, 0, 8, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(header + arr.astype(np.uint8).tobytes())


@pytest.mark.parametrize("compress", [False, True])
def test_grayscale_digits_from_idx(tmp_path, compress):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (10, 28, 28))
    labels = np.arange(10) % 3
    suffix = ".gz" if compress else ""
    ip, lp = tmp_path / f"img.idx{suffix}", tmp_path / f"lab.idx{suffix}"
    _write_idx(ip, imgs, compress)
    _write_idx(lp, labels, compress)
    assert np.array_equal(read_idx(ip), imgs)
    ds = make_dataset(f"grayscale-digits:{ip}:{lp}", 6, 1, 16, 16, seed=2)
    assert ds.images.shape == (6, 1, 16, 16)
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    assert set(ds.labels) <= {0, 1, 2}
    native = make_dataset(f"grayscale-digits:{ip}", 10, 3, 28, 28)
    assert np.allclose(native.images[:, 0], imgs / 255.0)
    assert np.array_equal(native.images[:, 0], native.images[:, 2])


def test_unreadable_digit_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        make_dataset(f"grayscale-digits:{tmp_path / 'nope'}", 2)
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"hello world")
    with pytest.raises(ConfigError, match="IDX"):
        read_idx(bad)
    with pytest.raises(ConfigError, match="needs a path"):
        make_dataset("grayscale-digits", 2)
