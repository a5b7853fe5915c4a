import struct

import numpy as np
import pytest

from pctrust.data import (
    IdxFormatError,
    RegressionTask,
    load_dataset_cache,
    load_mnist,
    one_hot,
    parse_idx_images,
    parse_idx_labels,
    sample_regression,
    save_dataset_cache,
)


def write_idx_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


@pytest.fixture
def idx_files(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(40, 7, 7), dtype=np.uint8)
    labels = rng.integers(0, 10, size=40, dtype=np.uint8)
    ip, lp = tmp_path / "imgs.idx3-ubyte", tmp_path / "lbls.idx1-ubyte"
    write_idx_images(ip, images)
    write_idx_labels(lp, labels)
    return ip, lp, images, labels


class TestRegressionSampler:
    def test_zero_variance_is_constant(self):
        task = RegressionTask(slope=-1.0, input_mean=1.0, input_variance=0.0, seed=1)
        b = sample_regression(task, 16)
        assert np.all(b.inputs == 1.0)
        assert np.all(b.targets == -1.0)

    def test_moments_match_task(self):
        task = RegressionTask(seed=123)
        b = sample_regression(task, 100_000)
        assert abs(b.inputs.mean() - 1.0) < 0.01
        assert abs(b.inputs.var() - 0.1) < 0.01
        assert np.allclose(b.targets, -b.inputs)

    def test_bitwise_determinism(self):
        task = RegressionTask(seed=7)
        a = sample_regression(task, 64, draw=3)
        b = sample_regression(task, 64, draw=3)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.targets, b.targets)

    def test_draws_differ(self):
        task = RegressionTask(seed=7)
        a = sample_regression(task, 64, draw=1)
        b = sample_regression(task, 64, draw=2)
        assert not np.array_equal(a.inputs, b.inputs)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            RegressionTask(input_variance=-0.1)


class TestIdxParsing:
    def test_roundtrip(self, idx_files):
        ip, lp, images, labels = idx_files
        got = parse_idx_images(ip)
        assert got.shape == (40, 49)
        assert np.array_equal(got, images.reshape(40, 49))
        assert np.array_equal(parse_idx_labels(lp), labels)

    def test_bad_image_magic(self, tmp_path):
        p = tmp_path / "bad.idx"
        with open(p, "wb") as f:
            f.write(struct.pack(">IIII", 2049, 1, 2, 2))
            f.write(bytes(4))
        with pytest.raises(IdxFormatError, match="expected magic 2051.*found 2049"):
            parse_idx_images(p)

    def test_bad_label_magic(self, tmp_path):
        p = tmp_path / "bad.idx"
        with open(p, "wb") as f:
            f.write(struct.pack(">II", 2051, 1))
            f.write(bytes(1))
        with pytest.raises(IdxFormatError, match="expected magic 2049"):
            parse_idx_labels(p)

    def test_truncated_file_names_offset(self, tmp_path):
        p = tmp_path / "trunc.idx"
        with open(p, "wb") as f:
            f.write(struct.pack(">IIII", 2051, 10, 7, 7))
            f.write(bytes(12))  # far fewer than 490 pixels
        with pytest.raises(IdxFormatError, match="offset 16"):
            parse_idx_images(p)

    def test_count_mismatch(self, idx_files, tmp_path):
        ip, _, _, _ = idx_files
        lp = tmp_path / "short.idx"
        write_idx_labels(lp, np.zeros(5, dtype=np.uint8))
        with pytest.raises(IdxFormatError, match="count mismatch"):
            load_mnist(ip, lp)


class TestLoadMnist:
    def test_normalization_statistics(self, idx_files):
        ip, lp, _, _ = idx_files
        ds = load_mnist(ip, lp)
        assert abs(ds.train_inputs.mean()) < 1e-6
        assert abs(ds.train_inputs.std() - 1.0) < 1e-6

    def test_one_hot_targets(self, idx_files):
        ip, lp, _, labels = idx_files
        ds = load_mnist(ip, lp)
        assert ds.train_targets.shape == (40, 10)
        assert np.array_equal(ds.train_targets.argmax(axis=1), labels)
        assert set(np.unique(ds.train_targets)) <= {0.0, 1.0}
        assert np.all(ds.train_targets.sum(axis=1) == 1.0)

    def test_test_split_uses_train_stats(self, idx_files, tmp_path):
        ip, lp, images, labels = idx_files
        tip, tlp = tmp_path / "t.idx3", tmp_path / "t.idx1"
        write_idx_images(tip, images[:10] // 2)
        write_idx_labels(tlp, labels[:10])
        ds = load_mnist(ip, lp, tip, tlp)
        m, s = ds.normalization["train_pixel_mean"], ds.normalization["train_pixel_std"]
        expected = ((images[:10] // 2).reshape(10, -1) / 255.0 - m) / s
        assert np.allclose(ds.test_inputs, expected)

    def test_one_hot_range_check(self):
        with pytest.raises(ValueError):
            one_hot(np.array([11]))


class TestCache:
    def test_roundtrip_bitwise(self, idx_files, tmp_path):
        ip, lp, _, _ = idx_files
        ds = load_mnist(ip, lp)
        cache = tmp_path / "ds.bin"
        save_dataset_cache(ds, cache)
        back = load_dataset_cache(cache)
        assert np.array_equal(back.train_inputs, ds.train_inputs)
        assert np.array_equal(back.train_targets, ds.train_targets)
        assert back.normalization == ds.normalization

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(IdxFormatError, match="bad cache magic"):
            load_dataset_cache(p)
