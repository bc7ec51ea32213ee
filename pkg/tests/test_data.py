import gzip
import struct

import numpy as np
import pytest

from ghostconv import data
from ghostconv.errors import FormatError


def write_idx(path, arr, magic):
    arr = np.asarray(arr, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.tobytes())


def write_cifar(path, labels, images):
    recs = np.concatenate([np.asarray(labels, np.uint8)[:, None], images.reshape(len(labels), -1)], axis=1)
    path.write_bytes(recs.astype(np.uint8).tobytes())


@pytest.fixture
def mnist_tree(tmp_path, rng):
    imgs = rng.integers(0, 256, (6, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 3, 9, 5], np.uint8)
    write_idx(tmp_path / "train-images-idx3-ubyte", imgs, 0x803)
    write_idx(tmp_path / "train-labels-idx1-ubyte", labels, 0x801)
    write_idx(tmp_path / "t10k-images-idx3-ubyte", imgs[:2], 0x803)
    write_idx(tmp_path / "t10k-labels-idx1-ubyte", labels[:2], 0x801)
    return tmp_path, imgs, labels


def test_ingest_mnist(mnist_tree):
    root, imgs, labels = mnist_tree
    train, test = data.load_dataset("mnist", str(root), dtype=np.float64)
    assert train.images.shape == (6, 1, 28, 28) and len(test) == 2
    np.testing.assert_array_equal(train.labels, labels)
    np.testing.assert_allclose(train.images.mean(), 0, atol=1e-12)
    np.testing.assert_allclose(train.images.std(), 1, atol=1e-12)
    # test split reuses the training statistics
    raw = imgs[:2, None] / 255.0
    np.testing.assert_allclose(test.images, (raw - train.mean[0]) / train.std[0])


def test_ingest_mnist_gz_and_env(mnist_tree, monkeypatch):
    root, _, labels = mnist_tree
    for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"):
        p = root / name
        (root / (name + ".gz")).write_bytes(gzip.compress(p.read_bytes()))
        p.unlink()
    monkeypatch.setenv(data.DATA_DIR_ENV, str(root))
    ds = data.ingest_mnist()
    np.testing.assert_array_equal(ds.labels, labels)


def test_mnist_bad_magic(tmp_path):
    write_idx(tmp_path / "x", np.zeros(3), 0x802)
    with pytest.raises(FormatError) as info:
        data.read_idx(tmp_path / "x", 0x801)
    assert info.value.offset == 0


def test_mnist_truncated_reports_offset(tmp_path):
    write_idx(tmp_path / "x", np.zeros((4, 2, 2)), 0x803)
    buf = (tmp_path / "x").read_bytes()
    (tmp_path / "x").write_bytes(buf[:-5])
    with pytest.raises(FormatError) as info:
        data.read_idx(tmp_path / "x", 0x803)
    assert info.value.offset == len(buf) - 5
    assert "offset=" in str(info.value)


def test_mnist_label_out_of_range(mnist_tree):
    root, _, labels = mnist_tree
    bad = labels.copy()
    bad[3] = 10
    write_idx(root / "train-labels-idx1-ubyte", bad, 0x801)
    with pytest.raises(FormatError) as info:
        data.ingest_mnist(str(root))
    assert info.value.offset == 8 + 3


def test_mnist_fixture_shape(mnist_dir):
    train, test = data.load_dataset("mnist", mnist_dir)
    assert train.images.shape == (1000, 1, 28, 28)
    assert len(test) == 200
    assert set(np.unique(train.labels)) == set(range(10))


@pytest.fixture
def cifar_tree(tmp_path, rng):
    per_file = 3
    for name in data.CIFAR_TRAIN_FILES + data.CIFAR_TEST_FILES:
        write_cifar(tmp_path / name, rng.integers(0, 10, per_file), rng.integers(0, 256, (per_file, 3, 32, 32)))
    return tmp_path, per_file


def test_ingest_cifar(cifar_tree):
    root, per_file = cifar_tree
    train, test = data.load_dataset("cifar10", str(root))
    assert len(train) == 5 * per_file and len(test) == per_file
    assert train.images.shape[1:] == (3, 32, 32)


def test_cifar_record_layout(tmp_path, rng):
    images = rng.integers(0, 256, (2, 3, 32, 32))
    write_cifar(tmp_path / "b.bin", [7, 3], images)
    labels, got = data.read_cifar_batch(tmp_path / "b.bin")
    assert labels.tolist() == [7, 3]
    np.testing.assert_array_equal(got, images)
    # the red plane comes first in each record
    assert (tmp_path / "b.bin").read_bytes()[1] == images[0, 0, 0, 0]


def test_cifar_full_batch_size():
    assert 10_000 * data.CIFAR_RECORD == 30_730_000
    assert len(data.CIFAR_TRAIN_FILES) * 10_000 == 50_000


def test_cifar_truncated(tmp_path, rng):
    write_cifar(tmp_path / "b.bin", [1, 2], rng.integers(0, 256, (2, 3, 32, 32)))
    buf = (tmp_path / "b.bin").read_bytes()
    (tmp_path / "b.bin").write_bytes(buf[:-1])
    with pytest.raises(FormatError) as info:
        data.read_cifar_batch(tmp_path / "b.bin")
    assert info.value.offset == data.CIFAR_RECORD


def test_cifar_bad_label(tmp_path, rng):
    write_cifar(tmp_path / "b.bin", [1, 12], rng.integers(0, 256, (2, 3, 32, 32)))
    with pytest.raises(FormatError) as info:
        data.read_cifar_batch(tmp_path / "b.bin")
    assert info.value.offset == data.CIFAR_RECORD


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.ingest_mnist(str(tmp_path))
    with pytest.raises(FileNotFoundError):
        data.ingest_cifar10(str(tmp_path))


def test_dataset_invariants(rng):
    with pytest.raises(ValueError):
        data.Dataset(np.zeros((2, 1, 2, 2)), np.array([0]), 10, np.zeros(1), np.ones(1))
    with pytest.raises(ValueError):
        data.Dataset(np.zeros((1, 1, 2, 2)), np.array([10]), 10, np.zeros(1), np.ones(1))
    ds = data.Dataset(rng.standard_normal((10, 1, 2, 2)), np.arange(10), 10, np.zeros(1), np.ones(1))
    sub = ds.subset(4, seed=1)
    assert len(sub) == 4 and sub.labels.tolist() == sorted(sub.labels.tolist())
    assert ds.subset(4, seed=1).labels.tolist() == sub.labels.tolist()


# -- augmentation -----------------------------------------------------------------

def test_mirror_involution(rng):
    img = rng.standard_normal((3, 8, 8))
    np.testing.assert_array_equal(data.mirror(data.mirror(img)), img)


def test_center_crop_is_identity(rng):
    img = rng.standard_normal((3, 8, 8))
    np.testing.assert_array_equal(data.crop(data.pad_image(img, 4), 4, 4, 8, 8), img)


def test_augment_deterministic_and_shape(rng):
    batch = rng.standard_normal((5, 3, 8, 8))
    a = data.augment_batch(batch, np.random.default_rng(9))
    b = data.augment_batch(batch, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    assert a.shape == batch.shape


def test_augment_draws_are_crops_of_padded_image(rng):
    img = rng.standard_normal((1, 6, 6))
    padded = data.pad_image(img, 4)
    windows = [data.crop(padded, t, l, 6, 6) for t in range(9) for l in range(9)]
    windows += [data.mirror(w) for w in windows]
    gen = np.random.default_rng(2)
    for _ in range(20):
        out = data.augment(img, gen)
        assert any(np.array_equal(out, w) for w in windows)


def test_augment_flags_off_is_identity(rng):
    img = rng.standard_normal((3, 8, 8))
    np.testing.assert_array_equal(data.augment(img, rng, random_crop=False, flip=False), img)


def test_mirror_rate_about_half():
    img = np.arange(4.0).reshape(1, 1, 4)
    gen = np.random.default_rng(0)
    flips = sum(data.augment(img, gen, random_crop=False)[0, 0, 0] == 3.0 for _ in range(2000))
    assert 900 < flips < 1100


# -- PGM / PPM -------------------------------------------------------------------------

@pytest.mark.parametrize("channels", [1, 3])
def test_pnm_round_trip(tmp_path, rng, channels):
    img = rng.integers(0, 256, (channels, 5, 7), dtype=np.uint8)
    data.write_pnm(tmp_path / "a.pnm", img)
    np.testing.assert_array_equal(data.read_pnm(tmp_path / "a.pnm"), img)


def test_ascii_pgm_with_comment(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n# made by hand\n3 2\n15\n0 1 2\n3 4 15\n")
    img = data.read_pnm(tmp_path / "a.pgm")
    assert img.shape == (1, 2, 3)
    assert img[0, 1, 2] == 255 and img[0, 0, 1] == 17


def test_pnm_errors(tmp_path):
    (tmp_path / "a").write_bytes(b"BM....")
    with pytest.raises(FormatError):
        data.read_pnm(tmp_path / "a")
    (tmp_path / "b").write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(FormatError) as info:
        data.read_pnm(tmp_path / "b")
    assert info.value.offset is not None


def test_float_maps_scale_to_full_range(tmp_path):
    data.write_pnm(tmp_path / "m.pgm", np.array([[-1.0, 0.0], [0.5, 1.0]]))
    img = data.read_pnm(tmp_path / "m.pgm")
    assert img.min() == 0 and img.max() == 255
