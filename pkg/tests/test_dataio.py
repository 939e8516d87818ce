import gzip
import struct

import numpy as np
import pytest

from homossl.dataio import (
    Dataset,
    IdxFormatError,
    downscale2x,
    load_idx,
    load_mnist_desk,
    make_templates,
    oracle_features,
    read_idx,
    save_idx,
    synth_dataset,
    write_idx,
)
from homossl.experiments import ProbeSpec, linear_probe
from homossl.nets import input_transform, make_family
from homossl.sampling import SeededRng


def write_pair(tmp_path, n=5, h=4, w=4, gz=False):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(n, h, w), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    ext = ".gz" if gz else ""
    ip, lp = tmp_path / f"imgs{ext}", tmp_path / f"labels{ext}"
    write_idx(ip, imgs)
    write_idx(lp, labels)
    return ip, lp, imgs, labels


def test_idx_header_layout(tmp_path):
    ip, lp, imgs, _ = write_pair(tmp_path, n=3, h=2, w=5)
    raw = ip.read_bytes()
    assert raw[:4] == bytes([0, 0, 8, 3])
    assert struct.unpack(">3I", raw[4:16]) == (3, 2, 5)
    assert lp.read_bytes()[:4] == bytes([0, 0, 8, 1])


@pytest.mark.parametrize("gz", [False, True])
def test_load_idx(tmp_path, gz):
    ip, lp, imgs, labels = write_pair(tmp_path, gz=gz)
    ds = load_idx(ip, lp)
    assert ds.images.shape == (5, 1, 4, 4)
    assert np.array_equal(ds.images[:, 0], imgs / 255.0)
    assert np.array_equal(ds.labels, labels)
    assert 0.0 <= ds.images.min() and ds.images.max() <= 1.0


def test_limit_zero_gives_empty_dataset(tmp_path):
    ip, lp, *_ = write_pair(tmp_path)
    ds = load_idx(ip, lp, limit=0)
    assert len(ds) == 0 and ds.images.shape == (0, 1, 4, 4)


def test_idx_round_trip_bit_identical(tmp_path):
    ip, lp, *_ = write_pair(tmp_path)
    ds = load_idx(ip, lp)
    save_idx(ds, tmp_path / "a", tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == ip.read_bytes()
    again = load_idx(tmp_path / "a", tmp_path / "b")
    assert again.images.tobytes() == ds.images.tobytes()


def test_corrupt_magic_names_offset(tmp_path):
    ip, lp, *_ = write_pair(tmp_path)
    raw = bytearray(ip.read_bytes())
    raw[0] = 7
    ip.write_bytes(bytes(raw))
    with pytest.raises(IdxFormatError) as err:
        load_idx(ip, lp)
    assert err.value.offset == 0 and "offset 0" in str(err.value)


def test_label_file_with_image_magic(tmp_path):
    ip, lp, *_ = write_pair(tmp_path)
    with pytest.raises(IdxFormatError) as err:
        load_idx(ip, ip)
    assert err.value.offset == 3


def test_truncated_and_trailing(tmp_path):
    ip, lp, *_ = write_pair(tmp_path)
    raw = ip.read_bytes()
    ip.write_bytes(raw[:-3])
    with pytest.raises(IdxFormatError, match="truncated"):
        read_idx(ip)
    ip.write_bytes(raw[:10])
    with pytest.raises(IdxFormatError, match="truncated"):
        read_idx(ip)
    ip.write_bytes(raw + b"\x00")
    with pytest.raises(IdxFormatError, match="trailing"):
        read_idx(ip)


def test_length_mismatch(tmp_path):
    ip, _, imgs, _ = write_pair(tmp_path)
    lp = tmp_path / "short"
    write_idx(lp, np.zeros(4, dtype=np.uint8))
    with pytest.raises(IdxFormatError, match="labels"):
        load_idx(ip, lp)


def test_mnist_desk_loader(tmp_path):
    rng = np.random.default_rng(1)
    for stem, n in (("train", 6), ("t10k", 4)):
        write_idx(tmp_path / f"{stem}-images-idx3-ubyte.gz",
                  rng.integers(0, 256, (n, 28, 28), dtype=np.uint8))
        write_idx(tmp_path / f"{stem}-labels-idx1-ubyte",
                  rng.integers(0, 10, n, dtype=np.uint8))
    train, test = load_mnist_desk(tmp_path, n_train=5, n_test=3)
    assert train.images.shape == (5, 1, 14, 14) and test.images.shape == (3, 1, 14, 14)
    with pytest.raises(FileNotFoundError):
        load_mnist_desk(tmp_path / "missing")


def test_downscale_is_block_mean():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    out = downscale2x(Dataset(x, np.zeros(1, dtype=np.int64))).images
    assert np.array_equal(out[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def test_noise_free_examples_are_posed_templates():
    fam = make_family("c4", 3)
    ds = synth_dataset(1, fam, SeededRng(0), noise=0.0)
    t = make_templates(fam)
    for img, label, pose in zip(ds.images, ds.labels, ds.meta["poses"]):
        assert np.array_equal(img, input_transform(t[label], fam.group, pose))


def test_templates_are_mirror_images():
    t = make_templates(make_family("c4", 3))
    assert np.array_equal(t[1, 0], t[0, 0][:, ::-1])
    C = make_family("c4", 3).group
    assert all(not np.array_equal(input_transform(t[0], C, g), t[1]) for g in range(4))


@pytest.mark.parametrize("family", ["translation", "c4", "p4", "scale"])
def test_synthetic_balanced_deterministic_normalized(family):
    fam = make_family(family, 6)
    a = synth_dataset(20, fam, SeededRng(3), noise=0.3)
    b = synth_dataset(20, fam, SeededRng(3), noise=0.3)
    assert np.bincount(a.labels).tolist() == [20, 20]
    assert a.images.tobytes() == b.images.tobytes()
    assert a.images.min() == 0.0 and a.images.max() == 1.0


@pytest.mark.parametrize("family,grid,period", [("c4", 10, 5), ("translation", 4, None),
                                                ("p4", 6, None), ("scale", 6, None)])
def test_oracle_features_solve_task(family, grid, period):
    fam = make_family(family, grid)
    train = synth_dataset(64, fam, SeededRng(0, ("train",)), period=period)
    test = synth_dataset(64, fam, SeededRng(0, ("test",)), period=period)
    acc = linear_probe(oracle_features(train, fam, period=period), train.labels,
                       oracle_features(test, fam, period=period), test.labels, ProbeSpec())
    assert acc == 1.0


def test_dataset_length_check():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 1, 2, 2)), np.zeros(2, dtype=np.int64))
