import gzip
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privset import data as D


def _write_pair(tmp_path, images, labels, gz=False):
    suffix = ".gz" if gz else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    D.write_idx(ip, images)
    D.write_idx(lp, labels)
    return ip, lp


def _tiny(tmp_path, gz=False):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (2, 28, 28), dtype=np.uint8)
    return images, _write_pair(tmp_path, images, np.array([3, 7], np.uint8), gz)


@pytest.mark.parametrize("gz", [False, True])
def test_idx_fixture(tmp_path, gz):
    images, (ip, lp) = _tiny(tmp_path, gz)
    ds = D.load_idx(ip, lp)
    assert len(ds) == 2
    assert ds.features.shape == (2, 1, 28, 28)
    assert ds.labels.tolist() == [3, 7]
    raw = ds.normalization.invert(ds.features)
    np.testing.assert_allclose(raw[:, 0], images / 255.0, atol=1e-6)


def test_idx_count_mismatch(tmp_path):
    images = np.zeros((2, 4, 4), np.uint8)
    ip, lp = _write_pair(tmp_path, images, np.array([1, 2, 3], np.uint8))
    with pytest.raises(D.CountMismatchError):
        D.load_idx(ip, lp)


def test_idx_bad_magic(tmp_path):
    _, (ip, lp) = _tiny(tmp_path)
    raw = bytearray(ip.read_bytes())
    raw[2:4] = b"\x08\x02"
    ip.write_bytes(bytes(raw))
    with pytest.raises(D.DataFormatError) as info:
        D.load_idx(ip, lp)
    assert not isinstance(info.value, (D.TruncatedFileError, D.CountMismatchError))


def test_idx_labels_as_images_rejected(tmp_path):
    _, (ip, lp) = _tiny(tmp_path)
    with pytest.raises(D.DataFormatError):
        D.load_idx(lp, ip)


def test_idx_truncated(tmp_path):
    _, (ip, lp) = _tiny(tmp_path)
    ip.write_bytes(ip.read_bytes()[:-10])
    with pytest.raises(D.TruncatedFileError):
        D.load_idx(ip, lp)


def test_idx_trailing_bytes(tmp_path):
    _, (ip, lp) = _tiny(tmp_path)
    ip.write_bytes(ip.read_bytes() + b"\0")
    with pytest.raises(D.DataFormatError):
        D.load_idx(ip, lp)


def test_idx_big_endian_header(tmp_path):
    _, (ip, _) = _tiny(tmp_path)
    magic, n, h, w = struct.unpack(">IIII", ip.read_bytes()[:16])
    assert (magic, n, h, w) == (0x803, 2, 28, 28)


def test_gzip_files_are_reproducible(tmp_path):
    a, b = tmp_path / "a.gz", tmp_path / "b.gz"
    D.write_idx(a, np.arange(5, dtype=np.uint8))
    D.write_idx(b, np.arange(5, dtype=np.uint8))
    assert a.read_bytes() == b.read_bytes()
    assert gzip.decompress(a.read_bytes())[:4] == b"\0\0\x08\x01"


def test_downsample_and_normalization_replay(tmp_path):
    _, (ip, lp) = _tiny(tmp_path)
    train = D.load_idx(ip, lp, downsample=2)
    assert train.data_shape == (1, 14, 14)
    assert abs(float(train.features.mean())) < 1e-6
    again = D.load_idx(ip, lp, train.normalization, role="test", downsample=2)
    np.testing.assert_allclose(again.features, train.features, atol=1e-6)
    assert again.role == "test"


def test_normalization_roundtrip():
    norm = D.Normalization(0.13, 0.31)
    x = np.random.default_rng(0).random((4, 3)).astype(np.float32)
    np.testing.assert_allclose(norm.invert(norm.apply(x)), x, atol=1e-6)


def test_dataset_is_read_only():
    ds = D.LabeledDataset(np.zeros((2, 3), np.float32), np.array([0, 1]), 2)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_dataset_validation():
    with pytest.raises(ValueError):
        D.LabeledDataset(np.zeros((2, 3)), np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        D.LabeledDataset(np.full((1, 3), np.inf), np.array([0]), 2)


def test_csv_roundtrip(tmp_path):
    x = np.arange(12, dtype=np.float32).reshape(4, 3)
    y = np.array([0, 1, 2, 1])
    D.save_csv(tmp_path / "a.csv", x, y)
    ds = D.load_csv(tmp_path / "a.csv")
    assert ds.labels.tolist() == y.tolist()
    np.testing.assert_allclose(ds.normalization.invert(ds.features), x, atol=1e-5)


def test_csv_rejects_bad_labels(tmp_path):
    (tmp_path / "b.csv").write_text("0.5,1,2\n1,2,3\n")
    with pytest.raises(D.DataFormatError):
        D.load_csv(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("1,x\n")
    with pytest.raises(D.DataFormatError):
        D.load_csv(tmp_path / "c.csv")


# sampling


def test_poisson_full_rate():
    assert D.poisson_batch(7, 1.0, np.random.default_rng(0)).tolist() == list(range(7))


def test_poisson_is_reproducible():
    a = D.poisson_batch(50, 0.3, np.random.default_rng(4))
    b = D.poisson_batch(50, 0.3, np.random.default_rng(4))
    assert np.array_equal(a, b)


def test_poisson_mean_size():
    rng = np.random.default_rng(0)
    draws = 100_000
    sizes = np.array([len(D.poisson_batch(100, 0.01, rng)) for _ in range(draws)])
    se = np.sqrt(100 * 0.01 * 0.99 / draws)
    assert abs(sizes.mean() - 1.0) < 3 * se


def test_poisson_pairwise_independence():
    rng = np.random.default_rng(1)
    n, q, draws = 6, 0.3, 40_000
    inc = np.zeros((draws, n))
    for t in range(draws):
        inc[t, D.poisson_batch(n, q, rng)] = 1
    cov = np.cov(inc, rowvar=False)
    se = q * (1 - q) / np.sqrt(draws)
    off = cov[~np.eye(n, dtype=bool)]
    assert np.all(np.abs(off) < 3 * se)


def test_poisson_rate_validation():
    with pytest.raises(ValueError):
        D.poisson_batch(10, 0.0, np.random.default_rng(0))


# class splits


def _labeled(labels, num_classes=10):
    labels = np.asarray(labels)
    return D.LabeledDataset(np.arange(len(labels), dtype=np.float32)[:, None], labels,
                            num_classes)


def test_class_split_pairs():
    ds = _labeled(np.arange(100) % 10)
    parts = D.class_split(ds, [{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}])
    assert len(parts) == 5
    for i, p in enumerate(parts):
        assert set(p.labels.tolist()) == {2 * i, 2 * i + 1}
        assert np.all(np.diff(p.features[:, 0]) > 0)
        assert p.role == f"train:partition{i}"


def test_class_split_identity():
    ds = _labeled(np.arange(30) % 10)
    (p,) = D.class_split(ds, [set(range(10))])
    assert np.array_equal(p.features, ds.features)
    assert np.array_equal(p.labels, ds.labels)


def test_class_split_overlap():
    with pytest.raises(ValueError):
        D.class_split(_labeled([0, 1, 2]), [{0, 1}, {1, 2}])


def test_class_split_empty_class_warns():
    with pytest.warns(UserWarning):
        parts = D.class_split(_labeled([0, 0, 1]), [{0}, {5}])
    assert len(parts[1]) == 0


# container


def _syn(seed=0, spc=3, L=2, shape=(1, 4, 4)):
    x = np.random.default_rng(seed).standard_normal((spc * L,) + shape).astype(np.float32)
    return D.SyntheticSet(x, D.balanced_labels(spc, L), spc, L)


def test_container_roundtrip(tmp_path):
    syn = _syn()
    raw = D.save_synthetic(syn, tmp_path / "s.psg")
    back = D.load_synthetic(tmp_path / "s.psg")
    assert back.features.tobytes() == syn.features.tobytes()
    assert np.array_equal(back.labels, syn.labels)
    assert (back.spc, back.num_classes) == (3, 2)
    assert raw.startswith(b"PSGSET\0")
    assert D.encode_synthetic(back.features, back.labels, 2, 3) == raw


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(2, 5), st.integers(0, 10_000),
       st.sampled_from([(3,), (1, 2, 2), (2, 3, 1)]))
def test_container_roundtrip_property(spc, L, seed, shape):
    syn = _syn(seed, spc, L, shape)
    x, y, L2, spc2 = D.decode_synthetic(D.encode_synthetic(syn.features, syn.labels, L, spc))
    assert x.tobytes() == syn.features.tobytes()
    assert np.array_equal(y, syn.labels) and (L2, spc2) == (L, spc)


def test_container_crc(tmp_path):
    raw = bytearray(D.encode_synthetic(*_container_args()))
    raw[-1] ^= 0xFF
    with pytest.raises(D.IntegrityError):
        D.decode_synthetic(bytes(raw))
    raw = bytearray(D.encode_synthetic(*_container_args()))
    raw[40] ^= 0x01
    with pytest.raises(D.IntegrityError):
        D.decode_synthetic(bytes(raw))


def _container_args():
    syn = _syn()
    return syn.features, syn.labels, syn.num_classes, syn.spc


def test_container_version():
    raw = bytearray(D.encode_synthetic(*_container_args()))
    raw[7] += 1
    with pytest.raises(D.UnsupportedVersionError):
        D.decode_synthetic(bytes(raw))


def test_container_magic():
    raw = b"XSGSET\0" + D.encode_synthetic(*_container_args())[7:]
    with pytest.raises(D.ContainerError):
        D.decode_synthetic(raw)


def test_synthetic_set_validation():
    with pytest.raises(ValueError):
        D.SyntheticSet(np.zeros((4, 2)), np.array([0, 0, 0, 1]), 2, 2)
    with pytest.raises(ValueError):
        D.SyntheticSet(np.full((2, 2), np.nan), np.array([0, 1]), 1, 2)


def test_image_grid_and_pgm(tmp_path):
    syn = _syn(spc=3, L=2, shape=(1, 5, 5))
    grid = D.image_grid(syn.features, syn.labels, 2, pad=1)
    assert grid.shape == (2 * 6 + 1, 3 * 6 + 1)
    assert grid.dtype == np.uint8
    D.write_pgm(tmp_path / "g.pgm", grid)
    raw = (tmp_path / "g.pgm").read_bytes()
    assert raw.startswith(b"P5\n19 13\n255\n")
    assert len(raw) == len(b"P5\n19 13\n255\n") + grid.size


def test_image_grid_clamps_with_normalization():
    x = np.array([[[[10.0]]], [[[-10.0]]]], np.float32)
    grid = D.image_grid(x, [0, 1], 2, D.Normalization(0.0, 1.0), pad=0)
    assert grid[:, 0].tolist() == [255, 0]


def test_no_warnings_on_clean_split():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        D.class_split(_labeled(np.arange(20) % 2, 2), [{0}, {1}])
