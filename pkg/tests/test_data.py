import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from biqc.data import (
    IDX_IMAGES,
    IDX_LABELS,
    Checkpoint,
    Dataset,
    gen_texture,
    load_checkpoint,
    load_idx,
    load_pgm_dir,
    normalize_batch,
    normalize_minmax,
    read_idx,
    read_pgm,
    resize,
    save_checkpoint,
    split,
    write_idx,
    write_pgm,
)


def _idx_pair(tmp_path, gz=False):
    images = np.arange(6 * 8 * 8, dtype=np.uint8).reshape(6, 8, 8)
    labels = np.array([3, 5, 7, 3, 5, 1], dtype=np.uint8)
    suffix = ".gz" if gz else ""
    write_idx(tmp_path / f"img{suffix}", images)
    write_idx(tmp_path / f"lbl{suffix}", labels)
    return tmp_path / f"img{suffix}", tmp_path / f"lbl{suffix}", images, labels


def test_idx_header_example(tmp_path):
    raw = bytes([0, 0, 8, 3]) + struct.pack(">III", 2, 8, 8) + bytes(range(128))
    (tmp_path / "x").write_bytes(raw)
    arr = read_idx(tmp_path / "x", IDX_IMAGES)
    assert arr.shape == (2, 8, 8) and arr[1, 7, 7] == 127


@pytest.mark.parametrize("gz", [False, True])
def test_idx_round_trip_filter_remap(tmp_path, gz):
    img, lbl, images, labels = _idx_pair(tmp_path, gz)
    if gz:
        assert img.read_bytes()[:2] == b"\x1f\x8b"
    ds = load_idx(img, lbl, keep_labels=(3, 5), remap={3: 0, 5: 1})
    assert np.array_equal(ds.labels, [0, 1, 0, 1])
    assert np.array_equal(ds.images, images[[0, 1, 3, 4]])


def test_gzip_detected_by_content_not_suffix(tmp_path):
    raw = bytes([0, 0, 8, 1]) + struct.pack(">I", 3) + bytes([0, 1, 1])
    (tmp_path / "plain.idx").write_bytes(gzip.compress(raw))
    assert np.array_equal(read_idx(tmp_path / "plain.idx", IDX_LABELS), [0, 1, 1])


def test_idx_errors(tmp_path):
    img, lbl, _, _ = _idx_pair(tmp_path)
    with pytest.raises(ValueError, match="0x00000801"):
        read_idx(lbl, IDX_IMAGES)
    (tmp_path / "short").write_bytes(img.read_bytes()[:-5])
    with pytest.raises(ValueError, match="truncated IDX payload"):
        read_idx(tmp_path / "short", IDX_IMAGES)
    (tmp_path / "tiny").write_bytes(b"\x00\x00")
    with pytest.raises(ValueError, match="truncated IDX header"):
        read_idx(tmp_path / "tiny", IDX_IMAGES)
    write_idx(tmp_path / "five", np.zeros(5, np.uint8))
    with pytest.raises(ValueError, match="6 images but .* 5 labels"):
        load_idx(img, tmp_path / "five")
    with pytest.raises(FileNotFoundError):
        read_idx(tmp_path / "missing", IDX_IMAGES)


def test_pgm_example(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P5\n# comment\n2 2\n255\n" + bytes([0, 64, 128, 255]))
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), [[0, 64], [128, 255]])
    (tmp_path / "b.pgm").write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(ValueError, match="P5"):
        read_pgm(tmp_path / "b.pgm")


def test_pgm_dir(tmp_path):
    write_pgm(tmp_path / "disc_0.pgm", np.zeros((4, 4)))
    write_pgm(tmp_path / "square_0.pgm", np.full((4, 4), 9))
    write_pgm(tmp_path / "other.pgm", np.zeros((4, 4)))
    ds = load_pgm_dir(tmp_path, "disc", "square")
    assert ds.labels.tolist() == [0, 1] and ds.resolution == (4, 4)
    write_pgm(tmp_path / "square_1.pgm", np.zeros((5, 4)))
    with pytest.raises(ValueError, match=r"4x4 \(disc_0.pgm\).*5x4 \(square_1.pgm\)"):
        load_pgm_dir(tmp_path, "disc", "square")


def test_pgm_dir_empty(tmp_path):
    with pytest.raises(ValueError, match="no PGM files"):
        load_pgm_dir(tmp_path, "disc", "square")


def test_normalize_examples():
    out = normalize_minmax([[0.0, 255.0], [127.5, 255.0]])
    assert np.allclose(out, [[-np.pi / 2, np.pi / 2], [0.0, np.pi / 2]], atol=1e-15)
    assert np.array_equal(normalize_minmax(np.full((3, 3), 7.0)), np.zeros((3, 3)))


@given(arrays(np.float64, array_shapes(min_dims=2, max_dims=2, max_side=6), elements=st.floats(0, 255)))
def test_normalize_range(image):
    out = normalize_batch(image[None])[0]
    assert np.all(np.abs(out) <= np.pi / 2)
    if image.max() > image.min():
        assert out.min() == -np.pi / 2 and out.max() == pytest.approx(np.pi / 2)


def test_resize_box_average():
    img = np.array([[[0.0, 2.0], [4.0, 6.0]]])
    assert resize(img, 1, 1)[0, 0, 0] == pytest.approx(3.0)
    assert resize(np.zeros((3, 28, 28)), 8, 8).shape == (3, 8, 8)


def test_gen_texture():
    ds = gen_texture(50, 64, seed=0)
    assert len(ds) == 100 and np.bincount(ds.labels).tolist() == [50, 50]
    assert ds.images.shape == (100, 64, 64)
    assert all(img.max() >= 200 and img.min() <= 20 for img in ds.images)
    again = gen_texture(50, 64, seed=0)
    assert np.array_equal(ds.images, again.images)
    assert not np.array_equal(ds.images, gen_texture(50, 64, seed=1).images)
    with pytest.raises(ValueError, match="64"):
        gen_texture(2, 32, 0)


def test_split_disjoint_and_seeded():
    ds = Dataset(np.arange(20.0).reshape(20, 1, 1), np.arange(20) % 2, "t")
    tr, te = split(ds, 12, 8, seed=4)
    assert sorted(tr.images.ravel().tolist() + te.images.ravel().tolist()) == list(range(20))
    tr2, _ = split(ds, 12, 8, seed=4)
    assert np.array_equal(tr.images, tr2.images)
    with pytest.raises(ValueError):
        split(ds, 15, 8, 0)


def test_dataset_validation():
    with pytest.raises(ValueError, match="0 or 1"):
        Dataset(np.zeros((2, 2, 2)), np.array([0, 2]), "x")
    with pytest.raises(ValueError, match="labels"):
        Dataset(np.zeros((2, 2, 2)), np.array([0]), "x")


_tensors = st.dictionaries(
    st.text("abcdefgh.", min_size=1, max_size=6),
    arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=4), elements=st.floats(allow_nan=False)),
    max_size=4,
)


@given(_tensors, st.dictionaries(st.text("xyz_.", min_size=1, max_size=5), st.integers() | st.text(max_size=5), max_size=3))
def test_checkpoint_round_trip(tmp_path_factory, tensors, config):
    path = tmp_path_factory.mktemp("ck") / "m.biqc"
    save_checkpoint(path, Checkpoint(tensors, config))
    back = load_checkpoint(path)
    assert back.config == config and list(back.tensors) == list(tensors)
    assert all(np.array_equal(back.tensors[k], tensors[k]) and back.tensors[k].shape == tensors[k].shape for k in tensors)


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.biqc"
    save_checkpoint(path, Checkpoint({"w": np.ones(3), "head.bias": np.ones((2, 2))}, {"seed": 1}))
    raw = path.read_bytes()
    (tmp_path / "cut").write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="tensor 'head.bias'"):
        load_checkpoint(tmp_path / "cut")
    (tmp_path / "v2").write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(ValueError, match="version 2 is not supported"):
        load_checkpoint(tmp_path / "v2")
    (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "bad")
