import logging

import numpy as np
import pytest

from crosscd import data as D
from crosscd.synthesis import BitemporalSample


def source(rng, h, w, stem="src"):
    return (stem, rng.random((h, w, 3)).astype(np.float32), rng.random((h, w, 3)).astype(np.float32),
            rng.integers(0, 2, (h, w)).astype(np.uint8))


def test_tile_counts(caplog):
    rng = np.random.default_rng(0)
    assert len(D.tile([source(rng, 1024, 1024)], 256)) == 16
    one = source(rng, 256, 256)
    t = D.tile([one], 256)
    assert len(t) == 1 and np.array_equal(t[0].pre, one[1]) and t[0].name == "src_0_0"
    assert len(D.tile([source(rng, 300, 300)], 256)) == 1
    with caplog.at_level(logging.WARNING):
        assert D.tile([source(rng, 100, 300, "small")], 256) == []
    assert "small" in caplog.text


def test_tiling_lossless():
    rng = np.random.default_rng(1)
    src = source(rng, 200, 130)
    tiles = D.tile([src], 64)
    rows = [np.concatenate([t.label for t in tiles[r * 2:(r + 1) * 2]], axis=1) for r in range(3)]
    np.testing.assert_array_equal(np.concatenate(rows, axis=0), src[3][:192, :128])
    rows = [np.concatenate([t.post for t in tiles[r * 2:(r + 1) * 2]], axis=1) for r in range(3)]
    np.testing.assert_array_equal(np.concatenate(rows, axis=0), src[2][:192, :128])


def test_layout_roundtrip(tmp_path):
    D.write_synthetic_layout(tmp_path, 3, 1, 1, size=32, seed=0)
    D.validate_layout(tmp_path, D.SPLITS)
    s = D.load_split(tmp_path, "train", 4.0)
    assert len(s) == 3 and s[0].post.shape == (8, 8, 3) and s[0].ratio == 4.0
    orig = D.synthetic_dataset(5, 32, 0)[0]
    np.testing.assert_array_equal(s[0].label, orig.label)
    np.testing.assert_allclose(s[0].pre, orig.pre, atol=0.5 / 255 + 1e-6)
    (tmp_path / "B" / f"{s[1].name}.png").unlink()
    with pytest.raises(FileNotFoundError):
        D.validate_layout(tmp_path)


def test_layout_tiling(tmp_path):
    src, dst = tmp_path / "src", tmp_path / "dst"
    rng = np.random.default_rng(2)
    samples = [BitemporalSample(*source(rng, 96, 64, f"s{i}")[1:], name=f"s{i}") for i in range(2)]
    D.write_layout(src, samples, {"train": ["s0"], "test": ["s1"]})
    splits = D.tile_layout(src, dst, 32)
    assert splits == {"train": [f"s0_{r}_{c}" for r in range(3) for c in range(2)],
                      "test": [f"s1_{r}_{c}" for r in range(3) for c in range(2)]}
    D.validate_layout(dst, ("train", "test"))


def test_unequal_pair_carries_its_ratio(tmp_path):
    rng = np.random.default_rng(3)
    s = BitemporalSample(rng.random((64, 64, 3)), rng.random((16, 16, 3)), np.zeros((64, 64), np.uint8), name="x")
    D.write_layout(tmp_path, [s], {"test": ["x"]})
    loaded = D.load_sample(tmp_path, "x", ratio=2.0)
    assert loaded.ratio == 4.0 and loaded.post.shape == (16, 16, 3)


def test_make_sweep():
    rng = np.random.default_rng(4)
    s = BitemporalSample(rng.random((256, 256, 3)).astype(np.float32), rng.random((256, 256, 3)).astype(np.float32),
                         rng.integers(0, 2, (256, 256)).astype(np.uint8))
    label_before = s.label.copy()
    out = D.make_sweep(s, D.SweepSpec([1, 2, 4]))
    assert len(out) == 3
    assert all(o.label is s.label for o in out)
    np.testing.assert_array_equal(out[0].pre, s.pre)
    np.testing.assert_array_equal(out[0].post, s.post)
    assert D.realized_lr_size((256, 256), 4) == (64, 64)
    assert D.realized_lr_size((256, 256), 1.3) == (197, 197)
    for o in out:
        assert o.post.shape == (256, 256, 3)
        np.testing.assert_array_equal(o.pre, s.pre)
    np.testing.assert_array_equal(s.label, label_before)


def test_to_lr_size():
    s = BitemporalSample(np.zeros((256, 256, 3), np.float32), np.zeros((256, 256, 3), np.float32),
                         np.zeros((256, 256), np.uint8))
    assert D.to_lr(s, 4).post.shape == (64, 64, 3)
    assert D.to_lr(s, 1).post is s.post


def test_sweep_spec_validation():
    assert D.SweepSpec().ratios == [1, 1.3, 2, 3, 4, 5, 6, 8]
    for bad in ([], [0.5, 2], [2, 1], [1, 1]):
        with pytest.raises(ValueError):
            D.SweepSpec(bad)


def test_batches():
    b = D.batches(17, 8, seed=0, epoch=0)
    assert [len(x) for x in b] == [8, 8, 1]
    assert sorted(sum(b, [])) == list(range(17))
    assert D.batches(17, 8, 0, 0) == b
    assert D.batches(17, 8, 0, 1) != b
    with pytest.raises(ValueError):
        D.batches(0)


def test_synthetic_fixture_deterministic():
    a, b = D.synthetic_dataset(4, 32, seed=3), D.synthetic_dataset(4, 32, seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.pre, y.pre)
        np.testing.assert_array_equal(x.label, y.label)
        assert x.pre.dtype == np.float32 and 0 <= x.pre.min() and x.pre.max() <= 1
        assert set(np.unique(x.label)) <= {0, 1}
