import numpy as np
import pytest
from PIL import Image

from gancompress.data import (REGIONS, FaceDataset, Sample, export_mt, iter_pairs, load_mt,
                              split_counts, synth_faces)


def test_synth_deterministic():
    a, b = synth_faces(8, 64, 7), synth_faces(8, 64, 7)
    assert a.ids == b.ids
    for x, y in zip(a, b):
        assert np.array_equal(x.image, y.image) and np.array_equal(x.masks, y.masks)
    assert not np.array_equal(a[0].image, synth_faces(8, 64, 8)[0].image)


def test_synth_masks_disjoint_nonempty():
    for s in synth_faces(16, 32, 3):
        assert s.masks.shape == (len(REGIONS), 32, 32)
        assert (s.masks.sum(axis=0) <= 1).all()
        assert all(m.any() for m in s.masks)
        assert s.image.dtype == np.float32
        assert -1 <= s.image.min() and s.image.max() <= 1


def test_makeup_shifts_lip_color():
    shift = np.array([0.35, -0.25, -0.15])
    ds = synth_faces(200, 64, 0, style_jitter=0.0)
    lips = {d: np.mean([s.image[:, s.masks[0]].mean(axis=1) for s in ds.domain(d)], axis=0)
            for d in ("makeup", "non_makeup")}
    np.testing.assert_allclose(lips["makeup"] - lips["non_makeup"], shift, atol=0.03)


@pytest.mark.parametrize("kwargs", [dict(n=0), dict(n=4, size=30)])
def test_synth_rejects(kwargs):
    with pytest.raises(ValueError):
        synth_faces(**kwargs)


def test_sample_validation():
    img = np.zeros((3, 4, 4), np.float32)
    with pytest.raises(ValueError):
        Sample(img + 2, "makeup", None, "x")
    with pytest.raises(ValueError):
        Sample(img, "party", None, "x")
    overlap = np.ones((3, 4, 4), bool)
    with pytest.raises(ValueError):
        Sample(img, "makeup", overlap, "x")


def test_split_counts():
    assert sum(split_counts({"makeup": 2719, "non_makeup": 1115}, 234 / 3834).values()) == 234
    assert split_counts({"a": 5, "b": 5}, 0.2) == {"a": 1, "b": 1}
    assert split_counts({"a": 0, "b": 0}, 0.5) == {"a": 0, "b": 0}


def test_mt_round_trip(tmp_path):
    ds = synth_faces(10, 32, 1)
    export_mt(ds, tmp_path)
    train = load_mt(tmp_path, "train", resolution=32, test_fraction=0.2)
    test = load_mt(tmp_path, "test", resolution=32, test_fraction=0.2)
    assert len(train) == 8 and len(test) == 2
    assert set(train.ids).isdisjoint(test.ids)
    assert sorted(train.ids + test.ids) == sorted(ds.ids)
    assert train.ids == load_mt(tmp_path, "train", resolution=32, test_fraction=0.2).ids
    by_id = {s.id: s for s in ds}
    for s in train:
        # 8-bit round trip
        assert np.abs(s.image - by_id[s.id].image).max() <= 1 / 127.5 + 1e-6
        assert np.array_equal(s.masks, by_id[s.id].masks)


def test_mt_resizes_and_skips_bad_files(tmp_path):
    for d in ("makeup", "non-makeup"):
        (tmp_path / d).mkdir()
        Image.new("RGB", (40, 30), (255, 0, 0)).save(tmp_path / d / "a.png")
    (tmp_path / "makeup" / "b.png").write_bytes(b"not an image")
    ds = load_mt(tmp_path, "train", resolution=16, test_fraction=0.0)
    assert ds.skipped == 1
    assert len(ds) == 2
    assert ds[0].image.shape == (3, 16, 16)
    assert ds[0].masks is None
    assert ds[0].image[0].min() == 1.0


def test_mt_missing_dirs(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing directories"):
        load_mt(tmp_path, "train")
    with pytest.raises(ValueError):
        load_mt(tmp_path, "val")


def test_iter_pairs_deterministic_and_complete():
    ds = synth_faces(12, 16, 0)
    run = lambda epoch: [(b.src_ids, b.ref_ids) for b in iter_pairs(ds, 4, 3, epoch)]
    assert run(0) == run(0)
    assert run(0) != run(1)
    batches = list(iter_pairs(ds, 4, 3, 0))
    assert [len(b.src) for b in batches] == [4, 2]
    src_ids = sum((b.src_ids for b in batches), [])
    assert sorted(src_ids) == sorted(s.id for s in ds.domain("non_makeup"))
    assert all(i.startswith("makeup/") for b in batches for i in b.ref_ids)


def test_iter_pairs_flips_images_and_masks_together():
    ds = FaceDataset([s for s in synth_faces(2, 16, 0)])
    seen = set()
    for epoch in range(8):
        (b,) = list(iter_pairs(ds, 1, 0, epoch))
        flipped = not np.array_equal(b.src[0], ds[0].image)
        seen.add(flipped)
        want = ds[0].masks[..., ::-1] if flipped else ds[0].masks
        assert np.array_equal(b.src_masks[0], want)
    assert seen == {True, False}
    (b,) = list(iter_pairs(ds, 1, 0, 0, augment=False))
    assert np.array_equal(b.src[0], ds[0].image)


def test_iter_pairs_needs_both_domains():
    ds = FaceDataset([s for s in synth_faces(4, 16, 0) if s.domain == "makeup"])
    with pytest.raises(ValueError):
        next(iter_pairs(ds, 1, 0, 0))
