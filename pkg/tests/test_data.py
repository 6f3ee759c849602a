import numpy as np
import pytest

from rankgan.data import (
    IMAGE_SIDE,
    MASK_KINDS,
    apply_mask,
    check_mask,
    data_dim,
    load_dataset,
    make_dataset,
    make_mask,
    ring8_centers,
    sample_real,
    save_dataset,
    split,
)


def test_gauss1d_left_half_mean():
    x = sample_real("gauss1d-pair", 2000, 0)
    left = x[:1000, 0]
    assert abs(left.mean() + 2) < 3 * 0.5 / np.sqrt(1000)
    assert abs(x[1000:, 0].mean() - 2) < 3 * 0.5 / np.sqrt(1000)


def test_ring8_radius_bound():
    x = sample_real("ring8", 5000, 1)
    r = np.linalg.norm(x, axis=1)
    assert np.all(np.abs(r - 1) < 0.25)


def test_ring8_centers_unit_circle():
    np.testing.assert_allclose(np.linalg.norm(ring8_centers(), axis=1), 1.0)


@pytest.mark.parametrize("kind", ["gauss1d-pair", "gauss2d", "ring8", "toy-faces"])
def test_sampler_deterministic_and_shaped(kind):
    a = sample_real(kind, 50, 3)
    b = sample_real(kind, 50, 3)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (50, data_dim(kind))
    assert not np.array_equal(a, sample_real(kind, 50, 4))


def test_toy_faces_range_and_structure():
    x = sample_real("toy-faces", 200, 0).reshape(-1, IMAGE_SIDE, IMAGE_SIDE)
    assert x.min() >= -1 and x.max() <= 1
    # border is background, eyes are bright dots in the upper half
    assert np.all(x[:, 0, :] == -1) and np.all(x[:, :, 0] == -1)
    assert np.all(x[:, 1:3].max(axis=(1, 2)) >= 0)
    # positions vary across samples
    assert len({img.tobytes() for img in (x > 0)}) > 5


def test_sampler_errors():
    with pytest.raises(ValueError):
        sample_real("mnist", 10, 0)
    with pytest.raises(ValueError):
        sample_real("ring8", 0, 0)


def test_split_100():
    s = split(100, 0)
    assert (len(s.train), len(s.val), len(s.test)) == (81, 9, 10)
    assert not set(s.train) & set(s.val) and not set(s.train) & set(s.test) and not set(s.val) & set(s.test)
    assert sorted(np.concatenate([s.train, s.val, s.test])) == list(range(100))


def test_split_deterministic():
    a, b = split(57, 9), split(57, 9)
    assert all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("train", "val", "test"))


def test_dataset_roundtrip(tmp_path):
    ds = make_dataset("ring8", 120, 5)
    save_dataset(tmp_path / "d.ckpt", ds)
    back = load_dataset(tmp_path / "d.ckpt")
    assert back.kind == "ring8"
    assert back.samples.tobytes() == ds.samples.tobytes()
    assert np.array_equal(back.test, ds.test)


@pytest.mark.parametrize("kind,hidden", [
    ("center-small", 4), ("center-large", 16), ("periocular-small", 48), ("periocular-large", 32),
])
def test_mask_geometry(kind, hidden):
    m = make_mask(kind)
    assert m.shape == (64,)
    assert int((m == 0).sum()) == hidden
    check_mask(m)


def test_center_large_hides_central_block():
    m = make_mask("center-large").reshape(8, 8)
    assert not m[2:6, 2:6].any()
    assert m.sum() == 48


def test_periocular_keeps_eye_band():
    small = make_mask("periocular-small").reshape(8, 8)
    assert small[1:3].all() and not small[0].any() and not small[3:].any()
    large = make_mask("periocular-large").reshape(8, 8)
    assert large[0:4].all() and not large[4:].any()


def test_check_mask_rejects_degenerate():
    with pytest.raises(ValueError):
        check_mask(np.ones(64))
    with pytest.raises(ValueError):
        check_mask(np.zeros(64))
    with pytest.raises(ValueError):
        check_mask(np.full(64, 0.5))


def test_apply_mask():
    img = np.random.default_rng(0).uniform(-1, 1, size=64)
    np.testing.assert_array_equal(apply_mask(img, np.ones(64)), img)
    one = np.zeros(64)
    one[10] = 1
    out = apply_mask(img, one, fill=0.0)
    assert out[10] == img[10] and np.count_nonzero(out) == 1
    m = make_mask("center-large")
    out = apply_mask(img, m, fill=-0.5)
    assert np.all(out[m == 0] == -0.5) and np.array_equal(out[m == 1], img[m == 1])


def test_mask_unknown():
    assert "center-large" in MASK_KINDS
    with pytest.raises(ValueError):
        make_mask("left-half")
