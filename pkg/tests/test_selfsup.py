import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from selfsup_uda.gradcore import Tensor, UsageError
from selfsup_uda.model import ConfigError
from selfsup_uda.selfsup import (TaskSpec, decode_corner, make_batch, make_flip_batch,
                                 make_loc4_batch, make_loc_regress_batch, make_rotation_batch,
                                 rotate90, task_loss, vflip)

SQ = np.array([[[1, 2], [3, 4]]], dtype=np.float32)

images_strategy = arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 6), st.integers(1, 6)),
                         elements=st.floats(0, 1, width=32))
square_strategy = st.integers(1, 6).flatmap(
    lambda s: arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 3), st.just(s), st.just(s)),
                     elements=st.floats(0, 1, width=32)))


def test_rotate90_examples():
    np.testing.assert_array_equal(rotate90(SQ, 1), [[[2, 4], [1, 3]]])
    np.testing.assert_array_equal(rotate90(SQ, 0), SQ)
    x = np.random.default_rng(0).standard_normal((2, 3, 5)).astype(np.float32)
    assert rotate90(x, 1).shape == (2, 5, 3)
    y = x
    for _ in range(4):
        y = rotate90(y, 1)
    assert y.tobytes() == x.tobytes()
    with pytest.raises(ValueError):
        rotate90(SQ, 4)


def test_rotate90_index_rule():
    x = np.arange(12.0).reshape(1, 3, 4)
    r = rotate90(x, 1)
    n = x.shape[2]
    for i in range(r.shape[1]):
        for j in range(r.shape[2]):
            assert r[0, i, j] == x[0, j, n - 1 - i]


def test_vflip_examples():
    np.testing.assert_array_equal(vflip(SQ), [[[3, 4], [1, 2]]])
    np.testing.assert_array_equal(vflip(vflip(SQ)), SQ)


def test_rotation_batch_label_frequencies():
    x = np.zeros((10000, 1, 2, 2), np.float32)
    b = make_rotation_batch(x, np.random.default_rng(0))
    freq = np.bincount(b.labels, minlength=4) / 10000
    assert set(np.unique(b.labels)) <= {0, 1, 2, 3}
    assert np.all(np.abs(freq - 0.25) <= 0.02)


def test_rotation_batch_reproducible_and_expand():
    x = np.random.default_rng(1).uniform(size=(5, 1, 4, 4)).astype(np.float32)
    a = make_rotation_batch(x, np.random.default_rng(7))
    b = make_rotation_batch(x, np.random.default_rng(7))
    assert a.images.tobytes() == b.images.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    e = make_rotation_batch(x, np.random.default_rng(0), expand=True)
    assert len(e.images) == 20
    np.testing.assert_array_equal(e.labels[:4], [0, 1, 2, 3])


@given(square_strategy, st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_rotation_labels_invert(images, seed):
    b = make_rotation_batch(images, np.random.default_rng(seed))
    for i, k in enumerate(b.labels):
        assert rotate90(b.images[i], (4 - k) % 4).tobytes() == images[i].tobytes()


@given(images_strategy, st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_flip_labels_invert(images, seed):
    b = make_flip_batch(images, np.random.default_rng(seed))
    for i, k in enumerate(b.labels):
        back = vflip(b.images[i]) if k == 1 else b.images[i]
        assert back.tobytes() == images[i].tobytes()
    assert b.images[b.labels == 0].tobytes() == images[b.labels == 0].tobytes()


def test_flip_frequency():
    b = make_flip_batch(np.zeros((10000, 1, 2, 2), np.float32), np.random.default_rng(2))
    assert abs(b.labels.mean() - 0.5) <= 0.02


def test_loc4_top_left_quadrant():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    rng = np.random.default_rng(0)
    for _ in range(50):
        b = make_loc4_batch(x, 2, rng)
        label = b.labels[0]
        r, c = divmod(label, 2)
        np.testing.assert_array_equal(b.images[0, 0], x[0, 0, 2 * r:2 * r + 2, 2 * c:2 * c + 2])
    # quadrant (0,0) is the top-left block with label 0
    picks = [make_loc4_batch(x, 2, np.random.default_rng(s)) for s in range(40)]
    tl = [p for p in picks if p.labels[0] == 0]
    assert tl and np.array_equal(tl[0].images[0, 0], [[0, 1], [4, 5]])


def test_loc4_quadrant_frequencies_and_contiguity():
    x = np.arange(64, dtype=np.float32).reshape(1, 1, 8, 8).repeat(10000, axis=0)
    b = make_loc4_batch(x, 3, np.random.default_rng(3))
    freq = np.bincount(b.labels, minlength=4) / 10000
    assert np.all(np.abs(freq - 0.25) <= 0.02)
    for i in range(200):
        patch = b.images[i, 0]
        r0, c0 = divmod(int(patch[0, 0]), 8)
        np.testing.assert_array_equal(patch, x[0, 0, r0:r0 + 3, c0:c0 + 3])
        assert (r0 >= 4) == (b.labels[i] >= 2) and (c0 >= 4) == (b.labels[i] % 2 == 1)
        assert r0 % 4 + 3 <= 4 and c0 % 4 + 3 <= 4


def test_loc4_patch_too_large():
    with pytest.raises(ConfigError):
        make_loc4_batch(np.zeros((1, 1, 4, 4), np.float32), 3, np.random.default_rng(0))


def test_loc_regress_boundaries_and_roundtrip():
    H = W = 8
    p = 4
    x = np.arange(64, dtype=np.float32).reshape(1, 1, 8, 8).repeat(4000, axis=0)
    b = make_loc_regress_batch(x, p, np.random.default_rng(0))
    assert b.labels.min() >= 0 and b.labels.max() <= 1
    seen = set()
    for i in range(len(b.labels)):
        r, c = decode_corner(b.labels[i], H, W, p)
        assert int(b.images[i, 0, 0, 0]) == r * 8 + c
        seen.add((r, c))
    assert len(seen) == 25
    # exhaustive corner round trip, including (0,0) -> (0,0) and max -> (1,1)
    for r in range(H - p + 1):
        for c in range(W - p + 1):
            target = (r / (H - p), c / (W - p))
            assert decode_corner(target, H, W, p) == (r, c)
    assert (0 / (H - p), 0 / (W - p)) == (0.0, 0.0)
    assert ((H - p) / (H - p), (W - p) / (W - p)) == (1.0, 1.0)


def test_loc_regress_patch_too_large():
    with pytest.raises(ConfigError):
        make_loc_regress_batch(np.zeros((1, 1, 4, 4), np.float32), 4, np.random.default_rng(0))


even_square_strategy = st.integers(1, 3).flatmap(
    lambda h: arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(1, 4), st.just(2 * h), st.just(2 * h)),
                     elements=st.floats(0, 1, width=32)))


@given(even_square_strategy,
       st.sampled_from(["rotation", "vflip", "loc4", "loc_regress"]), st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_brightness_scaling_commutes(images, kind, seed):
    task = TaskSpec(1, kind, patch_size=1 if kind.startswith("loc") else None)
    plain = make_batch(task, images, np.random.default_rng(seed))
    scaled = make_batch(task, np.float32(0.5) * images, np.random.default_rng(seed))
    assert scaled.images.tobytes() == (np.float32(0.5) * plain.images).tobytes()
    np.testing.assert_array_equal(scaled.labels, plain.labels)


def test_task_loss_kinds():
    assert task_loss(TaskSpec(1, "rotation"), Tensor(np.zeros((3, 4))), np.array([0, 1, 2])).item() == pytest.approx(np.log(4))
    assert task_loss(TaskSpec(1, "vflip"), Tensor(np.zeros((3, 2))), np.array([0, 1, 1])).item() == pytest.approx(np.log(2))
    t = np.random.default_rng(0).uniform(size=(3, 2))
    assert task_loss(TaskSpec(1, "loc_regress"), Tensor(t), t).item() == 0
    with pytest.raises(UsageError):
        task_loss(TaskSpec(1, "loc_regress"), Tensor(np.zeros((3, 2))), np.array([0, 1, 1]))
    with pytest.raises(UsageError):
        task_loss(TaskSpec(1, "rotation"), Tensor(np.zeros((3, 4))), t)


def test_task_spec_dims_and_validation():
    assert [TaskSpec(1, k).output_dim for k in ("rotation", "vflip", "loc4", "loc_regress")] == [4, 2, 4, 2]
    assert TaskSpec(1, "loc_regress").head_config().kind == "regression"
    with pytest.raises(ConfigError):
        TaskSpec(1, "hflip")
    with pytest.raises(ConfigError):
        TaskSpec(0, "rotation")


def test_constructors_take_no_main_labels():
    import inspect
    for fn in (make_rotation_batch, make_flip_batch, make_loc4_batch, make_loc_regress_batch, make_batch):
        assert "labels" not in inspect.signature(fn).parameters
