import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selfsup_uda.data import (ConsistencyError, DomainPair, IdxFormatError, LabeledSet, ShiftSpec,
                              UnlabeledSet, apply_shift, balanced_batches, balanced_epoch,
                              balanced_epoch_length, load_idx, make_domain_pair, read_idx,
                              render_digits, save_idx, source_epoch, split, to_channels, write_idx)
from selfsup_uda.model import ConfigError


def _write_pair(tmp_path, pixels, labels):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    n = len(labels)
    img.write_bytes(struct.pack(">IIII", 0x803, n, 2, 2) + bytes(pixels))
    lab.write_bytes(struct.pack(">II", 0x801, n) + bytes(labels))
    return img, lab


def test_load_idx_scaling(tmp_path):
    img, lab = _write_pair(tmp_path, [0, 255, 51, 102, 255, 0, 0, 0], [3, 7])
    s = load_idx(img, lab)
    assert s.images.shape == (2, 1, 2, 2)
    np.testing.assert_allclose(s.images[0, 0].ravel(), [0.0, 1.0, 0.2, 0.4])
    np.testing.assert_array_equal(s.labels, [3, 7])
    assert isinstance(load_idx(img), UnlabeledSet)


def test_load_idx_errors(tmp_path):
    img, lab = _write_pair(tmp_path, [0] * 8, [1, 2])
    trunc = tmp_path / "trunc.idx"
    trunc.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(IdxFormatError):
        load_idx(trunc)
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x01\x02" + img.read_bytes()[2:])
    with pytest.raises(IdxFormatError):
        load_idx(bad)
    short = tmp_path / "short.idx"
    short.write_bytes(struct.pack(">II", 0x801, 3) + bytes([1, 2, 3]))
    with pytest.raises(ConsistencyError):
        load_idx(img, short)


@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 5), st.sampled_from([1, 3]), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_idx_roundtrip(tmp_path_factory, n, h, w, c, seed):
    d = tmp_path_factory.mktemp("idx")
    rng = np.random.default_rng(seed)
    q = rng.integers(0, 256, size=(n, c, h, w)).astype(np.uint8)
    images = q.astype(np.float32) / 255
    labels = rng.integers(0, 10, n)
    save_idx(d / "i", images, d / "l", labels)
    back = load_idx(d / "i", d / "l")
    assert back.images.tobytes() == images.tobytes()
    np.testing.assert_array_equal(back.labels, labels)
    raw = read_idx(d / "i")
    assert raw.shape == ((n, h, w) if c == 1 else (n, c, h, w))


def test_write_idx_magic(tmp_path):
    write_idx(tmp_path / "x", np.zeros((2, 3, 4), np.uint8))
    assert (tmp_path / "x").read_bytes()[:4] == b"\x00\x00\x08\x03"


# ---- shifts ----------------------------------------------------------------

def _digits(n=40, seed=0):
    return render_digits(n, 16, seed)


def test_identity_shifts_are_exact():
    s = _digits()
    for spec in (ShiftSpec("brightness_scale", alpha=1.0), ShiftSpec("channel_blend", beta=0.0),
                 ShiftSpec("additive_noise", sigma=0.0)):
        out = apply_shift(s, spec, seed=1)
        assert out.images.tobytes() == s.images.tobytes()
        np.testing.assert_array_equal(out.labels, s.labels)


def test_brightness_examples():
    s = UnlabeledSet(np.ones((1, 1, 2, 2), np.float32))
    assert apply_shift(s, ShiftSpec("brightness_scale", alpha=0.5), 0).images.max() == 0.5
    d = _digits()
    out = apply_shift(d, ShiftSpec("brightness_scale", alpha=0.4), 0)
    assert abs(out.images.mean() - 0.4 * d.images.mean()) < 1e-6


def test_shift_config_errors():
    with pytest.raises(ConfigError):
        ShiftSpec("brightness_scale", alpha=0.0)
    with pytest.raises(ConfigError):
        ShiftSpec("channel_blend", beta=1.5)
    with pytest.raises(ConfigError):
        ShiftSpec("blur")


def test_blend_and_noise_stay_in_range_and_keep_labels():
    d = LabeledSet(to_channels(_digits().images, 3), _digits().labels)
    b = apply_shift(d, ShiftSpec("channel_blend", beta=0.3), 5)
    assert b.images.min() >= 0 and b.images.max() <= 1
    assert not np.array_equal(b.images[:, 0], b.images[:, 1])  # colored field
    n = apply_shift(d, ShiftSpec("additive_noise", sigma=0.2), 5)
    assert n.images.min() >= 0 and n.images.max() <= 1
    np.testing.assert_array_equal(b.labels, d.labels)
    again = apply_shift(d, ShiftSpec("channel_blend", beta=0.3), 5)
    assert again.images.tobytes() == b.images.tobytes()


# ---- splits ----------------------------------------------------------------

def test_split_examples():
    a, b = split(100, (0.9, 0.1), seed=0)
    assert (len(a), len(b)) == (90, 10)
    assert sorted(np.concatenate([a, b]).tolist()) == list(range(100))
    a2, b2 = split(100, (0.9, 0.1), seed=0)
    np.testing.assert_array_equal(a, a2)
    with pytest.raises(ConfigError):
        split(5, (0.99, 0.01), 0)
    with pytest.raises(ConfigError):
        split(5, (0.5, 0.6), 0)


def test_domain_pair_partition():
    s = _digits(50)
    t = _digits(30, seed=1).unlabeled()
    pair = make_domain_pair(s, t, 0.1, 0)
    assert len(pair.source_train) + len(pair.source_val) == 50
    assert len(pair.target_train) + len(pair.target_val) == 30
    assert pair.source_val.unlabeled().images.shape == pair.source_val.images.shape


def test_target_sets_carry_no_labels():
    import dataclasses
    pair = make_domain_pair(_digits(20), _digits(20, 1).unlabeled(), 0.1, 0)
    for f in ("target_train", "target_val"):
        assert {fl.name for fl in dataclasses.fields(getattr(pair, f))} == {"images"}
    assert "labels" not in {f.name for f in dataclasses.fields(UnlabeledSet)}
    assert not any("sidecar" in f.name for f in dataclasses.fields(DomainPair))
    leaky = make_domain_pair(_digits(20), _digits(20, 1), 0.1, 0)
    assert isinstance(leaky.target_train, UnlabeledSet) and isinstance(leaky.target_val, UnlabeledSet)


def test_digits_are_deterministic_and_balanced():
    a, b = render_digits(100, 16, 3), render_digits(100, 16, 3)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.all(np.bincount(a.labels) == 10)
    assert a.images.min() >= 0 and a.images.max() <= 1


# ---- balanced sampler ------------------------------------------------------

def test_balanced_paper_batch():
    for b in balanced_epoch(500, 300, 128, np.random.default_rng(0)):
        assert len(b.source) == 64 and len(b.target) == 64
        assert b.provenance.tolist() == [0] * 64 + [1] * 64


def test_balanced_small_source():
    epoch = balanced_epoch(10, 1000, 20, np.random.default_rng(0))
    assert len(epoch) == 100
    assert all(len(b.source) == 10 and len(b.target) == 10 for b in epoch)


@given(st.integers(1, 300), st.integers(1, 300), st.integers(1, 40), st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_balanced_invariants(ns, nt, half, seed):
    epoch = balanced_epoch(ns, nt, 2 * half, np.random.default_rng(seed))
    assert len(epoch) == math.ceil(max(ns, nt) / half) == balanced_epoch_length(ns, nt, 2 * half)
    src = np.concatenate([b.source for b in epoch])
    tgt = np.concatenate([b.target for b in epoch])
    assert all(len(b.source) == half == len(b.target) for b in epoch)
    larger, n = (src, ns) if ns >= nt else (tgt, nt)
    # the larger domain is covered once before any index repeats
    assert len(np.unique(larger[:n])) == n
    assert src.max() < ns and tgt.max() < nt


def test_balanced_odd_batch_rejected():
    with pytest.raises(ConfigError):
        balanced_epoch(10, 10, 7, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        balanced_epoch(0, 10, 8, np.random.default_rng(0))


def test_balanced_stream_is_seeded():
    a = balanced_batches(np.zeros(30), np.zeros(50), 10, seed=4)
    b = balanced_batches(30, 50, 10, seed=4)
    for _ in range(25):
        x, y = next(a), next(b)
        np.testing.assert_array_equal(x.source, y.source)
        np.testing.assert_array_equal(x.target, y.target)


def test_source_epoch_shapes():
    idx = source_epoch(10, 4, 6, np.random.default_rng(0))
    assert idx.shape == (6, 4)
    assert len(np.unique(idx.ravel()[:10])) == 10
