import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from selfsup_uda.gradcore import UsageError
from selfsup_uda.model import EncoderConfig, HeadConfig, encode, init_model
from selfsup_uda.select import (combine, distance_between_means, early_stop, mean_distance,
                                select_run)
from selfsup_uda.train import TrainingLog

ENC = EncoderConfig(3, (16, 64), 64)

traces = st.integers(1, 12).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.floats(0.01, 100)),
    arrays(np.float64, n, elements=st.floats(0.01, 1))))


def _params(seed=0):
    return init_model(ENC, [HeadConfig(0, 10)], seed)


def _images(n, seed):
    return np.random.default_rng(seed).uniform(size=(n, 3, 8, 8)).astype(np.float32)


def test_distance_injected_features():
    fs = np.array([[0, 0], [2, 0]])
    ft = np.array([[1, 1], [1, 3]])
    assert distance_between_means(fs, ft) == 2.0


def test_mean_distance_same_images_is_zero():
    p = _params()
    x = _images(20, 0)
    assert mean_distance(p, x, x) == 0.0


def test_mean_distance_matches_feature_means():
    p = _params()
    xs, xt = _images(30, 1), _images(17, 2)
    want = distance_between_means(encode(p, xs).data, encode(p, xt).data)
    assert mean_distance(p, xs, xt) == pytest.approx(want, rel=1e-6)


@pytest.mark.parametrize("chunk", [1, 7, 16, 1000])
def test_mean_distance_chunking(chunk):
    p = _params()
    xs, xt = _images(40, 3), _images(23, 4)
    whole = mean_distance(p, xs, xt, batch_size=1000)
    assert abs(mean_distance(p, xs, xt, batch_size=chunk) - whole) <= 1e-6


def test_mean_distance_records_nothing():
    p = _params()
    mean_distance(p, _images(4, 0), _images(4, 1))
    assert all(t.grad is None for t in p.named_tensors().values())


def test_mean_distance_empty_set():
    p = _params()
    with pytest.raises(UsageError):
        mean_distance(p, _images(0, 0), _images(3, 1))
    with pytest.raises(UsageError):
        distance_between_means(np.zeros((2, 3)), np.zeros((0, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_mean_distance_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.standard_normal((rng.integers(1, 6), 4)) for _ in range(3))
    ab = distance_between_means(a, b)
    assert ab == distance_between_means(b, a)
    assert ab <= distance_between_means(a, c) + distance_between_means(c, b) + 1e-12


def test_combine_example():
    np.testing.assert_allclose(combine([2, 1, 4], [3, 3, 1]), [5, 4, 5])


def test_combine_symmetry():
    v = np.array([3.0, 1.5, 6.0])
    np.testing.assert_allclose(combine(v, v), 2 * v / v.min())


def test_combine_degenerate_minima():
    np.testing.assert_allclose(combine([0, 2, 4], [1, 1, 1]), [1, 2, 3])
    np.testing.assert_allclose(combine([0, 0, 0], [1, 2, 4]), [2, 3, 5])


def test_combine_errors():
    with pytest.raises(UsageError):
        combine([1, 2], [1, 2, 3])
    with pytest.raises(UsageError):
        combine([1, -2], [1, 2])


@settings(max_examples=60, deadline=None)
@given(traces, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_combine_scale_invariance(vw, a, b):
    v, w = vw
    np.testing.assert_allclose(combine(a * v, b * w), combine(v, w), rtol=1e-9)


def test_early_stop_examples():
    assert early_stop([5, 4, 5]) == 1
    assert early_stop([3, 3, 3]) == 0
    assert early_stop([7.0]) == 0
    with pytest.raises(UsageError):
        early_stop([])


@settings(max_examples=60, deadline=None)
@given(traces)
def test_early_stop_is_a_minimum(vw):
    u = combine(*vw)
    t = early_stop(u)
    assert u[t] == u.min()
    assert np.all(u[:t] > u[t])


def test_select_run_single_run_reduces_to_early_stop():
    v, w = [3.0, 1.0, 2.0], [0.3, 0.2, 0.1]
    assert select_run([(v, w)]) == (0, early_stop(combine(v, w)))


def test_select_run_duplicate_takes_first():
    run = ([3.0, 1.0, 2.0], [0.3, 0.1, 0.2])
    assert select_run([run, run]) == (0, 1)


def test_select_run_avoids_exploding_distance():
    steady = ([1.0, 1.05, 1.1, 1.1], [0.2, 0.1, 0.11, 0.12])
    exploding = ([1.0, 5.0, 20.0, 80.0], [0.2, 0.1, 0.09, 0.08])
    run, epoch = select_run([exploding, steady])
    assert run == 1 and epoch == 1


def test_select_run_accepts_training_logs():
    log = TrainingLog()
    for v, w in [(2.0, 0.5), (1.0, 0.2), (1.5, 0.3)]:
        log.record(v, w, 0.1, {"main": 1.0}, 10)
    assert select_run([log]) == (0, 1)
    with pytest.raises(UsageError):
        select_run([])
