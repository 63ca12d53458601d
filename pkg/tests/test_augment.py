from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cadence.augment import (
    KINDS, AugmentRanges, BaselineJump, BaselineWander, GaussianNoise, MedianSmooth, Rotate,
    TimeTranslate, apply_augmentation, augment_array, in_sampling_range, sample_augmentation_chain,
)
from cadence.errors import ParameterOutOfRange
from cadence.signal_core import Window

rand_window = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).normal(size=(300, 3)))


def window(data=None):
    if data is None:
        data = np.random.default_rng(0).normal(size=(300, 3))
    return Window("s7", 12345.0, data)


def test_zero_noise_is_identity():
    w = window()
    out = apply_augmentation(GaussianNoise(0.0), w, 3)
    assert np.array_equal(out.data, w.data)
    assert out.subject_id == w.subject_id and out.start_time == w.start_time


def test_quarter_turn_planar():
    data = np.tile([1.0, 0.0, 0.0], (300, 1))
    out = apply_augmentation(Rotate(np.pi / 2), window(data), 0).data
    np.testing.assert_allclose(out, np.tile([0.0, 1.0, 0.0], (300, 1)), atol=1e-15)


def test_median_of_constant():
    data = np.tile([0.2, -0.4, 0.9], (300, 1))
    assert np.array_equal(apply_augmentation(MedianSmooth(5), window(data), 0).data, data)


def test_median_hand_case():
    data = np.zeros((300, 3))
    data[100, 0] = 5.0  # isolated spike is removed by a width-3 median
    data[200:203, 1] = 1.0  # a 3-sample plateau survives width 3, not width 7
    out3 = augment_array(data, [MedianSmooth(3)], 0)
    out7 = augment_array(data, [MedianSmooth(7)], 0)
    assert out3[100, 0] == 0.0
    assert np.array_equal(out3[200:203, 1], [1.0, 1.0, 1.0])
    assert np.all(out7[:, 1] == 0.0)


def test_seed_determinism():
    w = window()
    chain = sample_augmentation_chain(11)
    a = apply_augmentation(chain, w, 5).data
    b = apply_augmentation(chain, w, 5).data
    assert np.array_equal(a, b)
    assert sample_augmentation_chain(11) == sample_augmentation_chain(11)


def test_chain_frequencies_and_ranges():
    counts = Counter()
    lengths = Counter()
    r = AugmentRanges()
    for seed in range(10_000):
        chain = sample_augmentation_chain(seed)
        lengths[len(chain)] += 1
        kinds = [c.kind for c in chain]
        assert len(set(kinds)) == len(kinds)
        counts.update(kinds)
        assert all(in_sampling_range(c, r) for c in chain)
    assert set(counts) == set(KINDS)
    assert set(lengths) == {1, 2, 3}


def test_three_axis_chain_mode():
    r = AugmentRanges(rotation_mode="3-axis")
    rots = [c for s in range(300) for c in sample_augmentation_chain(s, r) if c.kind == "rotate"]
    assert rots and all(c.mode == "3-axis" for c in rots)


@given(rand_window, st.floats(-10, 10))
@settings(max_examples=30, deadline=None)
def test_planar_rotation_preserves_xy_norm(x, angle):
    out = augment_array(x, [Rotate(angle)], 0)
    np.testing.assert_allclose(np.hypot(out[:, 0], out[:, 1]), np.hypot(x[:, 0], x[:, 1]), atol=1e-9)
    np.testing.assert_array_equal(out[:, 2], x[:, 2])


@given(rand_window, st.floats(-10, 10), st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda a: np.linalg.norm(a) > 1e-3))
@settings(max_examples=30, deadline=None)
def test_three_axis_rotation_preserves_norm(x, angle, axis):
    out = augment_array(x, [Rotate(angle, "3-axis", axis)], 0)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.linalg.norm(x, axis=1), atol=1e-9)


@given(rand_window, st.integers(-149, 149))
@settings(max_examples=40, deadline=None)
def test_translate_inverse_restores_overlap(x, k):
    back = augment_array(augment_array(x, [TimeTranslate(k)], 0), [TimeTranslate(-k)], 0)
    lo, hi = abs(k), 300 - abs(k)
    np.testing.assert_array_equal(back[lo:hi], x[lo:hi])


def test_translate_direction():
    x = np.arange(300, dtype=float)[:, None].repeat(3, axis=1)
    out = augment_array(x, [TimeTranslate(10)], 0)
    np.testing.assert_array_equal(out[10:, 0], x[:-10, 0])
    # reflected fill at the vacated start
    np.testing.assert_array_equal(out[:10, 0], x[10:0:-1, 0])


@given(rand_window, st.floats(-0.5, 0.5), st.integers(0, 300), st.integers(0, 2))
@settings(max_examples=40, deadline=None)
def test_jump_shifts_mean_exactly(x, amp, idx, axis):
    out = augment_array(x, [BaselineJump(amp, idx, axis)], 0)
    expected = amp * (300 - idx) / 300
    assert out[:, axis].mean() - x[:, axis].mean() == pytest.approx(expected, abs=1e-12)
    others = [a for a in range(3) if a != axis]
    np.testing.assert_array_equal(out[:, others], x[:, others])


def test_wander_definition():
    x = np.zeros((300, 3))
    out = augment_array(x, [BaselineWander(0.2, 10.0, (0.0, np.pi / 2, np.pi))], 0)
    t = np.arange(300) / 30.0
    np.testing.assert_allclose(out[:, 0], 0.2 * np.sin(2 * np.pi * t / 10.0), atol=1e-15)
    np.testing.assert_allclose(out[:, 1], 0.2 * np.cos(2 * np.pi * t / 10.0), atol=1e-15)


def test_noise_statistics():
    out = augment_array(np.zeros((300, 3)), [GaussianNoise(0.05)], 1)
    assert abs(out.std() - 0.05) < 0.005


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_outputs_stay_valid(seed):
    x = np.random.default_rng(seed).normal(size=(300, 3))
    out = augment_array(x, sample_augmentation_chain(seed), seed)
    assert out.shape == (300, 3) and np.all(np.isfinite(out))


@pytest.mark.parametrize("spec", [
    MedianSmooth(4), MedianSmooth(0), TimeTranslate(150), TimeTranslate(-200), BaselineJump(0.1, 301),
    BaselineJump(0.1, 10, 3), BaselineWander(-0.1), BaselineWander(0.1, 0.0), Rotate(0.1, "yaw"),
    Rotate(np.nan), GaussianNoise(-0.01),
])
def test_out_of_range(spec):
    with pytest.raises(ParameterOutOfRange):
        apply_augmentation(spec, window(), 0)


def test_ranges_from_config():
    r = AugmentRanges.from_config({"augment.median_widths": "3,9", "augment.noise_max": "0.1",
                                   "augment.rotation_mode": "3-axis", "augment.max_chain": "2"})
    assert r.median_widths == (3, 9) and r.noise_max == 0.1 and r.max_chain == 2
    assert all(len(sample_augmentation_chain(s, r)) <= 2 for s in range(200))
