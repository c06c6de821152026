import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nhk.raster import HoverField, argmax_channels, check_probability_stack, one_hot, relabel_sequential


def test_relabel_first_appearance():
    m = np.array([[0, 9, 9], [5, 5, 0]])
    out, mapping = relabel_sequential(m)
    assert mapping == {9: 1, 5: 2}
    np.testing.assert_array_equal(out, [[0, 1, 1], [2, 2, 0]])


def test_relabel_two_ids_in_scan_order():
    out, mapping = relabel_sequential(np.array([[5, 0, 9]]))
    assert mapping == {5: 1, 9: 2}
    np.testing.assert_array_equal(out, [[1, 0, 2]])


def test_relabel_empty_and_fixed_point():
    z = np.zeros((3, 4), dtype=np.int32)
    out, mapping = relabel_sequential(z)
    assert mapping == {}
    np.testing.assert_array_equal(out, z)

    m = np.array([[1, 1, 2], [3, 0, 2]])
    out, mapping = relabel_sequential(m)
    assert mapping == {1: 1, 2: 2, 3: 3}
    np.testing.assert_array_equal(out, m)


def test_relabel_large_ids():
    m = np.array([[2**31 - 1, 0], [7, 2**31 - 1]])
    out, mapping = relabel_sequential(m)
    np.testing.assert_array_equal(out, [[1, 0], [2, 1]])


def test_negative_ids_rejected():
    with pytest.raises(ValueError):
        relabel_sequential(np.array([[-1, 0]]))


@given(arrays(np.int32, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 20)))
def test_relabel_preserves_partition(m):
    out, mapping = relabel_sequential(m)
    flat, new = m.ravel(), out.ravel()
    assert np.array_equal(flat[:, None] == flat[None, :], new[:, None] == new[None, :])
    assert set(np.unique(new[new > 0]).tolist()) == set(range(1, len(mapping) + 1))
    assert np.all((new == 0) == (flat == 0))


def test_one_hot_single_pixel():
    np.testing.assert_array_equal(one_hot(np.array([[3]]), 7)[0, 0], [0, 0, 0, 1, 0, 0, 0])


def test_one_hot_background():
    oh = one_hot(np.zeros((2, 3), dtype=int), 7)
    assert np.all(oh[..., 0] == 1) and oh[..., 1:].sum() == 0


def test_one_hot_too_few_channels():
    with pytest.raises(ValueError):
        one_hot(np.array([[4]]), 4)


@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 6)))
def test_one_hot_argmax_roundtrip(c):
    oh = one_hot(c, 7)
    assert np.all(oh.sum(axis=-1) == 1)
    np.testing.assert_array_equal(argmax_channels(oh), c)


def test_argmax_ties_go_low():
    p = np.array([[[0.1, 0.9], [0.5, 0.5]]])
    np.testing.assert_array_equal(argmax_channels(p), [[1, 0]])


def test_argmax_rejects_eight_channels():
    with pytest.raises(ValueError):
        argmax_channels(np.zeros((1, 1, 8)))


def test_probability_stack_validation():
    good = np.full((2, 2, 4), 0.25)
    check_probability_stack(good, normalized=True)
    with pytest.raises(ValueError):
        check_probability_stack(good * 4 + 0.1)
    with pytest.raises(ValueError):
        check_probability_stack(np.full((2, 2, 4), 0.2), normalized=True)


def test_hover_field_is_read_only_and_validates():
    hv = HoverField(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        hv.h[0, 0] = 1.0
    with pytest.raises(ValueError):
        HoverField(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        HoverField(np.full((1, 1), 2.0), np.zeros((1, 1))).validate()
    with pytest.raises(ValueError):
        HoverField(np.full((1, 1), 0.5), np.zeros((1, 1))).validate(labels=np.zeros((1, 1)))
