import numpy as np
import pytest

from nhk.postprocess import (
    PostprocessParams,
    classify_instances,
    extract_instances,
    remove_small,
    sobel_derivative,
    sobel_gradient,
    sobel_kernel,
    watershed,
)
from nhk.raster import HoverField, relabel_sequential
from nhk.synthetic import class_image_for
from nhk.targets import hover_targets
from oracles import direct_correlate, iou_to_truth, majority_class, sobel_5x5_x


def test_sobel_kernels_match_textbook():
    np.testing.assert_array_equal(sobel_kernel(3), [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]])
    np.testing.assert_array_equal(sobel_kernel(5), sobel_5x5_x())
    np.testing.assert_array_equal(sobel_kernel(5, axis=0), sobel_5x5_x().T)


def test_sobel_constant_field_is_zero():
    assert np.all(sobel_gradient(np.full((7, 9), 3.25), 5) == 0)


def test_sobel_ramp_constant_interior():
    field = np.tile(np.arange(12, dtype=float) * 0.5, (10, 1))
    d = sobel_derivative(field, 5, axis=1)
    interior = d[:, 2:-2]
    assert np.all(interior == interior[0, 0])
    # 16 (smoothing) * 8 (sum of k*x over [-1,-2,0,2,1]) * slope
    assert interior[0, 0] == pytest.approx(16 * 8 * 0.5)


def test_sobel_matches_direct_convolution(rng):
    field = rng.normal(size=(5, 5))
    np.testing.assert_allclose(sobel_derivative(field, 5, axis=1),
                               direct_correlate(field, sobel_5x5_x()), atol=1e-9, rtol=0)
    np.testing.assert_allclose(sobel_derivative(field, 5, axis=0),
                               direct_correlate(field, sobel_5x5_x().T), atol=1e-9, rtol=0)
    raw = direct_correlate(field, sobel_5x5_x())
    expected = (raw - raw.min()) / (raw.max() - raw.min())
    np.testing.assert_allclose(sobel_gradient(field, 5), expected, atol=1e-9, rtol=0)


def test_sobel_even_ksize_rejected():
    with pytest.raises(ValueError):
        sobel_gradient(np.zeros((3, 3)), 4)


def test_params_validation():
    for bad in ({"fg_threshold": 1.0}, {"marker_threshold": 0.0}, {"sobel_ksize": 4},
                {"sobel_ksize": 1}, {"min_instance_size": -1}):
        with pytest.raises(ValueError):
            PostprocessParams(**bad)


def test_all_background():
    out = extract_instances(np.zeros((16, 16)), HoverField.zeros((16, 16)))
    assert out.max() == 0


def test_zero_hover_blob_is_one_instance():
    fg = np.zeros((20, 20))
    fg[4:15, 3:12] = 0.9
    out = extract_instances(fg, HoverField.zeros((20, 20)))
    assert out.max() == 1
    np.testing.assert_array_equal(out > 0, fg > 0.5)


def _two_disks():
    rows, cols = np.indices((40, 48))
    m = np.zeros((40, 48), dtype=np.int32)
    d1 = np.hypot(rows - 20, cols - 15)
    d2 = np.hypot(rows - 20, cols - 31)
    m[d1 <= 9] = 1
    m[(d2 <= 9) & (d2 < d1)] = 2
    return m


def test_two_touching_disks_separate():
    m = _two_disks()
    assert np.any((m[:, 1:] == 2) & (m[:, :-1] == 1))  # genuinely touching
    out = extract_instances((m > 0).astype(float), hover_targets(m))
    assert out.max() == 2
    assert all(v > 0.9 for v in iou_to_truth(m, out).values())


def test_scene_round_trip(scenes):
    for m in scenes[:8]:
        out = extract_instances((m > 0).astype(float), hover_targets(m))
        assert out.max() == m.max()
        assert min(iou_to_truth(m, out).values()) > 0.9


def test_output_within_mask_and_covers_it(scenes, rng):
    params = PostprocessParams(min_instance_size=0)
    for m in scenes[:5]:
        fg = np.clip((m > 0) * 0.8 + rng.normal(scale=0.2, size=m.shape), 0, 1)
        hv = hover_targets(m)
        out = extract_instances(fg, hv, params)
        mask = fg > params.fg_threshold
        assert np.all(out[~mask] == 0)
        assert np.all(out[mask] > 0)


def test_instance_count_monotone_in_min_size(scenes, rng):
    m = scenes[0]
    fg = np.clip((m > 0) * 0.8 + rng.normal(scale=0.25, size=m.shape), 0, 1)
    hv = hover_targets(m)
    counts = [extract_instances(fg, hv, PostprocessParams(min_instance_size=s)).max()
              for s in (0, 2, 5, 10, 30, 100, 400)]
    assert counts == sorted(counts, reverse=True)


def test_watershed_fifo_plateau():
    # flat elevation: each pixel goes to the marker that reaches it first
    elevation = np.zeros((1, 7))
    markers = np.array([[1, 0, 0, 0, 0, 0, 2]])
    out = watershed(elevation, markers, np.ones((1, 7), bool))
    np.testing.assert_array_equal(out, [[1, 1, 1, 1, 2, 2, 2]])


def test_watershed_respects_ridge():
    elevation = np.array([[0.0, 0.1, 0.2, 0.9, 0.1, 0.0]])
    markers = np.array([[1, 0, 0, 0, 0, 2]])
    out = watershed(elevation, markers, np.ones((1, 6), bool))
    np.testing.assert_array_equal(out, [[1, 1, 1, 2, 2, 2]])


def test_remove_small():
    m = np.zeros((10, 10), dtype=np.int32)
    m[0, :5] = 4
    assert remove_small(m, 10).max() == 0
    out = remove_small(m, 0)
    np.testing.assert_array_equal(out, relabel_sequential(m)[0])


def test_remove_small_matches_size_filter(rng):
    for _ in range(20):
        m = rng.integers(0, 8, size=(12, 12)).astype(np.int32)
        min_size = int(rng.integers(0, 30))
        keep = [i for i in range(1, 8) if (m == i).sum() >= min_size]
        expected = relabel_sequential(np.where(np.isin(m, keep), m, 0))[0]
        np.testing.assert_array_equal(remove_small(m, min_size), expected)


def test_classify_simple_cases():
    m = np.array([[1, 1, 1, 2, 2, 2, 2, 2, 2]])
    c = np.array([[4, 4, 4, 2, 2, 2, 3, 3, 3]])
    result = classify_instances(m, c)
    assert result[1] == 4
    assert result[2] == 2
    assert result.votes[2].sum() == 6


def test_classify_background_votes_fall_back():
    m = np.array([[1, 1, 2, 2]])
    c = np.array([[0, 0, 5, 5]])
    assert classify_instances(m, c)[1] == 5
    assert classify_instances(np.array([[1, 1]]), np.array([[0, 0]]))[1] == 1


def test_classify_matches_histogram_oracle(rng, scenes):
    for m in scenes[:6]:
        c = class_image_for(rng, m, noise=0.4)
        result = classify_instances(m, c)
        for i in range(1, m.max() + 1):
            expected = majority_class(m, c, i)
            assert result[i] == expected
            assert result.votes[i].sum() == (m == i).sum()


def test_classify_invariant_to_id_permutation(rng, scenes):
    m = scenes[2]
    c = class_image_for(rng, m, noise=0.3)
    perm = np.concatenate([[0], rng.permutation(np.arange(1, m.max() + 1))])
    m2 = perm[m]
    a, b = classify_instances(m, c), classify_instances(m2, c)
    for i in range(1, m.max() + 1):
        assert a[i] == b[int(perm[i])]
