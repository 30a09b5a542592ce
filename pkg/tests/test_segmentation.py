import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctscreen.entropy import ThresholdTriple
from ctscreen.imageio import GrayImage, histogram
from ctscreen.segmentation import apply_trilevel, segment_levels, threshold_filter

TH = ThresholdTriple(64, 128, 192)
images = arrays(np.uint8, st.tuples(st.integers(1, 10), st.integers(1, 10)))
triples = st.lists(st.integers(1, 255), min_size=3, max_size=3, unique=True).map(ThresholdTriple.from_values)


def test_constant_image_unchanged():
    img = GrayImage.from_array(np.full((5, 5), 100, np.uint8))
    assert apply_trilevel(img, TH).image == img


def test_four_pixel_hand_case():
    img = GrayImage(4, 1, [0, 63, 64, 255])
    q = apply_trilevel(img, TH)
    assert q.image.flat() == [32, 32, 64, 255]
    # empty third class [128, 192) keeps its lower bound
    assert q.levels == (32, 64, 128, 255)
    assert segment_levels(img, TH) == q.levels


def test_at_most_four_values_on_random_images():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        img = GrayImage.from_array(rng.integers(0, 256, (6, 6), dtype=np.uint8))
        th = ThresholdTriple.from_values(rng.choice(np.arange(1, 256), 3, replace=False))
        assert len(np.unique(apply_trilevel(img, th).image.pixels)) <= 4


@settings(max_examples=100, deadline=None)
@given(images, triples)
def test_trilevel_idempotent_and_mass_preserving(arr, th):
    img = GrayImage.from_array(arr)
    once = apply_trilevel(img, th).image
    assert apply_trilevel(once, th).image == once
    edges = [0, th.t1, th.t2, th.t3, 256]
    c0, c1 = histogram(img).counts, histogram(once).counts
    for lo, hi in zip(edges[:-1], edges[1:]):
        assert c0[lo:hi].sum() == c1[lo:hi].sum()


def test_filter_examples():
    zero = GrayImage.from_array(np.zeros((3, 3), np.uint8))
    pair = threshold_filter(zero, 179)
    assert pair.roi == zero and not pair.artifact.pixels.any()

    img = GrayImage(5, 1, [0, 100, 179, 200, 255])
    pair = threshold_filter(img, 179)
    assert pair.roi.flat() == [0, 100, 179, 0, 0]
    assert pair.artifact.flat() == [0, 0, 0, 200, 255]
    assert pair.th == 179


@pytest.mark.parametrize("th", [0, 255, -3])
def test_filter_threshold_range(th):
    with pytest.raises(ValueError):
        threshold_filter(GrayImage(1, 1, [5]), th)


@settings(max_examples=100, deadline=None)
@given(images, st.integers(1, 254))
def test_filter_partition(arr, th):
    img = GrayImage.from_array(arr)
    pair = threshold_filter(img, th)
    r, a, o = pair.roi.pixels.astype(int), pair.artifact.pixels.astype(int), img.pixels.astype(int)
    assert np.array_equal(np.maximum(r, a), o)
    assert np.array_equal(r + a, o)
    assert not np.any((r > 0) & (a > 0))
