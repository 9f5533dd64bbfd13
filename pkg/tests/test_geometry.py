import numpy as np
import pytest
import scipy.ndimage as ndi

from wzwarn.geometry import (
    BoundingBox,
    DegenerateComponentError,
    LaneAssignment,
    LaneLine,
    LaneSet,
    PgmFormatError,
    assign_lane,
    connected_components,
    fit_lane_line,
    label_lanes,
    median_blur,
    read_mask_pgm,
    write_mask_pgm,
)

from conftest import blob, place


# --- median blur -------------------------------------------------------------


def test_median_constant_image_unchanged():
    img = np.full((8, 8), 7, dtype=np.uint8)
    assert np.array_equal(median_blur(img, 3), img)


def test_median_removes_isolated_pixel():
    img = np.zeros((7, 7), dtype=np.uint8)
    img[3, 3] = 255
    assert not median_blur(img, 3).any()


def test_median_erases_one_pixel_wide_line():
    # hand evaluation: every 3x3 window around a 1-px vertical line holds at
    # most 3 nonzero of 9 values, so each median is 0
    img = np.zeros((5, 5), dtype=np.uint8)
    img[:, 2] = 255
    assert not median_blur(img, 3).any()


def test_median_kernel_validation():
    img = np.zeros((5, 5), dtype=np.uint8)
    with pytest.raises(ValueError):
        median_blur(img, 4)
    with pytest.raises(ValueError):
        median_blur(img, 7)
    with pytest.raises(ValueError):
        median_blur(img, 1)


def test_median_output_values_from_input_neighborhood():
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, size=(20, 24), dtype=np.uint8)
    out = median_blur(img, 3)
    padded = np.pad(img, 1, mode="edge")
    for y in range(img.shape[0]):
        for x in range(img.shape[1]):
            window = padded[y : y + 3, x : x + 3]
            assert out[y, x] in window


def test_median_idempotent_on_thick_two_valued_mask():
    img = np.zeros((20, 20), dtype=np.uint8)
    img[4:14, 6:16] = 255
    once = median_blur(img, 3)
    assert np.array_equal(median_blur(once, 3), once)


@pytest.mark.parametrize("kernel", [3, 5])
def test_median_matches_scipy_reference(kernel):
    rng = np.random.default_rng(17)
    for _ in range(5):
        img = rng.integers(0, 256, size=(16, 19), dtype=np.uint8)
        ours = median_blur(img, kernel)
        reference = ndi.median_filter(img, size=kernel, mode="nearest")
        assert np.array_equal(ours, reference)


# --- connected components ----------------------------------------------------


def test_components_empty_image():
    assert connected_components(np.zeros((10, 10), dtype=np.uint8), 0) == []


def test_components_area_threshold_keeps_only_large_blob():
    img = np.zeros((60, 80), dtype=np.uint8)
    place(img, blob(20, 30), 2, 2)  # area 600
    place(img, blob(20, 20), 30, 50)  # area 400
    comps = connected_components(img, 500)
    assert [c.area for c in comps] == [600]


def test_components_diagonal_chain_is_single_component():
    img = np.zeros((10, 10), dtype=np.uint8)
    for i in range(8):
        img[i, i] = 255
    comps = connected_components(img, 0)
    assert len(comps) == 1
    assert comps[0].area == 8


def test_components_partition_and_order():
    rng = np.random.default_rng(11)
    img = (rng.random((40, 40)) > 0.7).astype(np.uint8) * 255
    comps = connected_components(img, 0)
    total = sum(c.area for c in comps)
    assert total == int((img != 0).sum())
    seen = set()
    for c in comps:
        for x, y in c.pixels:
            assert (y, x) not in seen
            seen.add((y, x))
    areas = [c.area for c in comps]
    assert areas == sorted(areas, reverse=True)
    for a, b in zip(comps, comps[1:]):
        if a.area == b.area:
            assert a.seed < b.seed


def test_components_match_scipy_labeling():
    rng = np.random.default_rng(23)
    structure = np.ones((3, 3), dtype=int)
    for _ in range(5):
        img = (rng.random((30, 30)) > 0.75).astype(np.uint8) * 255
        comps = connected_components(img, 0)
        labels, count = ndi.label(img, structure=structure)
        assert len(comps) == count
        for c in comps:
            ids = {labels[y, x] for x, y in c.pixels}
            assert len(ids) == 1  # exactly one scipy label per component
        sizes = sorted(np.bincount(labels.ravel())[1:].tolist(), reverse=True)
        assert sizes == [c.area for c in comps]


# --- line fitting -----------------------------------------------------------


def test_fit_two_point_line():
    from wzwarn.geometry import Component

    c = Component(pixels=np.array([[10, 0], [20, 100]]), seed=(0, 10))
    line = fit_lane_line(c)
    assert line.m == pytest.approx(0.1)
    assert line.b == pytest.approx(10.0)


def test_fit_vertical_segment():
    img = np.zeros((100, 100), dtype=np.uint8)
    img[0:100, 50] = 255
    comps = connected_components(img, 0)
    line = fit_lane_line(comps[0])
    assert line.m == pytest.approx(0.0)
    assert line.b == pytest.approx(50.0)


def test_fit_recovers_rasterized_line():
    img = np.zeros((420, 200), dtype=np.uint8)
    for y in range(100, 401):
        img[y, int(round(0.25 * y + 40))] = 255
    comps = connected_components(img, 0)
    line = fit_lane_line(comps[0])
    assert abs(line.m - 0.25) <= 0.02
    assert abs(line.b - 40.0) <= 3.0


def test_fit_degenerate_single_row():
    from wzwarn.geometry import Component

    c = Component(pixels=np.array([[3, 5], [4, 5], [5, 5]]), seed=(5, 3))
    with pytest.raises(DegenerateComponentError):
        fit_lane_line(c)


# --- lane labeling ----------------------------------------------------------


def vertical(x, area=100):
    return LaneLine(m=0.0, b=float(x), source_area=area)


def test_label_three_vertical_lines():
    lanes = label_lanes([vertical(200), vertical(100), vertical(300)], 480)
    assert lanes.left.b == 100 and lanes.medium.b == 200 and lanes.right.b == 300


def test_label_discards_smallest_of_four():
    lines = [vertical(100, 900), vertical(200, 800), vertical(300, 700), vertical(150, 50)]
    lanes = label_lanes(lines, 480)
    assert (lanes.left.b, lanes.medium.b, lanes.right.b) == (100, 200, 300)


def test_label_fewer_than_three_is_unknown():
    assert label_lanes([vertical(100), vertical(200)], 480) is None
    assert label_lanes([], 480) is None


# --- lane assignment --------------------------------------------------------


@pytest.fixture
def lanes():
    return LaneSet(left=vertical(100), medium=vertical(200), right=vertical(300))


def box_at(x, y, half=10):
    return BoundingBox(x - half, y - half, x + half, y + half)


def test_assign_left_right_outside(lanes):
    assert assign_lane(box_at(150, 240), lanes) is LaneAssignment.LEFT
    assert assign_lane(box_at(250, 240), lanes) is LaneAssignment.RIGHT
    assert assign_lane(box_at(350, 240), lanes) is LaneAssignment.OUTSIDE
    assert assign_lane(box_at(50, 240), lanes) is LaneAssignment.OUTSIDE


def test_assign_boundary_ties_close_left(lanes):
    assert assign_lane(box_at(200, 240), lanes) is LaneAssignment.RIGHT
    assert assign_lane(box_at(100, 240), lanes) is LaneAssignment.LEFT
    assert assign_lane(box_at(300, 240), lanes) is LaneAssignment.OUTSIDE


def test_assign_translation_invariance():
    rng = np.random.default_rng(3)
    for _ in range(200):
        xs = np.sort(rng.uniform(0, 400, size=3))
        if xs[1] - xs[0] < 1 or xs[2] - xs[1] < 1:
            continue
        lanes = LaneSet(left=vertical(xs[0]), medium=vertical(xs[1]), right=vertical(xs[2]))
        x_c = int(rng.uniform(0, 440))
        y_c = int(rng.uniform(0, 470))
        delta = int(rng.uniform(-100, 100))
        base_box = BoundingBox(x_c - 1, y_c, x_c + 1, y_c + 2)
        moved_box = BoundingBox(
            base_box.x_min + delta, base_box.y_min, base_box.x_max + delta, base_box.y_max
        )
        shifted = LaneSet(
            left=vertical(xs[0] + delta),
            medium=vertical(xs[1] + delta),
            right=vertical(xs[2] + delta),
        )
        assert assign_lane(base_box, lanes) is assign_lane(moved_box, shifted)


def test_assign_totality_and_exclusivity():
    rng = np.random.default_rng(4)
    for _ in range(300):
        xs = np.sort(rng.uniform(0, 600, size=3))
        lanes = LaneSet(
            left=LaneLine(float(rng.normal(0, 0.5)), float(xs[0])),
            medium=LaneLine(float(rng.normal(0, 0.5)), float(xs[1])),
            right=LaneLine(float(rng.normal(0, 0.5)), float(xs[2])),
        )
        box = box_at(int(rng.uniform(10, 630)), int(rng.uniform(10, 470)), half=5)
        result = assign_lane(box, lanes)
        assert result in (LaneAssignment.LEFT, LaneAssignment.RIGHT, LaneAssignment.OUTSIDE)


# --- pgm io -------------------------------------------------------------------


def test_mask_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    img = (rng.random((33, 47)) > 0.5).astype(np.uint8) * 255
    path = tmp_path / "mask.pgm"
    write_mask_pgm(path, img)
    assert np.array_equal(read_mask_pgm(path), img)


def test_mask_pgm_header_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    body = bytes(range(6))
    path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + body)
    img = read_mask_pgm(path)
    assert img.shape == (2, 3)
    assert img.tobytes() == body


def test_mask_pgm_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6\n3 2\n255\n" + bytes(6))
    with pytest.raises(PgmFormatError, match="P5"):
        read_mask_pgm(bad)
    truncated = tmp_path / "trunc.pgm"
    truncated.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(PgmFormatError, match="truncated"):
        read_mask_pgm(truncated)
