import numpy as np
import pytest

from boundseg.distmap import boundary_pixels, euclidean_dt, mask_to_distance_map
from boundseg.errors import EmptyMask, EmptySiteSet


def brute_force_dt(sites, shape):
    h, w = shape
    ii, jj = np.mgrid[0:h, 0:w]
    d2 = (ii[..., None] - sites[:, 0]) ** 2 + (jj[..., None] - sites[:, 1]) ** 2
    return np.sqrt(d2.min(axis=-1))


def test_boundary_of_solid_block_is_outline():
    m = np.ones((3, 3), np.uint8)
    got = set(map(tuple, boundary_pixels(m).tolist()))
    assert got == {(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)}


def test_boundary_single_pixel():
    m = np.zeros((5, 5), np.uint8)
    m[2, 3] = 1
    assert boundary_pixels(m).tolist() == [[2, 3]]


def test_boundary_square_ring():
    m = np.zeros((7, 7), np.uint8)
    m[1:6, 1:6] = 1
    got = set(map(tuple, boundary_pixels(m).tolist()))
    want = {(i, j) for i in range(1, 6) for j in range(1, 6)
            if i in (1, 5) or j in (1, 5)}
    assert got == want


def test_boundary_touching_frame_edge():
    # frame border counts as background, so edge pixels are boundary
    m = np.ones((4, 4), np.uint8)
    m[1:3, 1:3] = 1
    got = set(map(tuple, boundary_pixels(np.ones((4, 4), np.uint8)).tolist()))
    assert (0, 0) in got and (3, 3) in got
    # interior of a 4x4 all-ones block is NOT boundary? 4x4 has no interior
    # at depth 2; check a 5x5 instead
    m5 = np.ones((5, 5), np.uint8)
    got5 = set(map(tuple, boundary_pixels(m5).tolist()))
    assert (2, 2) not in got5


def test_boundary_rows_sorted_row_major():
    m = np.zeros((9, 9), np.uint8)
    m[2:7, 3:8] = 1
    b = boundary_pixels(m).tolist()
    assert b == sorted(b)


def test_boundary_empty_mask_raises():
    with pytest.raises(EmptyMask):
        boundary_pixels(np.zeros((4, 4), np.uint8))


def test_edt_345_triangle():
    d = euclidean_dt(np.array([[0, 0]]), (8, 8))
    assert d[3, 4] == 5.0
    assert d[0, 0] == 0.0
    assert d[4, 3] == 5.0


def test_edt_matches_brute_force_random():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(200):
        h, w = (int(v) for v in rng.integers(1, 33, size=2))
        k = int(rng.integers(1, h * w + 1))
        flat = rng.choice(h * w, size=k, replace=False)
        sites = np.stack(np.unravel_index(flat, (h, w)), axis=1)
        d = euclidean_dt(sites, (h, w))
        worst = max(worst, float(np.abs(d - brute_force_dt(sites, (h, w))).max()))
    assert worst < 1e-9


def test_edt_all_sites_gives_zero():
    sites = np.stack(np.mgrid[0:4, 0:5], axis=-1).reshape(-1, 2)
    assert (euclidean_dt(sites, (4, 5)) == 0).all()


def test_edt_rejects_bad_sites():
    with pytest.raises(EmptySiteSet):
        euclidean_dt(np.zeros((0, 2), int), (4, 4))
    with pytest.raises(EmptySiteSet):
        euclidean_dt(np.array([[4, 0]]), (4, 4))
    with pytest.raises(EmptySiteSet):
        euclidean_dt(np.array([[-1, 0]]), (4, 4))
    with pytest.raises(EmptySiteSet):
        euclidean_dt(np.array([1, 2]), (4, 4))


def test_distance_map_boundary_exactly_one():
    m = np.zeros((9, 9), np.uint8)
    m[2:7, 2:7] = 1
    dm = mask_to_distance_map(m)
    assert dm.dtype == np.float32
    b = boundary_pixels(m)
    assert (dm[b[:, 0], b[:, 1]] == 1.0).all()
    assert dm.max() == 1.0
    assert dm.min() > 0.0


def test_distance_map_known_values():
    m = np.zeros((9, 9), np.uint8)
    m[2:7, 2:7] = 1
    dm = mask_to_distance_map(m)
    assert abs(dm[4, 4] - np.exp(-2.0)) < 1e-6      # center, D = 2
    assert abs(dm[4, 0] - np.exp(-2.0)) < 1e-6      # outside, D = 2
    assert abs(dm[0, 0] - np.exp(-np.sqrt(8.0))) < 1e-6  # corner, diagonal


def test_distance_map_covers_full_frame():
    # values decay but never vanish: every pixel carries signal
    m = np.zeros((16, 16), np.uint8)
    m[6:10, 6:10] = 1
    dm = mask_to_distance_map(m)
    assert (dm > 0).all()
    assert (dm <= 1.0).all()


def test_distance_map_translation_equivariance():
    m = np.zeros((12, 12), np.uint8)
    m[2:6, 3:7] = 1
    dm = mask_to_distance_map(m)
    m2 = np.roll(m, (2, 1), axis=(0, 1))
    dm2 = mask_to_distance_map(m2)
    np.testing.assert_array_equal(dm2[2:, 1:], dm[:-2, :-1])


def test_distance_map_monotone_in_distance():
    m = np.zeros((21, 21), np.uint8)
    m[8:13, 8:13] = 1
    dm = mask_to_distance_map(m)
    # walking left from the left boundary, values strictly decay
    row = dm[10, :9]
    assert (np.diff(row) > 0).all()  # increasing toward the boundary at col 8
