import numpy as np
import pytest

from chvox.grid import (
    EXTERIOR,
    WALL,
    GridError,
    build_grid,
    connected_components,
    flat_index,
    read_mask,
    tuple_index,
    write_mask,
)


def test_flat_index_examples():
    assert flat_index(0, 0, 0, 7) == 0
    assert flat_index(1, 2, 3, 4) == 57


def test_flat_tuple_roundtrip():
    N = 5
    n = np.arange(N**3)
    i, j, k = tuple_index(n, N)
    assert np.array_equal(flat_index(i, j, k, N), n)
    for t in [(0, 0, 0), (4, 1, 3), (2, 4, 4)]:
        assert tuple_index(flat_index(*t, N), N) == t


def test_flat_index_out_of_range():
    with pytest.raises(GridError):
        flat_index(4, 0, 0, 4)
    with pytest.raises(GridError):
        tuple_index(64, 4)


def test_full_cube_2_face_counts():
    g = build_grid(np.ones((2, 2, 2), bool))
    assert g.n_elements == 8
    assert g.n_interior_faces == 12
    assert g.n_boundary_faces == 24
    assert np.all(g.bnd_class == WALL)


def test_single_voxel_with_exterior():
    mask = np.zeros((2, 2, 2), bool)
    mask[0, 0, 0] = True
    g = build_grid(mask, "x-,x+,y-,y+,z-,z+")
    assert g.n_elements == 1
    assert g.n_interior_faces == 0
    assert np.sum(g.bnd_class == WALL) == 3
    assert np.sum(g.bnd_class == EXTERIOR) == 3


def test_face_orientation_and_six_faces():
    rng = np.random.default_rng(3)
    mask = rng.random((5, 5, 5)) < 0.6
    g = build_grid(mask)
    assert np.all(g.int_minus < g.int_plus)
    counts = np.bincount(np.concatenate([g.int_minus, g.int_plus, g.bnd_element]),
                         minlength=g.n_elements)
    assert np.all(counts == 6)
    # the plus element sits one voxel further along the face axis
    tm, tp = g.element_tuples[g.int_minus], g.element_tuples[g.int_plus]
    step = tp - tm
    assert np.all(step[np.arange(len(step)), g.int_axis] == 1)
    assert np.all(np.abs(step).sum(1) == 1)


def test_elements_follow_flat_order():
    mask = np.zeros((3, 3, 3), bool)
    mask[0, 1, 2] = mask[2, 0, 0] = mask[1, 1, 1] = True
    g = build_grid(mask)
    assert list(g.voxel_of_element) == sorted(g.voxel_of_element)
    assert list(g.voxel_of_element) == [2, 13, 21]


def test_empty_mask_rejected():
    with pytest.raises(GridError):
        build_grid(np.zeros((3, 3, 3), bool))


def test_connected_components():
    assert connected_components(build_grid(np.ones((3, 3, 3), bool))).max() == 0
    edge = np.zeros((2, 2, 2), bool)
    edge[0, 0, 0] = edge[1, 1, 0] = True
    assert connected_components(build_grid(edge)).max() == 1
    slabs = np.ones((5, 5, 5), bool)
    slabs[2] = False
    labels = connected_components(build_grid(slabs))
    g = build_grid(slabs)
    assert labels.max() == 1
    left = g.element_tuples[:, 0] < 2
    assert len(set(labels[left])) == 1 and len(set(labels[~left])) == 1


def test_mask_file_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    mask = rng.random((6, 6, 6)) < 0.5
    write_mask(tmp_path / "m.mask", mask)
    assert np.array_equal(read_mask(tmp_path / "m.mask"), mask)
    raw = tmp_path / "m.raw"
    raw.write_bytes(mask.ravel(order="F").astype(np.uint8).tobytes())
    assert np.array_equal(read_mask(raw, 6), mask)
    with pytest.raises(GridError):
        read_mask(raw)


def test_locate_points():
    g = build_grid(np.ones((4, 4, 4), bool))
    pts = np.array([[0.1, 0.1, 0.1], [0.9, 0.6, 0.3]])
    e = g.locate(pts)
    assert np.array_equal(g.element_tuples[e], [[0, 0, 0], [3, 2, 1]])
