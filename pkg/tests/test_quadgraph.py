"""Combinatorial layer: builders, rotation system, boundary walk, arcs."""

import numpy as np
import pytest

from sembedlab import quadgraph as qg


def test_single_cell_counts():
    g = qg.build_rect_lattice(1, 1)
    assert g.n_quads == 1
    assert g.n_primal == 2 and g.n_dual == 2
    assert g.n_corners == 4
    assert not g.interior.any()


def test_two_by_two_counts():
    g = qg.build_rect_lattice(2, 2)
    assert g.n_quads == 4
    assert g.n_corners == 12
    assert g.n_vertices == 9
    assert g.interior.sum() == 1  # only the center closes its fan


def test_euler_count_various_sizes():
    for w, h in [(1, 1), (2, 2), (3, 2), (4, 4), (5, 3)]:
        g = qg.build_rect_lattice(w, h)
        assert g.n_vertices - g.n_corners + (g.n_quads + 1) == 2


def test_boundary_cycle_is_ccw_rect():
    w, h = 3, 2
    g = qg.build_rect_lattice(w, h)
    pos = qg.rect_positions(w, h)
    cyc = pos[g.boundary_vertices]
    # shoelace area of the outer cycle must be +w*h
    area = 0.5 * np.sum(np.imag(np.conj(cyc) * np.roll(cyc, -1)))
    assert area == pytest.approx(w * h)


def test_corner_ids_deterministic():
    g1 = qg.build_rect_lattice(3, 3)
    g2 = qg.build_rect_lattice(3, 3)
    assert np.array_equal(g1.corners, g2.corners)
    assert np.array_equal(g1.quad_corners, g2.quad_corners)


def test_quad_corner_slots_share_expected_vertices():
    g = qg.build_rect_lattice(2, 2)
    for z in range(g.n_quads):
        v0p, v0d, v1p, v1d = g.quads[z]
        c00, c10, c11, c01 = g.corners[g.quad_corners[z]]
        assert tuple(c00) == (v0p, v0d)
        assert tuple(c10) == (v1p, v0d)
        assert tuple(c11) == (v1p, v1d)
        assert tuple(c01) == (v0p, v1d)


def test_rotation_fans_cover_incidence():
    g = qg.build_rect_lattice(3, 3)
    for v in range(g.n_vertices):
        zs = g.fan_quads[v]
        expect = {z for z in range(g.n_quads) if v in g.quads[z]}
        assert set(zs.tolist()) == expect
        ncorners = len(g.fan_corners[v])
        assert ncorners == len(zs) + (0 if g.interior[v] else 1)


def test_rejects_bad_coloring():
    with pytest.raises(ValueError):
        qg.build_quadgraph(2, 2, [[0, 2, 1, 2]])  # repeated dual
    with pytest.raises(ValueError):
        qg.build_quadgraph(2, 2, [[0, 1, 2, 3]])  # slot 1 is primal


def test_rejects_corner_in_three_quads():
    # three "quads" all containing the corner (0, 2)
    with pytest.raises(ValueError):
        qg.build_quadgraph(2, 4, [[0, 2, 1, 3], [0, 2, 1, 4], [0, 2, 1, 5]])


def test_dobrushin_rect_structure():
    w = h = 4
    g = qg.build_rect_lattice(w, h)
    bd = qg.rect_dobrushin(g, w, h)
    # arcs start and end on the marked corners
    pa, da = bd.primal_arc, bd.dual_arc
    assert tuple(g.corners[bd.a]) == (pa[-1], da[0])
    assert tuple(g.corners[bd.b]) == (pa[0], da[-1])
    assert g.is_boundary_corner(bd.a) and g.is_boundary_corner(bd.b)
    # forced sets partition with the free set
    allq = np.concatenate([bd.forced_open, bd.forced_closed, bd.free])
    assert np.array_equal(np.sort(allq), np.arange(g.n_quads))
    # wired route pins the top row of cells, free route the bottom row
    assert len(bd.forced_open) == w and len(bd.forced_closed) == w


def test_dobrushin_thin_strip_has_no_free_quads():
    g = qg.build_rect_lattice(4, 2)
    bd = qg.rect_dobrushin(g, 4, 2)
    assert bd.n_free == 0


def test_dobrushin_rejects_odd_sizes():
    g = qg.build_rect_lattice(3, 2)
    with pytest.raises(ValueError):
        qg.rect_dobrushin(g, 3, 2)


def test_triangulation_two_triangles_gives_one_quad():
    pos = np.array([0, 1, 1 + 1j, 1j], dtype=complex)
    g, ppos, kept, tri = qg.build_from_triangulation([[0, 1, 2], [0, 2, 3]], pos)
    assert g.n_quads == 1 and g.n_primal == 2 and g.n_dual == 2
    assert kept.tolist() == [0, 2]


def test_triangulation_orientation_insensitive():
    pos = np.array([0, 1, 1 + 1j, 1j], dtype=complex)
    g1, *_ = qg.build_from_triangulation([[0, 1, 2], [0, 2, 3]], pos)
    g2, *_ = qg.build_from_triangulation([[0, 2, 1], [0, 2, 3]], pos)
    assert np.array_equal(g1.quads, g2.quads)


def test_triangulation_fan():
    ang = np.pi * np.arange(7) / 6
    pos = np.concatenate([[0j], np.exp(1j * ang)])
    tris = [[0, k + 1, k + 2] for k in range(6)]
    g, ppos, kept, tri = qg.build_from_triangulation(tris, pos)
    assert g.n_quads == 5 and g.n_dual == 6
    assert 0 in kept  # hub survives
    assert not g.interior.any()  # even the hub sees the outer face


def test_text_roundtrip():
    g = qg.build_rect_lattice(4, 4)
    bd = qg.rect_dobrushin(g, 4, 4)
    g2, bd2 = qg.read_graph(qg.write_graph(g, bd))
    assert np.array_equal(g2.quads, g.quads)
    assert np.array_equal(g2.quad_corners, g.quad_corners)
    assert bd2.a == bd.a and bd2.b == bd.b
    assert np.array_equal(bd2.free, bd.free)


def test_read_rejects_garbage():
    with pytest.raises(ValueError):
        qg.read_graph("not a graph\n")
