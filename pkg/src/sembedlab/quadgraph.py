"""Combinatorics of planar quad-graphs.

A quad-graph is the double of a planar graph: vertices are colored primal
or dual, every inner face is a quadrilateral whose cycle alternates
primal, dual, primal, dual.  This module owns the purely combinatorial
side: building the structure from face lists or lattices, deriving the
corner set and per-vertex rotation order, walking the outer face, and
validating that the whole thing is a disc.  Geometry lives elsewhere.
"""

from __future__ import annotations

import heapq
import io
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QuadGraph",
    "DobrushinBoundary",
    "build_quadgraph",
    "build_rect_lattice",
    "rect_vertex_ids",
    "rect_dobrushin",
    "build_from_triangulation",
    "validate",
    "write_graph",
    "read_graph",
]


# Corner slots of a quad (v0p, v0d, v1p, v1d) in ccw order around the face.
# Slot k holds the corner between cycle position k and k+1.
_SLOT_PAIRS = ((0, 1), (2, 1), (2, 3), (0, 3))  # (primal position, dual position)


@dataclass
class QuadGraph:
    """Immutable quad-graph with derived incidence tables.

    Vertex ids are global: primal vertices are 0..n_primal-1, dual
    vertices are n_primal..n_primal+n_dual-1.  A corner is an incident
    (primal, dual) pair; corner ids are assigned in first-appearance
    order scanning quads by id and slots in the order c00, c10, c11, c01.
    """

    n_primal: int
    n_dual: int
    quads: np.ndarray          # (m, 4) int, rows (v0p, v0d, v1p, v1d), ccw
    corners: np.ndarray        # (k, 2) int, rows (primal, dual)
    quad_corners: np.ndarray   # (m, 4) int, slot order c00, c10, c11, c01
    corner_quads: np.ndarray   # (k, 2) int, quads containing corner, -1 pad
    fan_quads: list            # per vertex: quad ids in ccw order
    fan_corners: list          # per vertex: corner ids in ccw order
    interior: np.ndarray       # (n,) bool, True when the fan closes up
    boundary_vertices: np.ndarray  # ccw cycle around the outer face
    boundary_corners: np.ndarray   # boundary_corners[i] joins bv[i] to bv[i+1]
    _corner_index: dict = field(repr=False)
    _quad_of_primal_pair: dict = field(repr=False)
    _quad_of_dual_pair: dict = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return self.n_primal + self.n_dual

    @property
    def n_quads(self) -> int:
        return len(self.quads)

    @property
    def n_corners(self) -> int:
        return len(self.corners)

    def is_primal(self, v) -> bool | np.ndarray:
        return np.asarray(v) < self.n_primal

    def corner_id(self, primal: int, dual: int) -> int:
        return self._corner_index[(primal, dual)]

    def quad_of_primal_pair(self, u: int, v: int) -> int:
        """Quad whose primal diagonal is {u, v}, or -1."""
        return self._quad_of_primal_pair.get((min(u, v), max(u, v)), -1)

    def quad_of_dual_pair(self, u: int, v: int) -> int:
        return self._quad_of_dual_pair.get((min(u, v), max(u, v)), -1)

    def is_boundary_corner(self, c: int) -> bool:
        return self.corner_quads[c, 1] < 0

    def corners_of_vertex(self, v: int) -> np.ndarray:
        return np.asarray(self.fan_corners[v])

    def quad_vertices(self, z: int) -> np.ndarray:
        return self.quads[z]


def build_quadgraph(n_primal: int, n_dual: int, quads) -> QuadGraph:
    """Assemble a QuadGraph from its face list.

    Each quad is (v0p, v0d, v1p, v1d) with global vertex ids, listed ccw.
    Raises ValueError on any structural defect: wrong coloring, a corner
    shared by three quads, a pinched vertex, or a disconnected or
    multiply-bounded surface.
    """
    quads = np.asarray(quads, dtype=np.int64)
    if quads.size == 0:
        quads = quads.reshape(0, 4)
    if quads.ndim != 2 or quads.shape[1] != 4:
        raise ValueError("quads must be an (m, 4) array")
    if n_primal == 0 and n_dual == 0 and len(quads) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return QuadGraph(
            n_primal=0, n_dual=0, quads=quads,
            corners=np.zeros((0, 2), dtype=np.int64),
            quad_corners=np.zeros((0, 4), dtype=np.int64),
            corner_quads=np.zeros((0, 2), dtype=np.int64),
            fan_quads=[], fan_corners=[],
            interior=np.zeros(0, dtype=bool),
            boundary_vertices=empty, boundary_corners=empty,
            _corner_index={}, _quad_of_primal_pair={}, _quad_of_dual_pair={},
        )
    n = n_primal + n_dual
    if quads.size and (quads.min() < 0 or quads.max() >= n):
        raise ValueError("quad vertex id out of range")
    if not (np.all(quads[:, [0, 2]] < n_primal) and np.all(quads[:, [1, 3]] >= n_primal)):
        raise ValueError("quad cycles must alternate primal, dual, primal, dual")
    if np.any(quads[:, 0] == quads[:, 2]) or np.any(quads[:, 1] == quads[:, 3]):
        raise ValueError("degenerate quad: repeated diagonal vertex")

    corner_index = {}
    corner_list: list = []
    m = len(quads)
    quad_corners = np.empty((m, 4), dtype=np.int64)
    for z in range(m):
        for s, (ip, id_) in enumerate(_SLOT_PAIRS):
            key = (int(quads[z, ip]), int(quads[z, id_]))
            c = corner_index.get(key)
            if c is None:
                c = len(corner_list)
                corner_index[key] = c
                corner_list.append(key)
            quad_corners[z, s] = c
    corners = np.asarray(corner_list, dtype=np.int64)
    k = len(corners)

    corner_quads = np.full((k, 2), -1, dtype=np.int64)
    for z in range(m):
        for c in quad_corners[z]:
            if corner_quads[c, 0] < 0:
                corner_quads[c, 0] = z
            elif corner_quads[c, 1] < 0:
                corner_quads[c, 1] = z
            else:
                raise ValueError(f"corner {c} lies in more than two quads")

    fan_quads, fan_corners, interior = _stitch_fans(n, n_primal, quads, quad_corners)
    bverts, bcorners = _walk_boundary(n, fan_quads, fan_corners, corners, corner_quads, interior)

    qpp = {}
    qdd = {}
    for z in range(m):
        p = (int(min(quads[z, 0], quads[z, 2])), int(max(quads[z, 0], quads[z, 2])))
        d = (int(min(quads[z, 1], quads[z, 3])), int(max(quads[z, 1], quads[z, 3])))
        if p in qpp or d in qdd:
            raise ValueError("two quads share a diagonal")
        qpp[p] = z
        qdd[d] = z

    g = QuadGraph(
        n_primal=n_primal,
        n_dual=n_dual,
        quads=quads,
        corners=corners,
        quad_corners=quad_corners,
        corner_quads=corner_quads,
        fan_quads=fan_quads,
        fan_corners=fan_corners,
        interior=interior,
        boundary_vertices=bverts,
        boundary_corners=bcorners,
        _corner_index=corner_index,
        _quad_of_primal_pair=qpp,
        _quad_of_dual_pair=qdd,
    )
    validate(g)
    return g


def _vertex_inout(quads, quad_corners, z):
    """Per vertex of quad z: (vertex, corner entered ccw, corner left ccw).

    Going ccw around the vertex (not the face), a quad is entered through
    one of its two corners at that vertex and left through the other.
    """
    v0p, v0d, v1p, v1d = quads[z]
    c00, c10, c11, c01 = quad_corners[z]
    return (
        (v0p, c00, c01),
        (v1p, c11, c10),
        (v0d, c10, c00),
        (v1d, c01, c11),
    )


def _stitch_fans(n, n_primal, quads, quad_corners):
    """Chain each vertex's incident quads into ccw rotation order."""
    items: list = [[] for _ in range(n)]
    for z in range(len(quads)):
        for v, cin, cout in _vertex_inout(quads, quad_corners, z):
            items[int(v)].append((int(cin), z, int(cout)))

    fan_quads: list = []
    fan_corners: list = []
    interior = np.zeros(n, dtype=bool)
    for v in range(n):
        lst = items[v]
        if not lst:
            raise ValueError(f"isolated vertex {v}")
        by_cin = {cin: (z, cout) for cin, z, cout in lst}
        if len(by_cin) != len(lst):
            raise ValueError(f"pinched vertex {v}: duplicated corner entry")
        couts = {cout for _, _, cout in lst}
        starts = [cin for cin, _, _ in lst if cin not in couts]
        if len(starts) > 1:
            raise ValueError(f"pinched vertex {v}: fan splits into several arcs")
        closed = not starts
        cur = lst[0][0] if closed else starts[0]
        qs: list = []
        cs: list = [cur]
        for _ in range(len(lst)):
            z, cout = by_cin[cur]
            qs.append(z)
            cs.append(cout)
            cur = cout
        if len(set(qs)) != len(lst):
            raise ValueError(f"pinched vertex {v}: fan does not chain")
        if closed:
            if cs[-1] != cs[0]:
                raise ValueError(f"vertex {v}: rotation fails to close")
            cs = cs[:-1]
            interior[v] = True
        fan_quads.append(np.asarray(qs, dtype=np.int64))
        fan_corners.append(np.asarray(cs, dtype=np.int64))
    return fan_quads, fan_corners, interior


def _walk_boundary(n, fan_quads, fan_corners, corners, corner_quads, interior):
    """Trace the outer face ccw.  The graph must be a disc: one cycle."""
    boundary = np.where(~interior)[0]
    if len(boundary) == 0:
        raise ValueError("no boundary: quad-graph must be a disc, not a closed surface")
    # Walking ccw we leave each boundary vertex through the first corner
    # of its fan and arrive through the last.
    start = int(boundary[0])
    bverts = [start]
    bcorners = []
    v = start
    for _ in range(len(boundary) + 1):
        c = int(fan_corners[v][0])
        bcorners.append(c)
        p, d = corners[c]
        w = int(d if v == p else p)
        if interior[w]:
            raise ValueError("boundary corner touches an interior vertex")
        if int(fan_corners[w][-1]) != c:
            raise ValueError("boundary walk is inconsistent with rotation order")
        if w == start:
            break
        bverts.append(w)
        v = w
    else:
        raise ValueError("boundary walk failed to close")
    if len(bverts) != len(boundary):
        raise ValueError("outer face misses some boundary vertices: not a disc")
    return np.asarray(bverts, dtype=np.int64), np.asarray(bcorners, dtype=np.int64)


def validate(g: QuadGraph) -> None:
    """Structural audit of a QuadGraph.

    Rebuilds every face from the rotation system and checks that the
    inner faces are exactly the declared quads (ccw) plus a single outer
    face, then checks the Euler count for a disc.  Raises ValueError.
    """
    # Rotation-based face traversal: arriving at w through corner c, the
    # face on the left continues through the previous corner in ccw order.
    prev_at = []
    for v in range(g.n_vertices):
        cs = g.fan_corners[v]
        prev_at.append({int(cs[i]): int(cs[i - 1]) for i in range(len(cs))})

    seen = set()
    inner = 0
    outer = 0
    for c0 in range(g.n_corners):
        for d0 in (0, 1):
            if (c0, d0) in seen:
                continue
            cyc_v = []
            c, d = c0, d0
            for _ in range(4 * g.n_corners):
                if (c, d) in seen:
                    raise ValueError("face traversal revisits a half-edge")
                seen.add((c, d))
                p, dl = g.corners[c]
                w = int(dl if d == 0 else p)
                cyc_v.append(w)
                c = prev_at[w][c]
                p2, dl2 = g.corners[c]
                d = 0 if w == p2 else 1
                if (c, d) == (c0, d0):
                    break
            else:
                raise ValueError("face traversal does not close")
            if len(cyc_v) == 4 and _match_quad(g, cyc_v):
                inner += 1
            else:
                outer += 1
                if not _match_outer(g, cyc_v):
                    raise ValueError("unexpected face in rotation system")
    if inner != g.n_quads or outer != 1:
        raise ValueError(
            f"face count mismatch: {inner} quads + {outer} outer faces "
            f"(expected {g.n_quads} + 1)"
        )
    euler = g.n_vertices - g.n_corners + (g.n_quads + 1)
    if euler != 2:
        raise ValueError(f"Euler count {euler} != 2: not a sphere-with-disc")


def _match_quad(g: QuadGraph, cyc) -> bool:
    arr = np.asarray(cyc)
    prim = np.where(g.is_primal(arr))[0]
    if len(prim) != 2:
        return False
    i = int(prim[0] if arr[prim[0]] <= arr[prim[1]] else prim[1])
    cyc = [int(arr[(i + j) % 4]) for j in range(4)]
    z = g.quad_of_primal_pair(cyc[0], cyc[2])
    if z < 0:
        return False
    q = [int(x) for x in g.quads[z]]
    i0 = q.index(cyc[0])
    return [q[(i0 + j) % 4] for j in range(4)] == cyc

def _match_outer(g: QuadGraph, cyc) -> bool:
    # Outer face is traversed cw by the left-hand rule, so it must equal
    # the stored ccw boundary cycle reversed, up to rotation.
    bv = [int(x) for x in g.boundary_vertices]
    if len(cyc) != len(bv) or set(cyc) != set(bv):
        return False
    rev = [int(x) for x in cyc[::-1]]
    i0 = rev.index(bv[0])
    return [rev[(i0 + j) % len(rev)] for j in range(len(rev))] == bv


# ---------------------------------------------------------------------------
# Builders


def rect_vertex_ids(width: int, height: int):
    """Grid-to-id tables for the rectangular lattice.

    Returns (vid, n_primal) where vid[i, j] is the global vertex id of
    grid node (i, j).  A node is primal when i + j is odd, so all four
    rectangle corners are dual when width and height are even.
    """
    ii, jj = np.meshgrid(np.arange(width + 1), np.arange(height + 1), indexing="ij")
    primal = (ii + jj) % 2 == 1
    vid = np.full((width + 1, height + 1), -1, dtype=np.int64)
    n_primal = int(primal.sum())
    vid[primal] = np.arange(n_primal)
    vid[~primal] = n_primal + np.arange(primal.size - n_primal)
    return vid, n_primal


def build_rect_lattice(width: int, height: int) -> QuadGraph:
    """Quad-graph of a width x height block of unit cells on the grid.

    Grid nodes are the vertices, unit cells the quads.  Each cell cycle
    is rotated to start at its primal vertex with the smaller id.
    """
    if width < 1 or height < 1:
        raise ValueError("lattice must be at least 1 x 1")
    vid, n_primal = rect_vertex_ids(width, height)
    n_dual = (width + 1) * (height + 1) - n_primal
    quads = []
    for j in range(height):
        for i in range(width):
            cyc = [vid[i, j], vid[i + 1, j], vid[i + 1, j + 1], vid[i, j + 1]]
            prim = [t for t in range(4) if cyc[t] < n_primal]
            t0 = min(prim, key=lambda t: cyc[t])
            quads.append([cyc[(t0 + s) % 4] for s in range(4)])
    return build_quadgraph(n_primal, n_dual, quads)


def rect_positions(width: int, height: int, delta: float = 1.0) -> np.ndarray:
    """Planar positions (as complex numbers) for build_rect_lattice ids."""
    vid, _ = rect_vertex_ids(width, height)
    pos = np.empty((width + 1) * (height + 1), dtype=np.complex128)
    ii, jj = np.meshgrid(np.arange(width + 1), np.arange(height + 1), indexing="ij")
    pos[vid.ravel()] = (ii.ravel() + 1j * jj.ravel()) * delta
    return pos


def build_from_triangulation(triangles, positions):
    """Quad-graph of a triangulated disc: one dual vertex per triangle.

    ``triangles`` is an (m, 3) array of indices into ``positions`` (an
    array of complex numbers).  Every interior edge of the triangulation
    yields one quad whose primal diagonal is the edge and whose dual
    diagonal joins the two adjacent triangles.  Boundary edges have a
    single triangle and yield no quad, so mesh nodes with no interior
    edge drop out of the graph.

    Returns (graph, primal_pos, kept, tri_ccw): primal vertex i of the
    graph is mesh node kept[i] at primal_pos[i]; dual vertex
    n_primal + t is triangle t, whose ccw-oriented mesh-node row is
    tri_ccw[t] (original mesh indices).
    """
    tri = np.asarray(triangles, dtype=np.int64)
    pos = np.asarray(positions, dtype=np.complex128)
    if tri.ndim != 2 or tri.shape[1] != 3:
        raise ValueError("triangles must be an (m, 3) array")
    # Orient every triangle ccw in the plane.
    a, b, c = pos[tri[:, 0]], pos[tri[:, 1]], pos[tri[:, 2]]
    area2 = ((b - a).real * (c - a).imag - (b - a).imag * (c - a).real)
    if np.any(np.abs(area2) < 1e-14):
        raise ValueError("degenerate triangle")
    tri = tri.copy()
    flip = area2 < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]

    edge_tris: dict = {}
    for t in range(len(tri)):
        for s in range(3):
            u, v = int(tri[t, s]), int(tri[t, (s + 1) % 3])
            edge_tris.setdefault((min(u, v), max(u, v)), []).append((t, u, v))
    inner_edges = []
    used = np.zeros(len(pos), dtype=bool)
    for (u, v), lst in sorted(edge_tris.items()):
        if len(lst) > 2:
            raise ValueError("edge shared by more than two triangles")
        if len(lst) == 2:
            inner_edges.append(((u, v), lst))
            used[[u, v]] = True
    if not inner_edges:
        raise ValueError("triangulation has no interior edge")

    kept = np.where(used)[0]
    newid = np.full(len(pos), -1, dtype=np.int64)
    newid[kept] = np.arange(len(kept))
    n_primal = len(kept)
    quads = []
    for (u, v), lst in inner_edges:
        # A ccw quad cycle crosses the primal diagonal u->v with the dual
        # on its right first: u, t_right, v, t_left.
        (t1, u1, _), (t2, _, _) = lst
        tl, tr = (t1, t2) if u1 == u else (t2, t1)
        quads.append([newid[u], n_primal + tr, newid[v], n_primal + tl])
    g = build_quadgraph(n_primal, len(tri), quads)
    return g, pos[kept], kept, tri


# ---------------------------------------------------------------------------
# Dobrushin boundary data


@dataclass
class DobrushinBoundary:
    """Two complementary boundary arcs with their forced quads.

    The wired arc is a path of primal vertices running ccw from b's
    primal end to a's primal end; the free arc is a path of dual
    vertices running ccw from a's dual end to b's dual end.  Consecutive
    vertices of an arc are the diagonal of a quad: those quads are
    forced open (wired arc) or forced closed (free arc).  Remaining
    quads are free.
    """

    a: int
    b: int
    primal_arc: np.ndarray
    dual_arc: np.ndarray
    forced_open: np.ndarray
    forced_closed: np.ndarray
    free: np.ndarray

    @property
    def n_free(self) -> int:
        return len(self.free)


def make_dobrushin(g: QuadGraph, primal_arc, dual_arc) -> DobrushinBoundary:
    """Build and validate Dobrushin data from the two vertex arcs."""
    pa = np.asarray(primal_arc, dtype=np.int64)
    da = np.asarray(dual_arc, dtype=np.int64)
    if len(pa) < 1 or len(da) < 1:
        raise ValueError("arcs must be nonempty")
    if not np.all(g.is_primal(pa)) or np.any(g.is_primal(da)):
        raise ValueError("arc coloring is wrong")
    if len(set(pa.tolist())) != len(pa) or len(set(da.tolist())) != len(da):
        raise ValueError("arc revisits a vertex")
    a = g.corner_id(int(pa[-1]), int(da[0]))
    b = g.corner_id(int(pa[0]), int(da[-1]))
    if not (g.is_boundary_corner(a) and g.is_boundary_corner(b)):
        raise ValueError("marked corners must lie on the outer face")

    forced_open = []
    for u, v in zip(pa[:-1], pa[1:]):
        z = g.quad_of_primal_pair(int(u), int(v))
        if z < 0:
            raise ValueError(f"wired arc step {u}-{v} is not a quad diagonal")
        forced_open.append(z)
    forced_closed = []
    for u, v in zip(da[:-1], da[1:]):
        z = g.quad_of_dual_pair(int(u), int(v))
        if z < 0:
            raise ValueError(f"free arc step {u}-{v} is not a quad diagonal")
        forced_closed.append(z)
    fo = np.asarray(sorted(forced_open), dtype=np.int64)
    fc = np.asarray(sorted(forced_closed), dtype=np.int64)
    if np.intersect1d(fo, fc).size:
        raise ValueError("a quad is forced both open and closed")
    mask = np.ones(g.n_quads, dtype=bool)
    mask[fo] = False
    mask[fc] = False
    free = np.where(mask)[0].astype(np.int64)
    return DobrushinBoundary(a=a, b=b, primal_arc=pa, dual_arc=da,
                             forced_open=fo, forced_closed=fc, free=free)


def rect_dobrushin(g: QuadGraph, width: int, height: int,
                   ja: int | None = None, jb: int | None = None) -> DobrushinBoundary:
    """Standard Dobrushin arcs on the rectangular lattice.

    Marked corner a sits mid-left at height ja (odd), b mid-right at jb
    (odd).  The wired arc zigzags b -> top -> a along the upper route;
    the free arc zigzags a -> bottom -> b along the lower route.  Needs
    even width and height so the zigzags stay on one color.
    """
    if width % 2 or height % 2 or width < 2 or height < 2:
        raise ValueError("rect Dobrushin needs even width and height >= 2")
    if ja is None:
        ja = min(height // 2 + (0 if (height // 2) % 2 else 1), height - 1)
    if jb is None:
        jb = ja
    if ja % 2 == 0 or jb % 2 == 0 or not (0 < ja < height and 0 < jb < height):
        raise ValueError("ja, jb must be odd interior heights")
    vid, _ = rect_vertex_ids(width, height)

    # Wired route b -> a: up the right side, across the top, down the left.
    wired = [(width, jb)]
    j = jb
    while j + 2 <= height:
        wired += [(width - 1, j + 1), (width, j + 2)]
        j += 2
    wired.append((width - 1, height))
    i = width - 1
    while i - 2 >= 1:
        wired += [(i - 1, height - 1), (i - 2, height)]
        i -= 2
    wired.append((0, height - 1))
    j = height - 1
    while j - 2 >= ja:
        wired += [(1, j - 1), (0, j - 2)]
        j -= 2

    # Free route a -> b: down the left side, across the bottom, up the right.
    # The two extreme bottom nodes (0,0) and (width,0) only enter when the
    # marked height is 1; otherwise they sit in sealed-off pocket cells.
    free = [(0, ja - 1)]
    j = ja - 1
    while j > 2:
        free += [(1, j - 1), (0, j - 2)]
        j -= 2
    free.append((1, 1))
    for i in range(2, width):
        free.append((i, 0) if i % 2 == 0 else (i, 1))
    if jb == 1:
        free.append((width, 0))
    else:
        free.append((width, 2))
        j = 2
        while j < jb - 1:
            free += [(width - 1, j + 1), (width, j + 2)]
            j += 2

    pa = [int(vid[i, j]) for i, j in wired]
    da = [int(vid[i, j]) for i, j in free]
    return make_dobrushin(g, pa, da)


def disc_dobrushin(g: QuadGraph, positions, a, b) -> DobrushinBoundary:
    """Route Dobrushin arcs on an arbitrary disc quad-graph.

    Junction corners are the boundary corners nearest the requested
    complex positions ``a`` and ``b``.  The wired (primal) and free
    (dual) arcs are then routed between them along opposite stretches
    of the outer face.  Arc steps must be quad diagonals, and boundary
    vertices are not always diagonal-adjacent to their rim neighbors,
    so each arc is a cheapest path that pays a steep toll for every
    hop it strays from its own stretch of rim.  That keeps the arcs
    hugging the boundary instead of cutting across the bulk, which
    would silently shrink the enclosed free region.
    """
    positions = np.asarray(positions, dtype=np.complex128)
    bv = g.boundary_vertices
    bc = g.boundary_corners
    if len(bc) == 0:
        raise ValueError("graph has no boundary corners")
    cpos = (positions[g.corners[bc, 0]] + positions[g.corners[bc, 1]]) / 2.0
    # Walking ccw, the wired arc ends at a and restarts at b, so corner a
    # must read (primal, dual) along the rim and corner b (dual, primal).
    # Only half the boundary corners qualify for each role.
    a_ok = g.is_primal(bv)
    dist_a = np.where(a_ok, np.abs(cpos - complex(a)), np.inf)
    dist_b = np.where(~a_ok, np.abs(cpos - complex(b)), np.inf)
    ia = int(np.argmin(dist_a))
    ib = int(np.argmin(dist_b))
    if not np.isfinite(dist_a[ia]) or not np.isfinite(dist_b[ib]):
        raise ValueError("no junction corner of the required orientation")
    if ia == ib:
        raise ValueError("marks resolve to the same boundary corner")
    prim_a, dual_a = (int(x) for x in g.corners[bc[ia]])
    prim_b, dual_b = (int(x) for x in g.corners[bc[ib]])

    n = len(bv)
    # boundary_corners[i] joins bv[i] -> bv[i+1], walking ccw.
    def rim_verts(lo, hi):
        i = (lo + 1) % n
        out = []
        while True:
            out.append(int(bv[i]))
            if i == (hi % n):
                break
            i = (i + 1) % n
        return out

    wired_rim = rim_verts(ib, ia)   # ccw stretch b -> a, hosts the primal arc
    free_rim = rim_verts(ia, ib)    # ccw stretch a -> b, hosts the dual arc

    prim_adj: dict[int, list[int]] = {}
    dual_adj: dict[int, list[int]] = {}
    for z in range(g.n_quads):
        v0, t0, v1, t1 = (int(x) for x in g.quads[z])
        prim_adj.setdefault(v0, []).append(v1)
        prim_adj.setdefault(v1, []).append(v0)
        dual_adj.setdefault(t0, []).append(t1)
        dual_adj.setdefault(t1, []).append(t0)

    pa = _rim_path(prim_adj, prim_b, prim_a,
                   home={v for v in wired_rim if g.is_primal(v)},
                   banned={v for v in free_rim if g.is_primal(v)} - {prim_a, prim_b})
    da = _rim_path(dual_adj, dual_a, dual_b,
                   home={v for v in free_rim if not g.is_primal(v)},
                   banned={v for v in wired_rim if not g.is_primal(v)} - {dual_a, dual_b})
    return make_dobrushin(g, pa, da)


def _rim_path(adj, src, dst, home, banned):
    """Cheapest path src -> dst avoiding ``banned``, hugging ``home``."""
    if src == dst:
        return [src]
    # Hop distance from the home rim stretch prices each vertex.
    depth = {v: 0 for v in home}
    frontier = list(home)
    while frontier:
        nxt = []
        for v in frontier:
            for w in adj.get(v, ()):
                if w not in depth and w not in banned:
                    depth[w] = depth[v] + 1
                    nxt.append(w)
        frontier = nxt
    far = max(depth.values(), default=0) + 1
    heap = [(0.0, src, -1)]
    prev = {}
    done = set()
    while heap:
        cost, v, par = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        prev[v] = par
        if v == dst:
            break
        for w in adj.get(v, ()):
            if w in done or w in banned:
                continue
            heapq.heappush(heap, (cost + 1.0 + 10.0 * depth.get(w, far), w, v))
    if dst not in prev:
        raise ValueError("no arc route between the marked corners")
    path = [dst]
    while path[-1] != src:
        path.append(prev[path[-1]])
    return path[::-1]


# ---------------------------------------------------------------------------
# Plain-text serialization


def write_graph(g: QuadGraph, boundary: DobrushinBoundary | None = None) -> str:
    """Serialize a quad-graph (and optional Dobrushin data) to text.

    One record per line: PV/DV vertex declarations, QUAD with its id and
    ccw corner vertices, ROT with the ccw quad fan around each vertex,
    then ARC_P/ARC_D and the marked corners A/B (as primal dual pairs)
    when Dobrushin data is attached.
    """
    out = io.StringIO()
    for v in range(g.n_primal):
        out.write(f"PV {v}\n")
    for v in range(g.n_primal, g.n_vertices):
        out.write(f"DV {v}\n")
    for z in range(g.n_quads):
        out.write(f"QUAD {z} " + " ".join(str(int(x)) for x in g.quads[z]) + "\n")
    for v in range(g.n_vertices):
        out.write(f"ROT {v} " + " ".join(str(int(z)) for z in g.fan_quads[v]) + "\n")
    if boundary is not None:
        out.write("ARC_P " + " ".join(str(int(v)) for v in boundary.primal_arc) + "\n")
        out.write("ARC_D " + " ".join(str(int(v)) for v in boundary.dual_arc) + "\n")
        ca, cb = g.corners[boundary.a], g.corners[boundary.b]
        out.write(f"A {int(ca[0])} {int(ca[1])}\n")
        out.write(f"B {int(cb[0])} {int(cb[1])}\n")
    return out.getvalue()


def read_graph(text: str) -> tuple[QuadGraph, DobrushinBoundary | None]:
    """Inverse of write_graph.  Revalidates everything on load."""
    pv, dv = set(), set()
    quads = {}
    rots = {}
    pa = da = corner_a = corner_b = None
    for ln in text.splitlines():
        parts = ln.split()
        if not parts or parts[0].startswith("#"):
            continue
        rec = parts[0]
        if rec == "PV":
            pv.add(int(parts[1]))
        elif rec == "DV":
            dv.add(int(parts[1]))
        elif rec == "QUAD":
            quads[int(parts[1])] = [int(x) for x in parts[2:6]]
        elif rec == "ROT":
            rots[int(parts[1])] = [int(x) for x in parts[2:]]
        elif rec == "ARC_P":
            pa = [int(x) for x in parts[1:]]
        elif rec == "ARC_D":
            da = [int(x) for x in parts[1:]]
        elif rec == "A":
            corner_a = (int(parts[1]), int(parts[2]))
        elif rec == "B":
            corner_b = (int(parts[1]), int(parts[2]))
        else:
            raise ValueError(f"unknown record {rec!r}")
    if not quads:
        raise ValueError("no QUAD records")
    n_primal, n_dual = len(pv), len(dv)
    if pv != set(range(n_primal)) or dv != set(range(n_primal, n_primal + n_dual)):
        raise ValueError("PV/DV ids must be dense, primal first")
    if set(quads) != set(range(len(quads))):
        raise ValueError("QUAD ids must be dense")
    g = build_quadgraph(n_primal, n_dual, [quads[z] for z in range(len(quads))])
    for v, fan in rots.items():
        got = [int(z) for z in g.fan_quads[v]]
        if sorted(got) != sorted(fan):
            raise ValueError(f"ROT record at vertex {v} does not match the quads")
    bd = make_dobrushin(g, pa, da) if pa is not None and da is not None else None
    if bd is not None:
        for rec, corner, cid in (("A", corner_a, bd.a), ("B", corner_b, bd.b)):
            if corner is not None and tuple(int(x) for x in g.corners[cid]) != corner:
                raise ValueError(f"{rec} record does not match the arcs")
    return g, bd
