"""Continuum oracle: maximal surfaces and the metric Dirichlet problem.

The discrete pipeline is compared against the harmonic function of the
induced Lorentzian metric g = I - grad(theta) grad(theta)^T with
boundary values 0 and 1 on two marked arcs.  Everything here is
classical numerics: closed-form metric algebra plus a piecewise-linear
Galerkin solve on a triangulated domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .sembedding import SurfaceSpec, surface_mesh

__all__ = [
    "Surface",
    "MarkedDomain",
    "FemSolution",
    "mark_domain",
    "maximal_residual",
    "laplace_beltrami",
    "solve_h",
    "boost_equivalence_check",
]


# ---------------------------------------------------------------------------
# Induced metric


def _grad_xy(spec: SurfaceSpec, pts: np.ndarray) -> np.ndarray:
    gz = np.asarray(spec.grad(pts), dtype=complex)
    return np.stack([gz.real, gz.imag], axis=-1)


@dataclass
class Surface:
    """A space-like graph surface together with its induced metric."""

    spec: SurfaceSpec

    def metric(self, pts) -> np.ndarray:
        """g(p) = I - grad(theta) grad(theta)^T, shape (..., 2, 2)."""
        u = _grad_xy(self.spec, np.asarray(pts, dtype=complex))
        eye = np.eye(2)
        return eye - u[..., :, None] * u[..., None, :]

    def metric_det(self, pts) -> np.ndarray:
        gz = np.asarray(self.spec.grad(np.asarray(pts, dtype=complex)))
        return 1.0 - np.abs(gz) ** 2

    def min_metric_eigenvalue(self, pts) -> float:
        # eigenvalues of I - u u^T are 1 and 1 - |u|^2
        return float(np.min(self.metric_det(pts)))

    def check_spacelike(self, pts) -> None:
        lam = self.min_metric_eigenvalue(pts)
        if lam <= 0.0:
            raise ValueError(
                f"metric degenerate: min eigenvalue {lam:.3g} <= 0")


# ---------------------------------------------------------------------------
# Marked domains


@dataclass
class MarkedDomain:
    """Polygonal domain with two marked boundary points.

    The boundary arc from a to b in the polygon's ccw orientation
    carries Dirichlet value 0, the complementary arc from b to a
    carries 1.
    """

    polygon: np.ndarray
    a: complex
    b: complex

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=complex)
        if len(self.polygon) < 3:
            raise ValueError("polygon needs at least three vertices")
        if _signed_area(self.polygon) < 0.0:
            self.polygon = self.polygon[::-1].copy()
        self.a = complex(self.a)
        self.b = complex(self.b)
        scale = self.boundary_scale()
        if abs(self.a - self.b) <= 1e-12 * scale:
            raise ValueError("marked points must be distinct")
        # loose gate: curved boundaries arrive as chord polygons, so the
        # marks may sit a chord-sag away from the polygon itself
        for name, p in (("a", self.a), ("b", self.b)):
            if _distance_to_polygon(self.polygon, p) > 1e-3 * scale:
                raise ValueError(f"marked point {name} is not on the boundary")

    def boundary_scale(self) -> float:
        d = np.abs(np.diff(np.append(self.polygon, self.polygon[0])))
        return float(d.sum())

    def contains(self, pts) -> np.ndarray:
        """Ray-crossing test, vectorized over points."""
        pts = np.atleast_1d(np.asarray(pts, dtype=complex))
        poly = self.polygon
        x, y = pts.real[:, None], pts.imag[:, None]
        x0, y0 = poly.real[None, :], poly.imag[None, :]
        x1 = np.roll(poly.real, -1)[None, :]
        y1 = np.roll(poly.imag, -1)[None, :]
        straddle = (y0 <= y) != (y1 <= y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        hits = straddle & (x < xcross)
        return hits.sum(axis=1) % 2 == 1


def _signed_area(poly: np.ndarray) -> float:
    nxt = np.roll(poly, -1)
    return 0.5 * float(np.sum(poly.real * nxt.imag - poly.imag * nxt.real))


def _distance_to_polygon(poly: np.ndarray, p: complex) -> float:
    a = poly
    b = np.roll(poly, -1)
    ab = b - a
    t = np.clip(((p - a) * np.conj(ab)).real / np.abs(ab) ** 2, 0.0, 1.0)
    return float(np.min(np.abs(a + t * ab - p)))


def mark_domain(spec: SurfaceSpec, a: complex, b: complex,
                arc_points: int = 64) -> MarkedDomain:
    """Build the marked polygon matching the spec's meshing region."""
    dom = spec.domain
    if dom[0] == "rect":
        _, x0, y0, x1, y1 = dom
        poly = np.array([complex(x0, y0), complex(x1, y0),
                         complex(x1, y1), complex(x0, y1)])
    elif dom[0] == "annulus_sector":
        _, r0, r1, p0, p1 = dom
        ang = np.linspace(p0, p1, arc_points)
        outer = r1 * np.exp(1j * ang)
        inner = r0 * np.exp(1j * ang[::-1])
        poly = np.concatenate([outer, inner])
    else:
        raise ValueError(f"cannot build a polygon for domain {dom[0]!r}")
    return MarkedDomain(polygon=poly, a=a, b=b)


# ---------------------------------------------------------------------------
# Pointwise operators


def maximal_residual(spec: SurfaceSpec, point) -> np.ndarray | float:
    """Defect of the maximal-surface equation div(grad/sqrt(1-|grad|^2)).

    Zero for planes and for the Lorentzian catenoid; the magnitude
    measures how far the surface is from zero mean curvature.
    """
    pts = np.asarray(point, dtype=complex)
    scalar = pts.ndim == 0
    pts = np.atleast_1d(pts)
    u = _grad_xy(spec, pts)
    hess = np.asarray(spec.hess(pts), dtype=float)
    n2 = np.sum(u * u, axis=-1)
    if np.any(n2 >= 1.0):
        raise ValueError("surface is not space-like at the requested point")
    w = 1.0 / np.sqrt(1.0 - n2)
    trace = hess[..., 0, 0] + hess[..., 1, 1]
    uhu = np.einsum("...i,...ij,...j->...", u, hess, u)
    res = w * trace + w**3 * uhu
    return float(res[0]) if scalar else res


def _fd_gradient(h, z: complex, eps: float) -> np.ndarray:
    return np.array([
        (h(z + eps) - h(z - eps)) / (2 * eps),
        (h(z + 1j * eps) - h(z - 1j * eps)) / (2 * eps),
    ])


def _fd_hessian(h, z: complex, eps: float) -> np.ndarray:
    hxx = (h(z + eps) - 2 * h(z) + h(z - eps)) / eps**2
    hyy = (h(z + 1j * eps) - 2 * h(z) + h(z - 1j * eps)) / eps**2
    hxy = (h(z + eps + 1j * eps) - h(z + eps - 1j * eps)
           - h(z - eps + 1j * eps) + h(z - eps - 1j * eps)) / (4 * eps**2)
    return np.array([[hxx, hxy], [hxy, hyy]])


def laplace_beltrami(spec: SurfaceSpec, h, point,
                     h_grad=None, h_hess=None, eps: float = 1e-5) -> float:
    """Metric Laplacian (1/sqrt|g|) d_i(sqrt|g| g^{ij} d_j h) at a point.

    The metric factors are differentiated in closed form from the
    spec's gradient and Hessian.  Derivatives of h come from h_grad and
    h_hess when given, otherwise from central differences of step eps;
    for a flat spec and polynomial h with analytic derivatives the
    result is the exact planar Laplacian.
    """
    z = complex(point)
    pt = np.array([z])
    u = _grad_xy(spec, pt)[0]
    H = np.asarray(spec.hess(pt), dtype=float)[0]
    n2 = float(u @ u)
    if n2 >= 1.0:
        raise ValueError("metric degenerate: |grad theta| >= 1")
    w = 1.0 / math.sqrt(1.0 - n2)

    if h_grad is not None:
        dh = np.asarray(h_grad(z), dtype=float).reshape(2)
    else:
        dh = _fd_gradient(h, z, eps)
    if h_hess is not None:
        d2h = np.asarray(h_hess(z), dtype=float).reshape(2, 2)
    else:
        d2h = _fd_hessian(h, z, eps)

    # T^{ij} = sqrt|g| g^{ij} = (1/w) I + w u u^T,  s_k = u^T H e_k
    s = u @ H
    T = np.eye(2) / w + w * np.outer(u, u)
    dT = np.empty((2, 2, 2))  # dT[k] = d_k T
    for k in range(2):
        dT[k] = (-w * s[k] * np.eye(2) + w**3 * s[k] * np.outer(u, u)
                 + w * (np.outer(H[:, k], u) + np.outer(u, H[:, k])))
    div_T = dT[0, 0, :] + dT[1, 1, :]
    return float(w * (np.tensordot(T, d2h) + div_T @ dh))


# ---------------------------------------------------------------------------
# Finite elements


@dataclass
class FemSolution:
    """Nodal solution of the metric Dirichlet problem on a triangle mesh.

    boundary_nodes and boundary_values record the imposed data;
    node_a / node_b are the mesh nodes the marked points snapped to and
    snap_a / snap_b the snapping distances.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    values: np.ndarray
    boundary_nodes: np.ndarray
    boundary_values: np.ndarray
    node_a: int
    node_b: int
    snap_a: float
    snap_b: float

    def interpolate(self, pts) -> np.ndarray:
        """Barycentric interpolation; NaN outside the mesh."""
        pts = np.atleast_1d(np.asarray(pts, dtype=complex))
        tri = self.nodes[self.triangles]  # (m, 3)
        out = np.full(len(pts), np.nan)
        for i, p in enumerate(pts):
            w0 = _cross(tri[:, 1] - p, tri[:, 2] - p)
            w1 = _cross(tri[:, 2] - p, tri[:, 0] - p)
            w2 = _cross(tri[:, 0] - p, tri[:, 1] - p)
            total = w0 + w1 + w2
            ok = np.minimum(np.minimum(w0, w1), w2) >= -1e-12 * np.abs(total)
            hit = np.flatnonzero(ok)
            if len(hit) == 0:
                continue
            t = int(hit[0])
            lam = np.array([w0[t], w1[t], w2[t]]) / total[t]
            out[i] = lam @ self.values[self.triangles[t]]
        return out

    def to_csv(self) -> str:
        lines = ["node_id,x,y,h"]
        for i, (z, v) in enumerate(zip(self.nodes, self.values)):
            lines.append(f"{i},{z.real:.17g},{z.imag:.17g},{v:.17g}")
        return "\n".join(lines) + "\n"


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a.real * b.imag - a.imag * b.real


def _boundary_cycle(n_nodes: int, tris: np.ndarray) -> np.ndarray:
    """Boundary nodes in ccw order (assumes one boundary component)."""
    seen = {}
    for t in tris:
        for i in range(3):
            e = int(t[i]), int(t[(i + 1) % 3])
            key = (min(e), max(e))
            if key in seen:
                seen[key] = None
            else:
                seen[key] = e
    succ = {}
    for e in seen.values():
        if e is not None:
            if e[0] in succ:
                raise ValueError("boundary is not a simple cycle")
            succ[e[0]] = e[1]
    if not succ:
        raise ValueError("mesh has no boundary")
    start = min(succ)
    cycle = [start]
    nxt = succ[start]
    while nxt != start:
        cycle.append(nxt)
        nxt = succ[nxt]
    if len(cycle) != len(succ):
        raise ValueError("boundary has more than one component")
    return np.asarray(cycle, dtype=np.int64)


def _element_matrices(nodes: np.ndarray, tris: np.ndarray,
                      spec: SurfaceSpec) -> np.ndarray:
    p = nodes[tris]
    area2 = _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    if np.any(area2 <= 0):
        raise ValueError("degenerate or misoriented triangle in the mesh")
    # P1 hat gradients: rotate the opposite edge by +90 degrees
    edges = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2],
                      p[:, 1] - p[:, 0]], axis=1)
    grads = np.stack([-edges.imag, edges.real], axis=-1) / area2[:, None, None]

    bary = p.mean(axis=1)
    u = _grad_xy(spec, bary)
    n2 = np.sum(u * u, axis=-1)
    if np.any(n2 >= 1.0):
        raise ValueError("metric degenerate inside an element")
    root = np.sqrt(1.0 - n2)
    # sqrt|g| g^{-1} = sqrt(1-|u|^2) I + u u^T / sqrt(1-|u|^2)
    M = (root[:, None, None] * np.eye(2)
         + u[:, :, None] * u[:, None, :] / root[:, None, None])
    mg = np.einsum("tab,tjb->tja", M, grads)
    return 0.5 * area2[:, None, None] * np.einsum(
        "tia,tja->tij", grads, mg)


def _assemble(nodes: np.ndarray, tris: np.ndarray,
              spec: SurfaceSpec) -> sparse.csr_matrix:
    ke = _element_matrices(nodes, tris, spec)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    k = sparse.coo_matrix((ke.ravel(), (rows, cols)),
                          shape=(len(nodes), len(nodes)))
    return k.tocsr()


def _orient_ccw(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    flip = _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, ::-1]
    return tris


def _dirichlet_solve(K: sparse.csr_matrix, bnodes: np.ndarray,
                     bvals: np.ndarray) -> np.ndarray:
    n = K.shape[0]
    x0 = np.zeros(n)
    x0[bnodes] = bvals
    is_b = np.zeros(n, dtype=bool)
    is_b[bnodes] = True
    rhs = -(K @ x0)
    rhs[is_b] = bvals
    keep = sparse.diags((~is_b).astype(float))
    kmod = keep @ K @ keep + sparse.diags(is_b.astype(float))
    values = spsolve(kmod.tocsc(), rhs)
    values[bnodes] = bvals
    return values


def rect_grid_mesh(x0: float, y0: float, x1: float, y1: float,
                   nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform right-triangle grid whose boundary is the exact rectangle.

    All diagonals run the same way, so the mesh maps to itself under a
    half-turn about the rectangle's center.
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    nodes = (xs[None, :] + 1j * ys[:, None]).ravel()
    tris = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            v10, v01 = v00 + 1, v00 + nx + 1
            v11 = v01 + 1
            tris.append([v00, v10, v11])
            tris.append([v00, v11, v01])
    return nodes, np.asarray(tris, dtype=np.int64)


def refine_mesh(nodes: np.ndarray,
                tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split every triangle into four through the edge midpoints.

    Coarse nodes keep their ids and the boundary polygon is unchanged,
    so Dirichlet junctions stay put under repeated refinement; that is
    what makes Richardson-style self-convergence measurements clean.
    """
    nodes = np.asarray(nodes, dtype=complex)
    tris = np.asarray(tris, dtype=np.int64)
    new_nodes = list(nodes)
    mid_id: dict[tuple[int, int], int] = {}

    def midpoint(u: int, v: int) -> int:
        key = (u, v) if u < v else (v, u)
        if key not in mid_id:
            mid_id[key] = len(new_nodes)
            new_nodes.append(0.5 * (nodes[key[0]] + nodes[key[1]]))
        return mid_id[key]

    out = []
    for t0, t1, t2 in tris:
        m01, m12, m20 = midpoint(t0, t1), midpoint(t1, t2), midpoint(t2, t0)
        out.extend([[t0, m01, m20], [t1, m12, m01],
                    [t2, m20, m12], [m01, m12, m20]])
    return np.asarray(new_nodes), np.asarray(out, dtype=np.int64)


def _arclength_coord(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """ccw arclength of the nearest polygon point, one value per pt."""
    a = poly
    b = np.roll(poly, -1)
    ab = b - a
    seg = np.abs(ab)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        t = np.clip(((p - a) * np.conj(ab)).real / seg**2, 0.0, 1.0)
        d = np.abs(a + t * ab - p)
        k = int(np.argmin(d))
        out[i] = cum[k] + t[k] * seg[k]
    return out


def solve_h(spec: SurfaceSpec, domain: MarkedDomain, mesh_size: float,
            mesh: tuple | None = None,
            junction_ramp: float = 0.0) -> FemSolution:
    """Galerkin solve of the metric Laplace problem with 0/1 arc data.

    Linear triangles, metric evaluated at element barycenters, Dirichlet
    rows imposed exactly.  The marked points snap to the nearest mesh
    boundary nodes; value 0 runs from a to b in ccw order, 1 on the
    complementary arc.  ``mesh`` overrides the built-in mesher with a
    (points, triangles) pair.

    ``junction_ramp`` > 0 replaces the 0/1 step at each marked point by
    a linear ramp of that boundary arclength.  The data then no longer
    depends on where mesh nodes fall, which is what refinement studies
    need: the step datum has unbounded energy and the step position
    moves with the mesh, capping observed self-convergence at first
    order.
    """
    if mesh_size <= 0:
        raise ValueError("mesh_size must be positive")
    if mesh is None:
        nodes, tris, _ = surface_mesh(spec, mesh_size)
    else:
        nodes, tris = mesh
    nodes = np.asarray(nodes, dtype=complex)
    tris = _orient_ccw(nodes, np.asarray(tris, dtype=np.int64))

    cycle = _boundary_cycle(len(nodes), tris)
    pos = nodes[cycle]
    ia = int(np.argmin(np.abs(pos - domain.a)))
    ib = int(np.argmin(np.abs(pos - domain.b)))
    if ia == ib:
        raise ValueError("marked points snap to the same boundary node")
    snap_a = float(abs(pos[ia] - domain.a))
    snap_b = float(abs(pos[ib] - domain.b))

    nb = len(cycle)
    if junction_ramp > 0.0:
        poly = domain.polygon
        s = _arclength_coord(poly, pos)
        sa, sb = _arclength_coord(poly, np.array([domain.a, domain.b]))
        total = float(np.sum(np.abs(np.roll(poly, -1) - poly)))
        len0 = (sb - sa) % total
        if not junction_ramp < min(len0, total - len0):
            raise ValueError("junction ramp wider than an arc")
        u = (s - sa) % total
        da = np.minimum(u, total - u)
        ta = da * np.where(u <= len0, 1.0, -1.0)
        ub = (u - len0) % total
        db = np.minimum(ub, total - ub)
        tb = db * np.where(ub <= total - len0, 1.0, -1.0)
        # ramp at whichever marked point is nearer along the boundary;
        # the C1 smoothstep profile keeps the datum representable at
        # second order by boundary interpolation regardless of where
        # the nodes land
        xi = np.clip(np.where(da <= db, 0.5 - ta / junction_ramp,
                              0.5 + tb / junction_ramp), 0.0, 1.0)
        bvals = xi * xi * (3.0 - 2.0 * xi)
        bnodes = cycle
    else:
        arc0 = [cycle[(ia + k) % nb] for k in range((ib - ia) % nb)]
        arc1 = [cycle[(ib + k) % nb] for k in range((ia - ib) % nb)]
        bnodes = np.asarray(arc0 + arc1, dtype=np.int64)
        bvals = np.concatenate([np.zeros(len(arc0)), np.ones(len(arc1))])

    K = _assemble(nodes, tris, spec)
    values = _dirichlet_solve(K, bnodes, bvals)

    lo, hi = float(values.min()), float(values.max())
    if lo < -1e-9 or hi > 1.0 + 1e-9:
        raise ValueError(
            f"maximum principle violated: range [{lo:.3g}, {hi:.3g}]")
    values = np.clip(values, 0.0, 1.0)
    return FemSolution(nodes=nodes, triangles=tris, values=values,
                       boundary_nodes=bnodes, boundary_values=bvals,
                       node_a=int(cycle[ia]), node_b=int(cycle[ib]),
                       snap_a=snap_a, snap_b=snap_b)


def _sqrt_metric(a: float, b: float) -> np.ndarray:
    """Symmetric square root of I - u u^T for u = (a, b)."""
    n2 = a * a + b * b
    if n2 >= 1.0:
        raise ValueError("tilt must satisfy a^2 + b^2 < 1")
    if n2 == 0.0:
        return np.eye(2)
    u = np.array([a, b]) / math.sqrt(n2)
    return np.eye(2) - (1.0 - math.sqrt(1.0 - n2)) * np.outer(u, u)


def boost_equivalence_check(spec: SurfaceSpec, domain: MarkedDomain,
                            mesh_size: float = 0.125) -> float:
    """Max nodal deviation between the tilted-plane solve and the flat
    solve on the affinely mapped domain.

    The induced metric of a plane is constant, so the square-root map
    B = g^{1/2} pulls the problem back to the flat one; both solves use
    the same connectivity with mapped nodes, making the comparison
    exact up to solver roundoff.
    """
    if spec.kind not in ("flat", "tilted"):
        raise ValueError("boost equivalence applies to planar specs only")
    a = float(spec.params.get("a", 0.0))
    b = float(spec.params.get("b", 0.0))
    B = _sqrt_metric(a, b)

    tilted = solve_h(spec, domain, mesh_size)

    zb = tilted.nodes
    mapped = (B[0, 0] * zb.real + B[0, 1] * zb.imag
              + 1j * (B[1, 0] * zb.real + B[1, 1] * zb.imag))
    flat = SurfaceSpec(
        kind="flat",
        theta=lambda z: np.zeros(np.shape(z)),
        grad=lambda z: np.zeros(np.shape(z), dtype=complex),
        hess=lambda z: np.zeros(np.shape(z) + (2, 2)),
        domain=spec.domain, kappa=0.0)
    K = _assemble(mapped, tilted.triangles, flat)
    flat_vals = _dirichlet_solve(K, tilted.boundary_nodes,
                                 tilted.boundary_values)
    return float(np.max(np.abs(flat_vals - tilted.values)))
