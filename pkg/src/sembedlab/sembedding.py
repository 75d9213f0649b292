"""Geometric realization of quad-graphs: s-embeddings.

An s-embedding places primal and dual vertices in the plane so that
every quad is tangential (admits an inscribed circle), together with a
lift Q to Minkowski space R^{2,1} in which all corner vectors are null.
This module computes incenters, Ising weights, the Q-lift, Lorentz
isometries acting on lifted embeddings, and the triangulation-based
construction of embeddings over space-like surfaces q = theta(x, y).
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import quadgraph as qg

__all__ = [
    "SEmbedding",
    "LorentzMap",
    "SurfaceSpec",
    "MonodromyError",
    "flat_surface",
    "tilted_surface",
    "catenoid_surface",
    "tabulated_surface",
    "lift_q",
    "quad_center",
    "weight_from_geometry",
    "make_sembedding",
    "flat_rect_embedding",
    "lorentz_boost",
    "lorentz_rotation",
    "lorentz_translation",
    "apply_isometry",
    "build_maximal_triangulation",
    "check_unif",
    "check_approx",
    "write_embedding",
    "read_embedding",
    "render_svg",
]

ETA = np.diag([1.0, 1.0, -1.0])  # Minkowski form on (x, y, q)


class MonodromyError(ValueError):
    """A quad breaks the tangential condition: the lift cannot close.

    Carries the worst quad id and its defect, the mismatch of the two
    opposite-side length sums.
    """

    def __init__(self, quad: int, defect: float):
        super().__init__(
            f"lift monodromy: quad {quad} violates the tangential "
            f"condition by {defect:.3g}"
        )
        self.quad = quad
        self.defect = defect


# ---------------------------------------------------------------------------
# Surfaces q = theta(x, y)


@dataclass
class SurfaceSpec:
    """A space-like graph surface with closed-form derivatives.

    ``theta``, ``grad`` and ``hess`` are vectorized over complex planar
    points: theta -> float array, grad -> complex array (d/dx + i d/dy),
    hess -> (n, 2, 2) array.  ``domain`` tags the meshing region:
    ("rect", x0, y0, x1, y1) or ("annulus_sector", r0, r1, phi0, phi1).
    ``kappa`` bounds sup |grad theta| < 1 on the domain.
    """

    kind: str
    theta: callable
    grad: callable
    hess: callable
    domain: tuple
    kappa: float
    params: dict = field(default_factory=dict)


def _check_kappa(spec: SurfaceSpec, samples: np.ndarray) -> SurfaceSpec:
    kap = float(np.max(np.abs(spec.grad(samples)))) if len(samples) else 0.0
    if kap >= 1.0:
        raise ValueError(f"surface is not uniformly space-like: sup|grad| = {kap:.3f}")
    spec.kappa = max(spec.kappa, kap)
    return spec


def _domain_samples(domain: tuple, n: int = 40) -> np.ndarray:
    if domain[0] == "rect":
        _, x0, y0, x1, y1 = domain
        xs = np.linspace(x0, x1, n)
        ys = np.linspace(y0, y1, n)
        return (xs[:, None] + 1j * ys[None, :]).ravel()
    if domain[0] == "annulus_sector":
        _, r0, r1, p0, p1 = domain
        rs = np.linspace(r0, r1, n)
        ps = np.linspace(p0, p1, n)
        return (rs[:, None] * np.exp(1j * ps[None, :])).ravel()
    raise ValueError(f"unknown domain kind {domain[0]!r}")


def flat_surface(domain=("rect", 0.0, 0.0, 1.0, 1.0)) -> SurfaceSpec:
    return SurfaceSpec(
        kind="flat",
        theta=lambda z: np.zeros(np.shape(z)),
        grad=lambda z: np.zeros(np.shape(z), dtype=complex),
        hess=lambda z: np.zeros(np.shape(z) + (2, 2)),
        domain=domain,
        kappa=0.0,
    )


def tilted_surface(a: float, b: float = 0.0,
                   domain=("rect", 0.0, 0.0, 1.0, 1.0)) -> SurfaceSpec:
    """Plane theta = a*x + b*y; space-like iff a^2 + b^2 < 1."""
    kap = math.hypot(a, b)
    if kap >= 1.0:
        raise ValueError("tilt must satisfy a^2 + b^2 < 1")
    return SurfaceSpec(
        kind="tilted",
        theta=lambda z: a * np.real(z) + b * np.imag(z),
        grad=lambda z: np.full(np.shape(z), a + 1j * b, dtype=complex),
        hess=lambda z: np.zeros(np.shape(z) + (2, 2)),
        domain=domain,
        kappa=kap,
        params={"a": a, "b": b},
    )


def catenoid_surface(c: float = 1.0,
                     domain=("annulus_sector", 0.5, 1.5, 0.0, np.pi / 2)) -> SurfaceSpec:
    """Lorentz catenoid theta = c * asinh(r / c), the rotationally
    symmetric maximal surface.  Needs r > 0 on the domain."""
    if c <= 0:
        raise ValueError("catenoid scale must be positive")

    def theta(z):
        return c * np.arcsinh(np.abs(z) / c)

    def grad(z):
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        dr = c / np.sqrt(c * c + r * r)  # radial slope, < 1 always
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(r > 0, dr * z / np.where(r > 0, r, 1.0), 0.0)
        return out

    def hess(z):
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        if np.any(r <= 0):
            raise ValueError("catenoid hessian undefined at the axis r = 0")
        tp = c / np.sqrt(c * c + r * r)
        tpp = -c * r / (c * c + r * r) ** 1.5
        ux, uy = np.real(z) / r, np.imag(z) / r
        h = np.empty(z.shape + (2, 2))
        h[..., 0, 0] = tpp * ux * ux + tp / r * uy * uy
        h[..., 1, 1] = tpp * uy * uy + tp / r * ux * ux
        h[..., 0, 1] = h[..., 1, 0] = (tpp - tp / r) * ux * uy
        return h

    spec = SurfaceSpec(kind="catenoid", theta=theta, grad=grad, hess=hess,
                       domain=domain, kappa=0.0, params={"c": c})
    return _check_kappa(spec, _domain_samples(domain))


def tabulated_surface(theta, grad, hess, domain, kind="tabulated") -> SurfaceSpec:
    spec = SurfaceSpec(kind=kind, theta=theta, grad=grad, hess=hess,
                       domain=domain, kappa=0.0)
    return _check_kappa(spec, _domain_samples(domain))


# ---------------------------------------------------------------------------
# Embedding container


@dataclass
class SEmbedding:
    """A validated s-embedding.  Treat as immutable after construction.

    ``s`` holds planar positions as complex numbers, ``q`` the lift.
    Per-quad data: incircle ``centers``, ``radii``, Ising ``weights``
    x_e in [0, 1] and the angles ``thetas`` with x_e = tan(theta/2).
    Per-corner data: lengths and unit directions of S(v_primal) -
    S(v_dual).
    """

    graph: qg.QuadGraph
    s: np.ndarray
    q: np.ndarray
    delta: float
    centers: np.ndarray
    radii: np.ndarray
    weights: np.ndarray
    thetas: np.ndarray
    tangential_defect: np.ndarray
    center_residual: np.ndarray
    corner_len: np.ndarray
    corner_dir: np.ndarray

    @property
    def n_quads(self) -> int:
        return self.graph.n_quads

    def quad_positions(self, z=None) -> np.ndarray:
        """(m, 4) complex positions in cycle order v0p, v0d, v1p, v1d."""
        if z is None:
            return self.s[self.graph.quads]
        return self.s[self.graph.quads[z]]

    def lifted(self) -> np.ndarray:
        """(n, 3) real coordinates (x, y, q)."""
        return np.column_stack([self.s.real, self.s.imag, self.q])


def _tol_for(s: np.ndarray, tol: float | None) -> float:
    if tol is not None:
        return tol
    scale = float(np.median(np.abs(s - np.mean(s)))) if len(s) else 1.0
    return 1e-9 * max(scale, 1e-6)


def lift_q(graph: qg.QuadGraph, s: np.ndarray, base_vertex: int | None = None,
           tol: float | None = None) -> np.ndarray:
    """Propagate the Minkowski lift from Q(base_vertex) = 0.

    Uses Q(primal) - Q(dual) = |S(primal) - S(dual)| across every corner.
    The result is propagation-order independent exactly when each quad is
    tangential; otherwise raises MonodromyError naming the worst quad.
    """
    s = np.asarray(s, dtype=complex)
    P = s[graph.quads]
    side = np.abs(P - np.roll(P, -1, axis=1))
    defect = np.abs((side[:, 0] + side[:, 2]) - (side[:, 1] + side[:, 3]))
    t = _tol_for(s, tol)
    worst = int(np.argmax(defect)) if len(defect) else 0
    if len(defect) and defect[worst] > t:
        raise MonodromyError(worst, float(defect[worst]))

    if graph.n_vertices == 0:
        return np.zeros(0)
    if base_vertex is None:
        base_vertex = graph.n_primal if graph.n_dual else 0
    clen = np.abs(s[graph.corners[:, 0]] - s[graph.corners[:, 1]])
    adj: list = [[] for _ in range(graph.n_vertices)]
    for c, (p, d) in enumerate(graph.corners):
        adj[p].append((int(d), float(clen[c])))
        adj[d].append((int(p), -float(clen[c])))
    # adj stores +len out of a primal end, -len out of a dual end, so the
    # corner relation reads q[w] = q[v] - stored in both directions.
    q = np.full(graph.n_vertices, np.nan)
    q[base_vertex] = 0.0
    stack = [int(base_vertex)]
    while stack:
        v = stack.pop()
        for w, ell in adj[v]:
            if np.isnan(q[w]):
                q[w] = q[v] - ell
                stack.append(w)
    if np.isnan(q).any():
        raise ValueError("graph is not connected: lift cannot reach every vertex")
    return q


def _incircle(P: np.ndarray):
    """Incenters of tangential quads by intersecting two angle bisectors.

    P is (m, 4) complex, ccw.  Returns (centers, radii, residual) where
    residual is the worst absolute deviation of the center-to-side
    distances from their mean.
    """
    def unit(v):
        n = np.abs(v)
        if np.any(n < 1e-300):
            raise ValueError("degenerate quad: coincident vertices")
        return v / n

    b0 = unit(unit(P[:, 3] - P[:, 0]) + unit(P[:, 1] - P[:, 0]))
    b1 = unit(unit(P[:, 0] - P[:, 1]) + unit(P[:, 2] - P[:, 1]))
    denom = np.imag(np.conj(b0) * b1)
    if np.any(np.abs(denom) < 1e-14):
        raise ValueError("degenerate quad: parallel bisectors")
    t = np.imag(np.conj(P[:, 1] - P[:, 0]) * b1) / denom
    centers = P[:, 0] + t * b0

    # Newton-polish on the alternating reciprocal sum over the corners
    # (+ primal, - dual): its root is the tangency center, and the quad
    # derivative identities downstream are exact precisely there.  Steps
    # are clamped to a fraction of the closest-vertex distance so thin
    # quads cannot push the center out.
    sign = np.array([1.0, -1.0, 1.0, -1.0])
    for _ in range(3):
        d = P - centers[:, None]
        r = (sign / d).sum(axis=1)
        rp = (sign / (d * d)).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            step = np.where(np.abs(rp) > 1e-300, r / rp, 0.0)
        lim = 0.25 * np.abs(d).min(axis=1)
        centers = centers - np.where(np.abs(step) <= lim, step, 0.0)

    edges = np.roll(P, -1, axis=1) - P
    elen = np.abs(edges)
    # signed distance from center to each side line; positive inside ccw
    dist = np.imag(np.conj(edges) * (centers[:, None] - P)) / elen
    radii = dist.mean(axis=1)
    residual = np.max(np.abs(dist - radii[:, None]), axis=1)
    return centers, radii, residual, dist


def quad_center(emb: SEmbedding, z: int) -> complex:
    """Incenter of quad z (the point S(e) of the inscribed circle)."""
    return complex(emb.centers[z])


def weight_from_geometry(emb: SEmbedding, z: int) -> float:
    """Ising weight x_e of quad z, recomputed from positions."""
    P = emb.quad_positions(z)[None, :]
    centers, _, _, _ = _incircle(P)
    w, _ = _weights_from(P, centers)
    return float(w[0])


def _weights_from(P: np.ndarray, centers: np.ndarray):
    d = np.abs(P - centers[:, None])
    if np.any(d < 1e-300):
        raise ValueError("quad vertex coincides with its incircle center")
    theta = np.arctan2(d[:, 0] * d[:, 2], d[:, 1] * d[:, 3])
    return np.tan(theta / 2), theta


def make_sembedding(graph: qg.QuadGraph, s, delta: float, q=None,
                    base_vertex: int | None = None, tol: float | None = None,
                    check_proper: bool | None = None) -> SEmbedding:
    """Validate positions (and optional lift) into an SEmbedding.

    Checks per quad: ccw convexity, tangential condition, incircle
    residual, center inside.  Checks per corner: the lift relation.
    The properness (no overlapping quads) test is on by default up to
    5000 quads; it is quadratic.
    """
    s = np.asarray(s, dtype=complex)
    if s.shape != (graph.n_vertices,):
        s2 = np.asarray(s, dtype=float)
        if s2.shape == (graph.n_vertices, 2):
            s = s2[:, 0] + 1j * s2[:, 1]
        else:
            raise ValueError("positions must be (n,) complex or (n, 2) real")
    t = _tol_for(s, tol)

    P = s[graph.quads]
    edges = np.roll(P, -1, axis=1) - P
    cross = np.imag(np.conj(edges) * np.roll(edges, -1, axis=1))
    if np.any(cross <= 0):
        bad = int(np.argmax(np.any(cross <= 0, axis=1)))
        raise ValueError(f"quad {bad} is not convex ccw in the plane")

    side = np.abs(edges)
    defect = np.abs((side[:, 0] + side[:, 2]) - (side[:, 1] + side[:, 3]))
    if len(defect):
        worst = int(np.argmax(defect))
        if defect[worst] > t:
            raise MonodromyError(worst, float(defect[worst]))

    centers, radii, residual, dist = _incircle(P)
    if np.any(dist <= 0):
        raise ValueError("incircle center escapes its quad")
    if np.any(residual > t):
        raise ValueError(
            f"incircle residual {residual.max():.3g} exceeds tolerance {t:.3g}"
        )

    if q is None:
        q = lift_q(graph, s, base_vertex, tol)
    else:
        q = np.asarray(q, dtype=float)
        clen = np.abs(s[graph.corners[:, 0]] - s[graph.corners[:, 1]])
        rel = q[graph.corners[:, 0]] - q[graph.corners[:, 1]] - clen
        if np.max(np.abs(rel), initial=0.0) > t:
            c = int(np.argmax(np.abs(rel)))
            raise ValueError(
                f"lift breaks the corner relation at corner {c} "
                f"by {abs(rel[c]):.3g}"
            )

    weights, thetas = _weights_from(P, centers)

    if check_proper is None:
        check_proper = graph.n_quads <= 5000
    if check_proper:
        _check_properness(P)

    clen = np.abs(s[graph.corners[:, 0]] - s[graph.corners[:, 1]])
    cdir = (s[graph.corners[:, 0]] - s[graph.corners[:, 1]]) / clen
    return SEmbedding(
        graph=graph, s=s, q=q, delta=float(delta),
        centers=centers, radii=radii, weights=weights, thetas=thetas,
        tangential_defect=defect, center_residual=residual,
        corner_len=clen, corner_dir=cdir,
    )


def _check_properness(P: np.ndarray) -> None:
    """Reject overlapping quads.

    Candidate pairs come from a uniform spatial hash at the largest quad
    diameter; each pair gets a batched proper-crossing test on all 4x4
    side combinations plus a containment test.  Pairs sharing two or
    more vertices (side neighbors) are exempt from the crossing test.
    """
    m = len(P)
    if m < 2:
        return
    lo = np.stack([P.real.min(1), P.imag.min(1)], axis=1)
    hi = np.stack([P.real.max(1), P.imag.max(1)], axis=1)
    cell = float(np.max(hi - lo)) + 1e-300
    key = np.floor(lo / cell).astype(np.int64)
    buckets: dict = {}
    for i, k in enumerate(map(tuple, key)):
        buckets.setdefault(k, []).append(i)
    pairs = set()
    for (kx, ky), ids in buckets.items():
        near = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                near.extend(buckets.get((kx + dx, ky + dy), ()))
        for i in ids:
            for j in near:
                if i < j:
                    pairs.add((i, j))
    if not pairs:
        return
    I, J = np.array(sorted(pairs)).T
    # bbox prefilter
    keep = ~np.any((lo[I] >= hi[J]) | (lo[J] >= hi[I]), axis=1)
    I, J = I[keep], J[keep]
    if not len(I):
        return

    shared = np.zeros(len(I), dtype=np.int64)
    for a in range(4):
        shared += np.any(np.abs(P[I, a, None] - P[J]) < 1e-12, axis=1)

    # strict straddle test, division-free: segments cross iff each one's
    # endpoints lie strictly on opposite sides of the other's line, with a
    # slack of 1e-12 of the local edge scale so sides meeting at a shared
    # vertex (possibly collinearly) never register
    Pn = np.roll(P, -1, axis=1)
    A, A2 = P[I][:, :, None], Pn[I][:, :, None]     # (p, 4, 1)
    B, B2 = P[J][:, None, :], Pn[J][:, None, :]     # (p, 1, 4)
    dA, dB = A2 - A, B2 - B
    d1 = np.imag(np.conj(dB) * (A - B))
    d2 = np.imag(np.conj(dB) * (A2 - B))
    d3 = np.imag(np.conj(dA) * (B - A))
    d4 = np.imag(np.conj(dA) * (B2 - A))
    la, lb = np.abs(dA), np.abs(dB)
    # both endpoints must clear the other side's line by 1e-12 of the local
    # scale; cross-product rounding noise at a shared endpoint sits around
    # 1e-16 of that scale, so touching corners never register
    tA = 1e-12 * lb * (la + lb)
    tB = 1e-12 * la * (la + lb)
    hit = (((d1 > tA) & (d2 < -tA)) | ((d1 < -tA) & (d2 > tA))) \
        & (((d3 > tB) & (d4 < -tB)) | ((d3 < -tB) & (d4 > tB)))
    bad = np.any(hit, axis=(1, 2)) & (shared < 2)
    if np.any(bad):
        w = int(np.argmax(bad))
        raise ValueError(f"quads {I[w]} and {J[w]} overlap: improper embedding")

    # containment of disjoint quads: centroid of one inside the other
    disjoint = shared == 0
    if np.any(disjoint):
        Ii, Jj = I[disjoint], J[disjoint]
        for U, V in ((Ii, Jj), (Jj, Ii)):
            cpt = P[V].mean(axis=1)
            dd = np.imag(np.conj(np.roll(P[U], -1, axis=1) - P[U])
                         * (cpt[:, None] - P[U]))
            inside = np.all(dd > 0, axis=1)
            if np.any(inside):
                w = int(np.argmax(inside))
                raise ValueError(
                    f"quad {V[w]} lies inside quad {U[w]}: improper embedding")


def flat_rect_embedding(width: int, height: int, delta: float = 1.0):
    """Rectangular lattice embedded with square cells of side delta."""
    g = qg.build_rect_lattice(width, height)
    s = qg.rect_positions(width, height, delta)
    return make_sembedding(g, s, delta)


# ---------------------------------------------------------------------------
# Lorentz isometries


@dataclass
class LorentzMap:
    """Affine isometry of R^{2,1}: x -> A x + t with A^T eta A = eta."""

    A: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)
        gram = self.A.T @ ETA @ self.A
        if np.max(np.abs(gram - ETA)) > 1e-12:
            raise ValueError("matrix does not preserve the Minkowski form")
        if abs(abs(np.linalg.det(self.A)) - 1.0) > 1e-12:
            raise ValueError("matrix determinant must be +-1")

    @property
    def orthochronous(self) -> bool:
        return self.A[2, 2] > 0

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.A.T + self.t

    def compose(self, other: "LorentzMap") -> "LorentzMap":
        """self after other."""
        return LorentzMap(self.A @ other.A, self.A @ other.t + self.t)

    def inverse(self) -> "LorentzMap":
        Ainv = ETA @ self.A.T @ ETA
        return LorentzMap(Ainv, -Ainv @ self.t)


def lorentz_boost(beta: float, direction: float = 0.0) -> LorentzMap:
    """Boost of velocity beta along the planar direction at angle
    ``direction``.  Flattens the tilted plane q = beta * (x-projection):
    points with q = beta x map to q' = 0."""
    if not -1.0 < beta < 1.0:
        raise ValueError("|beta| must be below 1")
    gamma = 1.0 / math.sqrt(1.0 - beta * beta)
    B = np.array([
        [gamma, 0.0, -gamma * beta],
        [0.0, 1.0, 0.0],
        [-gamma * beta, 0.0, gamma],
    ])
    if direction:
        R = lorentz_rotation(direction).A
        B = R @ B @ R.T
    return LorentzMap(B, np.zeros(3))


def lorentz_rotation(phi: float) -> LorentzMap:
    c, s = math.cos(phi), math.sin(phi)
    return LorentzMap(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]),
                      np.zeros(3))


def lorentz_translation(t) -> LorentzMap:
    return LorentzMap(np.eye(3), np.asarray(t, dtype=float))


def apply_isometry(emb: SEmbedding, lm: LorentzMap,
                   weight_tol: float = 1e-9) -> SEmbedding:
    """Move a lifted embedding by a Lorentz isometry and revalidate.

    The image must stay a proper s-embedding (orthochronous maps of
    moderate rapidity do).  Per-quad weights are recomputed from the new
    geometry and must agree with the originals within weight_tol.
    """
    if not lm.orthochronous:
        raise ValueError("map reverses time orientation: image is not an s-embedding")
    pts = lm.apply(emb.lifted())
    s2 = pts[:, 0] + 1j * pts[:, 1]
    out = make_sembedding(emb.graph, s2, emb.delta, q=pts[:, 2])
    drift = np.max(np.abs(out.weights - emb.weights), initial=0.0)
    if drift > weight_tol:
        raise ValueError(f"weights drifted by {drift:.3g} under the isometry")
    return out


# ---------------------------------------------------------------------------
# Triangulated embeddings of space-like surfaces


def _mesh_rect(x0, y0, x1, y1, delta):
    """Near-equilateral triangular lattice clipped to a rectangle.

    Keeps only complete lattice triangles, so the mesh boundary zigzags
    just inside the rectangle; every triangle is equilateral.
    """
    dy = delta * math.sqrt(3) / 2
    nrow = max(2, int(math.floor((y1 - y0) / dy)) + 1)
    rows = []
    pts = []
    for j in range(nrow):
        y = y0 + j * dy
        off = 0.5 * delta if j % 2 else 0.0
        n = int(math.floor((x1 - x0 - off) / delta)) + 1
        ids = []
        for i in range(n):
            ids.append(len(pts))
            pts.append(complex(x0 + off + i * delta, y))
        rows.append(ids)
    return np.asarray(pts), np.asarray(_strip_triangles(rows), dtype=np.int64), rows


def _strip_triangles(rows) -> list:
    """Zigzag triangles between consecutive offset rows of point ids."""
    tris = []
    for j in range(len(rows) - 1):
        a, b = rows[j], rows[j + 1]
        if j % 2 == 0:
            # plain row below, offset row above: apexes point up
            for i in range(min(len(a) - 1, len(b))):
                tris.append([a[i], a[i + 1], b[i]])
            for i in range(min(len(a) - 1, len(b) - 1)):
                tris.append([a[i + 1], b[i + 1], b[i]])
        else:
            for i in range(min(len(a) - 1, len(b) - 1)):
                tris.append([a[i], a[i + 1], b[i + 1]])
            for i in range(min(len(a), len(b) - 1)):
                tris.append([a[i], b[i + 1], b[i]])
    return tris


def _mesh_annulus_sector(r0, r1, phi0, phi1, delta, radial_slope=None):
    """Anisotropic mesh of an annulus sector adapted to the lifted surface.

    Rows are concentric circles.  Row spacing is chosen in the intrinsic
    surface metric (arc length sigma with dsigma = sqrt(1 - slope^2) dr):
    at least near-equilateral, but over steep regions stretched radially
    so that each triangle's circumcenter keeps the clearance k/R > slope
    from its inner circular edge.  Without that clearance the dual
    vertex, which lands one circumradius below the lifted plane and is
    dragged downhill by the un-flattening boost, would cross the primal
    chord and fold the planar quad.  The circular edges are exact; the
    two radial cuts zigzag.
    """
    h = delta / math.sqrt(r0 * r1)
    rs = np.linspace(r0, r1, 4001)
    if radial_slope is None:
        sl = np.zeros_like(rs)
    else:
        sl = np.asarray(radial_slope(rs), dtype=float)
        if np.any(sl >= 1.0):
            raise ValueError("surface is not space-like along the radius")
    f = np.sqrt(1.0 - sl * sl)
    sigma = np.concatenate([[0.0], np.cumsum((f[1:] + f[:-1]) / 2 * np.diff(rs))])
    total = sigma[-1]

    def step_at(sg):
        r = float(np.interp(sg, sigma, rs))
        kap = float(np.interp(r, rs, sl))
        arc = r * h
        equi = math.sqrt(3) / 2 * arc
        gamma = 1.0 / math.sqrt(1.0 - kap * kap)
        clear = 0.5 * arc * gamma * (1.0 + kap) * 1.15
        return max(equi, clear)

    steps = []
    sg = 0.0
    while sg < total:
        st = step_at(sg)
        steps.append(st)
        sg += st
    if len(steps) > 1:
        steps.pop()  # stretch the rest instead of shrinking the last step
    steps = np.asarray(steps) * (total / np.sum(steps))
    sigma_rows = np.concatenate([[0.0], np.cumsum(steps)])
    r_rows = np.interp(sigma_rows, sigma, rs)
    r_rows[-1] = r1

    rows = []
    pts = []
    for j in range(len(r_rows)):
        r = float(r_rows[j])
        off = 0.5 * h if j % 2 else 0.0
        n = int(math.floor((phi1 - phi0 - off) / h)) + 1
        ids = []
        for k in range(n):
            ids.append(len(pts))
            pts.append(r * np.exp(1j * (phi0 + off + k * h)))
        rows.append(ids)
    return np.asarray(pts), np.asarray(_strip_triangles(rows), dtype=np.int64), rows


def surface_mesh(spec: SurfaceSpec, delta: float):
    """Triangulate the spec's domain at planar scale delta.

    Returns (points, triangles, rows) where rows lists point ids per
    mesh row (bottom-to-top, or inner-to-outer circle).
    """
    if spec.domain[0] == "rect":
        _, x0, y0, x1, y1 = spec.domain
        return _mesh_rect(x0, y0, x1, y1, delta)
    if spec.domain[0] == "annulus_sector":
        _, r0, r1, p0, p1 = spec.domain
        # radial steepness read along the positive real axis; assumes a
        # rotationally symmetric surface (pass mesh= explicitly otherwise)
        slope = lambda rr: np.abs(spec.grad(rr.astype(complex)))
        return _mesh_annulus_sector(r0, r1, p0, p1, delta, radial_slope=slope)
    raise ValueError(f"cannot mesh domain kind {spec.domain[0]!r}")


def _lorentz_reflection(v: np.ndarray) -> np.ndarray:
    """Matrix of x -> x - 2 <x,v>/<v,v> v for the Minkowski form."""
    vv = v @ ETA @ v
    if abs(vv) < 1e-14:
        raise ValueError("cannot reflect in a null vector")
    return np.eye(3) - np.outer(v, ETA @ v) * (2.0 / vv)


def _flatten_triangle(A, B, C):
    """Lorentz boost that maps the (space-like) triangle plane to a
    horizontal plane.  Returns (boost matrix, its inverse)."""
    m = np.cross(B - A, C - A)
    norm2 = m[2] ** 2 - m[0] ** 2 - m[1] ** 2
    if norm2 <= 0:
        raise ValueError("triangle lift is not space-like")
    n = (ETA @ m) / math.sqrt(norm2)
    if n[2] < 0:
        n = -n
    e = np.array([0.0, 0.0, 1.0])
    if np.allclose(n, e, atol=1e-14):
        return np.eye(3), np.eye(3)
    R1 = _lorentz_reflection(n)
    R2 = _lorentz_reflection(n + e)
    return R2 @ R1, R1 @ R2


def _circumcenter2(a: complex, b: complex, c: complex):
    d = 2.0 * np.imag(np.conj(b - a) * (c - a))
    if abs(d) < 1e-300:
        raise ValueError("collinear triangle")
    ux = (abs(b - a) ** 2 * (c - a).imag - abs(c - a) ** 2 * (b - a).imag) / d
    uy = (abs(c - a) ** 2 * (b - a).real - abs(b - a) ** 2 * (c - a).real) / d
    cc = a + complex(ux, uy)
    return cc, abs(cc - a)


def build_maximal_triangulation(spec: SurfaceSpec, delta: float,
                                mesh=None, tol: float | None = None):
    """s-embedding over the surface q = theta, built from a triangulation.

    Primal vertices are the mesh nodes with Q = theta(S).  Each triangle
    is lifted, its plane flattened by a Lorentz boost, and the dual
    vertex placed at the Euclidean circumcenter of the flattened
    triangle, one circumradius below the plane; mapping back makes all
    four corner vectors of every incident quad null, hence the quads
    tangential.

    ``mesh`` overrides the built-in mesher with (points, triangles).
    """
    if mesh is None:
        pts, tris, _ = surface_mesh(spec, delta)
    else:
        pts, tris = mesh
        pts = np.asarray(pts, dtype=complex)
    graph, ppos, kept, tri_ccw = qg.build_from_triangulation(tris, pts)

    th = np.asarray(spec.theta(pts), dtype=float)
    lift_all = np.column_stack([pts.real, pts.imag, th])
    n_primal = graph.n_primal
    s = np.empty(graph.n_vertices, dtype=complex)
    q = np.empty(graph.n_vertices)
    s[:n_primal] = ppos
    q[:n_primal] = th[kept]

    warn_out = 0
    for t in range(len(tri_ccw)):
        A, B, C = lift_all[tri_ccw[t]]
        Bmat, Binv = _flatten_triangle(A, B, C)
        fa, fb, fc = A @ Bmat.T, B @ Bmat.T, C @ Bmat.T
        h = fa[2]
        if max(abs(fb[2] - h), abs(fc[2] - h)) > 1e-10 * max(1.0, abs(h)):
            raise ValueError("flattening failed to level the triangle")
        cc, R = _circumcenter2(complex(fa[0], fa[1]), complex(fb[0], fb[1]),
                               complex(fc[0], fc[1]))
        # circumcenter should stay inside (acute mesh); warn when it drifts
        ta, tb, tc = complex(fa[0], fa[1]), complex(fb[0], fb[1]), complex(fc[0], fc[1])
        area = np.imag(np.conj(tb - ta) * (tc - ta))
        bary = [np.imag(np.conj(tc - tb) * (cc - tb)) / area,
                np.imag(np.conj(ta - tc) * (cc - tc)) / area,
                np.imag(np.conj(tb - ta) * (cc - ta)) / area]
        if min(bary) < -0.05:
            warn_out += 1
        D = Binv @ np.array([cc.real, cc.imag, h - R])
        s[n_primal + t] = complex(D[0], D[1])
        q[n_primal + t] = D[2]
    if warn_out:
        warnings.warn(
            f"{warn_out} triangles have circumcenters outside: "
            "mesh is not acute, embedding may be improper", stacklevel=2)

    return make_sembedding(graph, s, delta, q=q, tol=tol)


# ---------------------------------------------------------------------------
# Validators


@dataclass
class UnifReport:
    passed: bool
    c_length: float
    c_angle: float
    worst_corner: int
    worst_quad: int
    violations: list


def check_unif(emb: SEmbedding, C: float) -> UnifReport:
    """Uniform non-degeneracy at scale delta.

    Checks corner lengths within [delta/C, C*delta] and every quad angle
    at least 1/C radians; reports the constants actually achieved.
    """
    d = emb.delta
    viol = []
    if emb.graph.n_corners == 0:
        return UnifReport(True, 1.0, 1.0, -1, -1, [])
    ratio = np.maximum(emb.corner_len / d, d / emb.corner_len)
    worst_c = int(np.argmax(ratio))
    for c in np.where(ratio > C)[0]:
        viol.append(("corner_length", int(c), float(emb.corner_len[c])))

    P = emb.quad_positions()
    into = np.roll(P, 1, axis=1) - P   # toward previous vertex
    out = np.roll(P, -1, axis=1) - P   # toward next vertex
    # interior angle of a ccw polygon: ccw turn from the outgoing edge
    # to the incoming one
    ang = np.arctan2(np.imag(np.conj(out) * into), np.real(np.conj(out) * into))
    ang = np.where(ang < 0, ang + 2 * np.pi, ang)
    amin = ang.min(axis=1)
    worst_q = int(np.argmin(amin))
    for z in np.where(amin < 1.0 / C)[0]:
        viol.append(("quad_angle", int(z), float(amin[z])))
    return UnifReport(
        passed=not viol,
        c_length=float(ratio[worst_c]),
        c_angle=float(1.0 / amin[worst_q]),
        worst_corner=worst_c,
        worst_quad=worst_q,
        violations=viol,
    )


@dataclass
class ApproxReport:
    passed: bool
    defect_opt: float
    shift: float
    defect_raw_primal: float
    defect_raw_dual: float
    argmax_vertex: int


def check_approx(emb: SEmbedding, spec: SurfaceSpec, C: float) -> ApproxReport:
    """How closely Q follows theta(S), modulo one additive constant.

    The constant is chosen to minimize the sup-defect; raw (unshifted)
    defects are reported per color as well.
    """
    if emb.graph.n_vertices == 0:
        return ApproxReport(True, 0.0, 0.0, 0.0, 0.0, -1)
    defect = emb.q - np.asarray(spec.theta(emb.s), dtype=float)
    shift = 0.5 * (defect.max() + defect.min())
    opt = np.abs(defect - shift)
    arg = int(np.argmax(opt))
    npri = emb.graph.n_primal
    return ApproxReport(
        passed=bool(opt.max() <= C * emb.delta),
        defect_opt=float(opt.max()),
        shift=float(shift),
        defect_raw_primal=float(np.max(np.abs(defect[:npri]), initial=0.0)),
        defect_raw_dual=float(np.max(np.abs(defect[npri:]), initial=0.0)),
        argmax_vertex=arg,
    )


# ---------------------------------------------------------------------------
# Files and rendering


def write_embedding(emb: SEmbedding, boundary: qg.DobrushinBoundary | None = None) -> str:
    out = io.StringIO()
    out.write(qg.write_graph(emb.graph, boundary))
    out.write(f"DELTA {float(emb.delta)!r}\n")
    for v in range(emb.graph.n_vertices):
        out.write(f"POS {v} {float(emb.s[v].real)!r} {float(emb.s[v].imag)!r}\n")
        out.write(f"LIFT {v} {float(emb.q[v])!r}\n")
    return out.getvalue()


def read_embedding(text: str):
    glines = []
    pos = {}
    lift = {}
    delta = None
    for ln in text.splitlines():
        parts = ln.split()
        if not parts or ln.startswith("#"):
            continue
        if parts[0] == "POS":
            pos[int(parts[1])] = complex(float(parts[2]), float(parts[3]))
        elif parts[0] == "LIFT":
            lift[int(parts[1])] = float(parts[2])
        elif parts[0] == "DELTA":
            delta = float(parts[1])
        else:
            glines.append(ln)
    graph, bd = qg.read_graph("\n".join(glines))
    if delta is None or len(pos) != graph.n_vertices:
        raise ValueError("embedding file is missing delta or positions")
    s = np.array([pos[v] for v in range(graph.n_vertices)])
    q = np.array([lift[v] for v in range(graph.n_vertices)]) if lift else None
    emb = make_sembedding(graph, s, delta, q=q)
    return emb, bd


def render_svg(emb: SEmbedding, boundary: qg.DobrushinBoundary | None = None,
               width: int = 640, show_circles: bool = True,
               interface=None) -> str:
    """Plain SVG picture: quads, incircles, Dobrushin arcs, marked corners.

    ``interface``, if given, is a sequence of complex points drawn as a
    polyline on top of everything else.
    """
    s = emb.s
    x0, x1 = s.real.min(), s.real.max()
    y0, y1 = s.imag.min(), s.imag.max()
    span = max(x1 - x0, y1 - y0, 1e-9)
    pad = 0.05 * span
    scale = width / (span + 2 * pad)
    height = int((y1 - y0 + 2 * pad) * scale) + 1

    def xy(z):
        return ((z.real - x0 + pad) * scale,
                (y1 - z.imag + pad) * scale)  # flip y for svg

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for z in range(emb.n_quads):
        pts = " ".join("%.2f,%.2f" % xy(p) for p in emb.quad_positions(z))
        parts.append(
            f'<polygon points="{pts}" fill="#eef3fa" stroke="#4a6da7" stroke-width="1"/>')
    if show_circles:
        for z in range(emb.n_quads):
            cx, cy = xy(emb.centers[z])
            parts.append(
                f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{emb.radii[z] * scale:.2f}" '
                'fill="none" stroke="#b0b8c4" stroke-width="0.7"/>')
    if boundary is not None:
        for arc, color in ((boundary.primal_arc, "#c0392b"),
                           (boundary.dual_arc, "#2471a3")):
            pts = " ".join("%.2f,%.2f" % xy(s[v]) for v in arc)
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2.5"/>')
        for c, color in ((boundary.a, "#c0392b"), (boundary.b, "#2471a3")):
            p, d = emb.graph.corners[c]
            cx, cy = xy(0.5 * (s[p] + s[d]))
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{color}"/>')
    if interface is not None and len(interface):
        pts = " ".join("%.2f,%.2f" % xy(complex(p)) for p in interface)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="#1e8449" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts)
