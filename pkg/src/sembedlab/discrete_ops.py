"""Discrete differential calculus on s-embeddings.

Vertex fields (one complex value per primal or dual vertex) admit a
quad-based antiholomorphic derivative dbar_s and its conjugate d_s;
quad fields admit a fan derivative d_omega at interior vertices.  The
composition gives a real symmetric Laplacian whose kernel contains the
constants, both coordinates of S, and the lift Q, and whose stencil is
invariant under Lorentz isometries of the lifted embedding.  The module
also provides s-holomorphic reconstruction on a quad, the discrete
integral identity relating a quad field to its integrated square, and
regularity diagnostics for corner fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sembedding import SEmbedding

__all__ = [
    "VertexField",
    "QuadField",
    "CornerField",
    "SLaplacian",
    "RegularityReport",
    "quad_normalizations",
    "dbar_s",
    "d_s",
    "d_omega",
    "dbar_omega",
    "dbar_s_matrix",
    "d_omega_matrix",
    "assemble_s_laplacian",
    "reconstruct_f_on_quad",
    "check_discrete_integral",
    "check_s_positivity",
    "measure_regularity",
    "coordinate_text",
]

# Vertex and quad fields are plain complex arrays indexed by vertex id
# and quad id.  Corner fields carry their line constraints, so they get
# a real class below.
VertexField = np.ndarray
QuadField = np.ndarray

# sign of each quad slot (v0p, v0d, v1p, v1d) in the quad derivative:
# primal corners enter with +, dual corners with -
_SLOT_SIGN = np.array([1.0, -1.0, 1.0, -1.0])


def quad_normalizations(emb: SEmbedding) -> np.ndarray:
    """Per-quad constant mu_z normalizing the quad derivative.

    Pinned by requiring dbar_s(conj(S)) = 1 on every quad.  The defining
    sum uses positions relative to the incircle center, which keeps the
    constant unchanged under translations of the embedding.
    """
    d = emb.quad_positions() - emb.centers[:, None]
    den = (np.conj(d) / d) @ _SLOT_SIGN
    bad = np.abs(den) < 1e-10
    if np.any(bad):
        z = int(np.argmax(bad))
        raise ValueError(f"quad {z}: degenerate derivative normalization")
    return 4.0 / den


def dbar_s_matrix(emb: SEmbedding) -> sp.csr_matrix:
    """Sparse matrix of dbar_s: quads x vertices, complex entries."""
    g = emb.graph
    mu = quad_normalizations(emb)
    d = emb.quad_positions() - emb.centers[:, None]
    coef = (mu[:, None] / 4.0) * _SLOT_SIGN / d
    rows = np.repeat(np.arange(g.n_quads), 4)
    cols = g.quads.ravel()
    m = sp.coo_matrix(
        (coef.ravel(), (rows, cols)), shape=(g.n_quads, g.n_vertices)
    )
    return m.tocsr()


def dbar_s(emb: SEmbedding, field: VertexField) -> QuadField:
    """Antiholomorphic quad derivative of a vertex field.

    Annihilates constants, S, and Q; sends conj(S) to 1.
    """
    field = np.asarray(field, dtype=complex)
    if field.shape != (emb.graph.n_vertices,):
        raise ValueError("field must hold one value per vertex")
    return dbar_s_matrix(emb) @ field


def d_s(emb: SEmbedding, field: VertexField) -> QuadField:
    """Holomorphic quad derivative: the conjugate of dbar_s of the
    conjugate field."""
    field = np.asarray(field, dtype=complex)
    return np.conj(dbar_s(emb, np.conj(field)))


def _fan_pairs(emb: SEmbedding, vertex: int):
    g = emb.graph
    if not g.interior[vertex]:
        raise ValueError(f"vertex {vertex} is not interior: incomplete fan")
    return g.fan_quads[vertex], g.fan_corners[vertex]


def d_omega(emb: SEmbedding, field: QuadField, vertex: int) -> complex:
    """Fan derivative of a quad field at one interior vertex.

    Sums K(z_k)(n(c_{k+1}) - n(c_k))/(2i) over the ccw fan of incident
    quads, where c_k, c_{k+1} are the two corners of z_k at the vertex
    and n is the unit corner direction (primal minus dual endpoint).
    Evaluated corner by corner so that constant fields give exactly 0.
    """
    field = np.asarray(field, dtype=complex)
    zs, cs = _fan_pairs(emb, vertex)
    k = field[zs]
    # abelian regrouping of the telescoping fan sum: corner c_k is left
    # by quad z_{k-1} and entered by quad z_k
    n = emb.corner_dir[cs]
    total = np.sum(n * (np.roll(k, 1) - k))
    return complex(total / 2j)


def dbar_omega(emb: SEmbedding, field: QuadField, vertex: int) -> complex:
    """Conjugate variant of the fan derivative."""
    field = np.asarray(field, dtype=complex)
    return complex(np.conj(d_omega(emb, np.conj(field), vertex)))


def d_omega_matrix(emb: SEmbedding, vertices=None) -> sp.csr_matrix:
    """Sparse matrix of d_omega: vertices x quads, complex entries.

    Rows are filled only for the requested interior vertices (all of
    them by default); other rows stay empty.
    """
    g = emb.graph
    if vertices is None:
        vertices = np.flatnonzero(g.interior)
    rows, cols, vals = [], [], []
    for v in vertices:
        v = int(v)
        zs, cs = _fan_pairs(emb, v)
        n = emb.corner_dir[cs]
        coef = (np.roll(n, -1) - n) / 2j
        rows.extend([v] * len(zs))
        cols.extend(int(z) for z in zs)
        vals.extend(coef)
    m = sp.coo_matrix(
        (np.asarray(vals, dtype=complex), (rows, cols)),
        shape=(g.n_vertices, g.n_quads),
    )
    return m.tocsr()


@dataclass
class SLaplacian:
    """Discrete Laplacian of an s-embedding, rows at interior vertices.

    ``matrix`` is real csr over all vertices; rows outside ``interior``
    are zero.  ``asymmetry`` is the largest mismatch with the transpose
    over the interior block, ``kernel_residual`` the largest row sum
    against the four exact kernel fields (1, both coordinates of S, Q).
    """

    matrix: sp.csr_matrix
    interior: np.ndarray
    asymmetry: float
    kernel_residual: float

    def stencil(self, vertex: int) -> list:
        """(neighbor, coefficient) pairs of one row."""
        row = self.matrix.getrow(int(vertex)).tocoo()
        return list(zip(row.col.tolist(), row.data.tolist()))

    def coordinate_text(self) -> str:
        return coordinate_text(self.matrix)


def assemble_s_laplacian(emb: SEmbedding, interior=None, tol: float = 1e-8) -> SLaplacian:
    """Assemble the Laplacian -4 * (fan derivative o quad derivative).

    The vertex-level factor is the conjugated fan derivative; pairing it
    with dbar_s (equivalently, pairing the plain fan derivative with
    d_s) is the ordering that produces a real matrix.  Entries whose
    imaginary part exceeds ``tol`` relative to the largest coefficient
    mean the embedding data is inconsistent and raise.
    """
    g = emb.graph
    if interior is None:
        interior = np.flatnonzero(g.interior)
    else:
        interior = np.asarray(sorted(int(v) for v in interior), dtype=np.int64)
        for v in interior:
            if not g.interior[v]:
                raise ValueError(f"vertex {v} is not interior: incomplete fan")
    lap = -4.0 * (d_omega_matrix(emb, interior).conj() @ dbar_s_matrix(emb))
    lap = lap.tocsr()
    scale = float(np.abs(lap.data.real).max()) if lap.nnz else 1.0
    worst = float(np.abs(lap.data.imag).max()) if lap.nnz else 0.0
    if worst > tol * max(scale, 1.0):
        raise ValueError(
            f"Laplacian has a non-real entry ({worst:.3e} imaginary): "
            "embedding data is inconsistent"
        )
    mat = sp.csr_matrix((lap.data.real, lap.indices, lap.indptr), shape=lap.shape)

    block = mat[interior][:, interior]
    asym = float(np.abs((block - block.T).data).max()) if (block - block.T).nnz else 0.0

    kernel = np.column_stack(
        [np.ones(g.n_vertices), emb.s.real, emb.s.imag, emb.q]
    )
    kres = float(np.abs((mat @ kernel)[interior]).max()) if len(interior) else 0.0
    return SLaplacian(matrix=mat, interior=interior, asymmetry=asym, kernel_residual=kres)


def reconstruct_f_on_quad(values, n) -> tuple:
    """Least-squares quad value from four line-constrained corner values.

    Each corner value is expected on the line spanned by n(c)^{-1/2}
    (principal branch).  Returns the complex quad value F minimizing the
    summed squared projection mismatch, together with the worst-corner
    residual |Proj F - value|.  Raises when the four lines coincide.
    """
    values = np.asarray(values, dtype=complex)
    n = np.asarray(n, dtype=complex)
    if values.shape != (4,) or n.shape != (4,):
        raise ValueError("expected four corner values and four orientations")
    u = 1.0 / np.sqrt(n)
    t = np.real(values * np.conj(u))
    a = np.column_stack([u.real, u.imag])
    sol, _, rank, sv = np.linalg.lstsq(a, t, rcond=None)
    if rank < 2 or sv[1] <= 1e-12 * sv[0]:
        raise ValueError("projection lines coincide: quad value is not determined")
    f = complex(sol[0], sol[1])
    proj = np.real(f * np.conj(u)) * u
    residual = float(np.abs(proj - values).max())
    return f, residual


def check_discrete_integral(emb: SEmbedding, f: QuadField, h: VertexField) -> float:
    """Worst defect of the integral identity over both quad diagonals.

    Per quad, the difference of h across a diagonal must match
    Im((F^2 dS + i|F|^2 dQ)/2) for the same diagonal.
    """
    g = emb.graph
    if g.n_quads == 0:
        return 0.0
    f = np.asarray(f, dtype=complex)
    h = np.asarray(h)
    sv = emb.s[g.quads]
    qv = emb.q[g.quads]
    hv = h[g.quads]
    f2 = f * f
    fa2 = np.abs(f) ** 2
    worst = 0.0
    for a, b in ((0, 2), (1, 3)):  # primal diagonal, then dual
        ds = sv[:, b] - sv[:, a]
        dq = qv[:, b] - qv[:, a]
        dh = hv[:, b] - hv[:, a]
        defect = np.abs(dh - np.imag(0.5 * (f2 * ds + 1j * fa2 * dq)))
        worst = max(worst, float(defect.max()))
    return worst


def check_s_positivity(lap: SLaplacian, h: VertexField) -> float:
    """Smallest value of the Laplacian of h over the interior vertices."""
    h = np.asarray(h, dtype=float)
    if len(lap.interior) == 0:
        return 0.0
    return float((lap.matrix @ h)[lap.interior].min())


@dataclass
class CornerField:
    """Complex corner values constrained to the lines n(c)^{-1/2} R."""

    values: np.ndarray
    lines: np.ndarray

    @classmethod
    def on_embedding(cls, emb: SEmbedding, values) -> "CornerField":
        values = np.asarray(values, dtype=complex)
        if values.shape != (emb.graph.n_corners,):
            raise ValueError("expected one value per corner")
        return cls(values=values, lines=emb.corner_dir.copy())

    def line_residuals(self) -> np.ndarray:
        u = 1.0 / np.sqrt(self.lines)
        proj = np.real(self.values * np.conj(u)) * u
        return np.abs(self.values - proj)

    def max_line_residual(self) -> float:
        if len(self.values) == 0:
            return 0.0
        return float(self.line_residuals().max())


@dataclass
class RegularityReport:
    """Scale-weighted size and smoothness of a corner field near a point.

    ``c`` is the largest sup |F| * sqrt(r) over the probed radii,
    ``beta`` an empirical Holder exponent fitted on pair differences
    inside the largest ball.  Diagnostic only; carries no pass/fail.
    """

    c: float
    beta: float
    per_radius: list


def measure_regularity(f: CornerField, emb: SEmbedding, center: complex, radii) -> RegularityReport:
    g = emb.graph
    values = np.asarray(f.values, dtype=complex)
    pos = 0.5 * (emb.s[g.corners[:, 0]] + emb.s[g.corners[:, 1]])
    dist = np.abs(pos - center)
    per_radius = []
    for r in radii:
        r = float(r)
        mask = dist <= r
        c_r = float(np.abs(values[mask]).max() * np.sqrt(r)) if np.any(mask) else 0.0
        per_radius.append((r, c_r))
    c = max((c_r for _, c_r in per_radius), default=0.0)

    beta = 0.0
    rmax = max((float(r) for r in radii), default=0.0)
    idx = np.flatnonzero(dist <= rmax)
    if len(idx) >= 2:
        rng = np.random.default_rng(0)
        if len(idx) > 64:
            idx = rng.choice(idx, size=64, replace=False)
        pa, pb = np.triu_indices(len(idx), k=1)
        dz = np.abs(pos[idx][pa] - pos[idx][pb])
        df = np.abs(values[idx][pa] - values[idx][pb])
        keep = (dz > 0) & (df > 0)
        if np.count_nonzero(keep) >= 2:
            slope = np.polyfit(np.log(dz[keep]), np.log(df[keep]), 1)[0]
            beta = float(slope)
    return RegularityReport(c=c, beta=beta, per_radius=per_radius)


def coordinate_text(matrix) -> str:
    """Sparse matrix as one "row col value" line per stored entry."""
    coo = sp.coo_matrix(matrix)
    lines = [
        f"{int(r)} {int(c)} {float(v)!r}"
        for r, c, v in zip(coo.row, coo.col, coo.data)
    ]
    return "\n".join(lines) + ("\n" if lines else "")
