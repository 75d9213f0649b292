"""Critical FK-Ising on an s-embedding with two marked boundary corners.

The random-cluster measure lives on the quads: each quad carries one
primal edge (open or closed) and its dual partner in the opposite
state.  A Dobrushin split forces the quads along the wired arc open and
those along the free arc closed; the remaining free edges are weighted
by 2^#clusters times a per-edge odds ratio derived from the embedding
weights.  On top of the measure sit the interface from corner a to
corner b, its winding, the fermionic corner observable, and the
square-integrated observable H.

Exact enumeration serves as the oracle for small domains; a single-bond
heat-bath chain with a counter-based RNG covers the rest.  Same seed,
same stream: every update is a pure function of (seed, chain, step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _mcmc_kernels as _kern
from .discrete_ops import CornerField, reconstruct_f_on_quad
from .quadgraph import DobrushinBoundary, QuadGraph
from .sembedding import MonodromyError, SEmbedding

__all__ = [
    "FKDomain",
    "FKConfig",
    "InterfaceCurve",
    "ObservableEstimate",
    "RATIO_CONVENTIONS",
    "make_domain",
    "make_config",
    "edge_odds",
    "weight",
    "enumerate_exact",
    "mcmc_sample",
    "mcmc_state_counts",
    "trace_interface",
    "interface_membership",
    "winding",
    "estimate_f",
    "exact_f",
    "observable_quad_field",
    "build_h",
]

RATIO_CONVENTIONS = ("as_printed", "standard")

# Exit slot of a quad given the entry slot of the medial walk.
_EXIT_OPEN = (1, 0, 3, 2)
_EXIT_CLOSED = (3, 2, 1, 0)

# Orientation of the winding phase.  The sign is pinned by the
# s-holomorphicity of the exact observable: with the opposite sign the
# corner values leave their lines and the per-quad residuals blow up.
_PHASE_SIGN = -1.0

# The integral-form quad value is the line-reconstruction rotated by
# this unimodular constant; it is the representative whose square
# matches 4i times the s-derivative of H.
_TWIST = complex(math.cos(0.25 * math.pi), math.sin(0.25 * math.pi))

_ENUM_CAP = 22


# ---------------------------------------------------------------------------
# Domain and configuration types


@dataclass
class FKDomain:
    """A quad-graph with Dobrushin forcing, ready to sample.

    base_open is the all-free-edges-closed template configuration;
    the remaining fields are flat lookup tables for the kernels.
    """

    graph: QuadGraph
    boundary: DobrushinBoundary
    base_open: np.ndarray
    free_ends: np.ndarray
    adj_indptr: np.ndarray
    adj_nbr: np.ndarray
    adj_quad: np.ndarray
    corner_slot: np.ndarray

    @property
    def n_free(self) -> int:
        return len(self.boundary.free)


@dataclass
class FKConfig:
    """One bond configuration with its cluster labellings.

    open holds the primal edge state per quad; the dual edge of a quad
    is open exactly when the primal one is closed.  Labels are connected
    components, singletons included.
    """

    open: np.ndarray
    primal_label: np.ndarray
    dual_label: np.ndarray
    n_primal_clusters: int
    n_dual_clusters: int


@dataclass
class InterfaceCurve:
    """Corner path of the interface with its turning angles.

    corners runs from a to b.  The curve crosses every corner segment
    perpendicularly; turns[k] is the signed ccw angle between the
    crossing tangents at corners[k] and corners[k + 1], one entry per
    step.
    """

    corners: np.ndarray
    turns: np.ndarray

    @property
    def a(self) -> int:
        return int(self.corners[0])

    @property
    def b(self) -> int:
        return int(self.corners[-1])


@dataclass
class ObservableEstimate:
    """Monte Carlo estimate of the corner observable.

    mean and stderr are aligned with corners; samples is the total
    number of measured configurations (shared by every corner).
    """

    corners: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    samples: int

    def lookup(self, corner: int) -> tuple[complex, float]:
        idx = np.flatnonzero(self.corners == corner)
        if idx.size == 0:
            raise KeyError(f"corner {corner} was not estimated")
        k = int(idx[0])
        return complex(self.mean[k]), float(self.stderr[k])


def make_domain(graph: QuadGraph, boundary: DobrushinBoundary) -> FKDomain:
    """Precompute the sampling tables for a Dobrushin-marked graph."""
    base = np.zeros(graph.n_quads, dtype=np.uint8)
    base[boundary.forced_open] = 1

    p0 = graph.quads[:, 0]
    p1 = graph.quads[:, 2]
    free = boundary.free
    free_ends = np.column_stack([p0[free], p1[free]]).astype(np.int64)

    # CSR adjacency of the primal graph with the quad id on each arc.
    rows = np.concatenate([p0, p1])
    cols = np.concatenate([p1, p0])
    qids = np.concatenate([np.arange(graph.n_quads)] * 2)
    order = np.argsort(rows, kind="stable")
    rows, cols, qids = rows[order], cols[order], qids[order]
    indptr = np.zeros(graph.n_primal + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)

    slot = np.full((graph.n_corners, 2), -1, dtype=np.int64)
    for z in range(graph.n_quads):
        for s in range(4):
            c = graph.quad_corners[z, s]
            if graph.corner_quads[c, 0] == z:
                slot[c, 0] = s
            else:
                slot[c, 1] = s

    return FKDomain(graph=graph, boundary=boundary, base_open=base,
                    free_ends=free_ends, adj_indptr=indptr,
                    adj_nbr=cols.astype(np.int64),
                    adj_quad=qids.astype(np.int64), corner_slot=slot)


def _components(n: int, pairs) -> tuple[np.ndarray, int]:
    """Union-find labels over n vertices, singletons included."""
    parent = np.arange(n, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for u, v in pairs:
        ru, rv = find(int(u)), find(int(v))
        if ru != rv:
            parent[rv] = ru
    labels = np.array([find(int(v)) for v in range(n)], dtype=np.int64)
    return labels, len(np.unique(labels)) if n else 0


def make_config(domain: FKDomain, open_flags) -> FKConfig:
    """Label a bond configuration, enforcing the boundary forcing."""
    g = domain.graph
    open_ = np.array(open_flags, dtype=bool)
    if open_.shape != (g.n_quads,):
        raise ValueError("open flags must cover every quad")
    bd = domain.boundary
    if not open_[bd.forced_open].all() or open_[bd.forced_closed].any():
        raise ValueError("configuration violates the boundary forcing")

    p0, p1 = g.quads[:, 0], g.quads[:, 2]
    d0, d1 = g.quads[:, 1] - g.n_primal, g.quads[:, 3] - g.n_primal
    plab, pn = _components(g.n_primal, zip(p0[open_], p1[open_]))
    dlab, dn = _components(g.n_dual, zip(d0[~open_], d1[~open_]))
    return FKConfig(open=open_, primal_label=plab, dual_label=dlab,
                    n_primal_clusters=pn, n_dual_clusters=dn)


# ---------------------------------------------------------------------------
# Weights and exact enumeration


def edge_odds(emb: SEmbedding, edge_ratio: str = "as_printed") -> np.ndarray:
    """Open/closed odds per quad under the chosen ratio convention."""
    if edge_ratio not in RATIO_CONVENTIONS:
        raise ValueError(f"unknown edge ratio convention {edge_ratio!r}")
    x = emb.weights
    return (1.0 - x) / x if edge_ratio == "as_printed" else x / (1.0 - x)


def weight(config: FKConfig, emb: SEmbedding,
           edge_ratio: str = "as_printed") -> float:
    """Unnormalized measure: 2^#clusters times the product of odds of
    the open edges."""
    odds = edge_odds(emb, edge_ratio)
    return float(2.0 ** config.n_primal_clusters * np.prod(odds[config.open]))


def enumerate_exact(domain: FKDomain, emb: SEmbedding,
                    edge_ratio: str = "as_printed"):
    """All configurations with their probabilities.

    Feasible up to 22 free edges; raises beyond that.
    """
    free = domain.boundary.free
    nf = len(free)
    if nf > _ENUM_CAP:
        raise ValueError(
            f"{nf} free edges exceed the exact enumeration cap {_ENUM_CAP}")
    out = []
    weights = np.empty(1 << nf)
    for mask in range(1 << nf):
        open_ = domain.base_open.astype(bool)
        for i in range(nf):
            if mask >> i & 1:
                open_[free[i]] = True
        cfg = make_config(domain, open_)
        out.append(cfg)
        weights[mask] = weight(cfg, emb, edge_ratio)
    probs = weights / weights.sum()
    return [(cfg, float(p)) for cfg, p in zip(out, probs)]


# ---------------------------------------------------------------------------
# Single-bond heat-bath chain


def _chain_state(domain: FKDomain, init) -> np.ndarray:
    if init is None:
        return domain.base_open.copy()
    state = np.asarray(init, dtype=np.uint8).copy()
    bd = domain.boundary
    if state.shape != domain.base_open.shape:
        raise ValueError("initial state must cover every quad")
    if not state[bd.forced_open].all() or state[bd.forced_closed].any():
        raise ValueError("initial state violates the boundary forcing")
    return state


def _scratch(domain: FKDomain):
    n = domain.graph.n_primal
    return np.zeros(n, dtype=np.int64), np.empty(n, dtype=np.int64)


def mcmc_sample(domain: FKDomain, emb: SEmbedding, steps: int, seed: int,
                chain: int = 0, init=None, edge_ratio: str = "as_printed"):
    """Yield the configuration before the first update and after each
    of the `steps` single-bond updates.

    The stream is a pure function of (seed, chain): replaying the same
    key reproduces it bond for bond.
    """
    if domain.n_free == 0:
        raise ValueError("domain has no free edge to sample")
    state = _chain_state(domain, init)
    yield make_config(domain, state != 0)
    fratio = edge_odds(emb, edge_ratio)[domain.boundary.free]
    visited, queue = _scratch(domain)
    stamp = 0
    for k in range(steps):
        stamp = _kern.run_steps(
            state, seed, chain, k, 1, domain.boundary.free,
            domain.free_ends[:, 0], domain.free_ends[:, 1], fratio,
            domain.adj_indptr, domain.adj_nbr, domain.adj_quad, visited,
            queue, stamp)
        yield make_config(domain, state != 0)


def mcmc_state_counts(domain: FKDomain, emb: SEmbedding, sweeps: int,
                      seed: int, chain: int = 0, init=None,
                      measure_every: int = 1,
                      edge_ratio: str = "as_printed") -> np.ndarray:
    """Visit counts of the free-edge bitmask along a heat-bath run.

    One sweep is one heat-bath step per free edge; the state is recorded
    every measure_every sweeps (stride > 1 decorrelates the counts so
    multinomial error bars apply).  The counts line up with the
    enumeration order of enumerate_exact.
    """
    nf = domain.n_free
    if nf == 0 or nf > _ENUM_CAP:
        raise ValueError("state counting needs between 1 and 22 free edges")
    if measure_every < 1:
        raise ValueError("measure_every must be >= 1")
    state = _chain_state(domain, init)
    fratio = edge_odds(emb, edge_ratio)[domain.boundary.free]
    visited, queue = _scratch(domain)
    counts = np.zeros(1 << nf, dtype=np.int64)
    _kern.sweep_masks(state, seed, chain, 0, sweeps, measure_every,
                      domain.boundary.free,
                      domain.free_ends[:, 0], domain.free_ends[:, 1],
                      fratio, domain.adj_indptr, domain.adj_nbr,
                      domain.adj_quad, visited, queue, 0, counts)
    return counts


# ---------------------------------------------------------------------------
# Interface and winding


def trace_interface(config: FKConfig, domain: FKDomain,
                    emb: SEmbedding) -> InterfaceCurve:
    """Deterministic walk of the interface from corner a to corner b.

    At every quad the walk reflects so that it never crosses an open
    primal edge nor an open dual edge.
    """
    g = domain.graph
    bd = domain.boundary
    open_ = config.open
    corners = [bd.a]
    z = int(g.corner_quads[bd.a, 0])
    s = int(domain.corner_slot[bd.a, 0])
    if z < 0:
        raise ValueError("marked corner a has no incident quad")
    limit = 4 * g.n_quads + 4
    while True:
        s2 = _EXIT_OPEN[s] if open_[z] else _EXIT_CLOSED[s]
        c = int(g.quad_corners[z, s2])
        corners.append(c)
        if c == bd.b:
            break
        if len(corners) > limit:
            raise ValueError("interface walk failed to terminate")
        if g.corner_quads[c, 0] == z:
            z2 = int(g.corner_quads[c, 1])
            s = int(domain.corner_slot[c, 1])
        else:
            z2 = int(g.corner_quads[c, 0])
            s = int(domain.corner_slot[c, 0])
        if z2 < 0:
            raise ValueError(
                f"interface left the domain at corner {c} before reaching b")
        z = z2
    seq = np.array(corners, dtype=np.int64)
    return InterfaceCurve(corners=seq, turns=_step_turns(emb, seq))


def _crossing_tangents(emb: SEmbedding, corners: np.ndarray) -> np.ndarray:
    """Unit tangents of the curve at the corner midpoints, oriented
    along the travel direction.

    The tangent is perpendicular to the corner segment; the sign is the
    one pointing with the chord to the next midpoint (convexity keeps
    them within a right angle).
    """
    g = emb.graph
    mid = 0.5 * (emb.s[g.corners[corners, 0]] + emb.s[g.corners[corners, 1]])
    chord = np.diff(mid)
    tau = 1j * emb.corner_dir[corners]
    along = np.empty(len(corners))
    along[:-1] = np.real(tau[:-1] * np.conj(chord))
    along[-1] = np.real(tau[-1] * np.conj(chord[-1]))
    tau[along < 0.0] *= -1.0
    return tau


def _step_turns(emb: SEmbedding, corners: np.ndarray) -> np.ndarray:
    tau = _crossing_tangents(emb, corners)
    return np.angle(tau[1:] * np.conj(tau[:-1]))


def interface_membership(config: FKConfig, domain: FKDomain) -> np.ndarray:
    """Corner mask of the interface from the cluster labels alone: the
    primal endpoint joins the wired arc and the dual endpoint joins the
    free arc."""
    g = domain.graph
    bd = domain.boundary
    p_root = config.primal_label[bd.primal_arc[0]]
    d_root = config.dual_label[bd.dual_arc[0] - g.n_primal]
    cp = g.corners[:, 0]
    cd = g.corners[:, 1] - g.n_primal
    return ((config.primal_label[cp] == p_root)
            & (config.dual_label[cd] == d_root))


def winding(curve: InterfaceCurve, from_corner: int) -> float:
    """Total turning of the midpoint polyline from from_corner to b."""
    idx = np.flatnonzero(curve.corners == from_corner)
    if idx.size == 0:
        raise ValueError(f"corner {from_corner} is not on the interface")
    return float(curve.turns[int(idx[0]):].sum())


def _suffix_windings(curve: InterfaceCurve) -> np.ndarray:
    n = len(curve.corners)
    wind = np.zeros(n)
    if n >= 2:
        wind[:n - 1] = np.cumsum(curve.turns[::-1])[::-1]
    return wind


# ---------------------------------------------------------------------------
# The fermionic corner observable


def _normalization(emb: SEmbedding, domain: FKDomain) -> np.ndarray:
    nb_dir = emb.corner_dir[domain.boundary.b]
    return np.sqrt(nb_dir) * np.sqrt(emb.corner_len)


def exact_f(domain: FKDomain, emb: SEmbedding,
            edge_ratio: str = "as_printed") -> CornerField:
    """Corner observable by exact enumeration.

    Each visited corner contributes the winding phase to b; the mean is
    normalized by the root of b's direction and of the corner length.
    """
    g = domain.graph
    acc = np.zeros(g.n_corners, dtype=complex)
    for cfg, p in enumerate_exact(domain, emb, edge_ratio):
        curve = trace_interface(cfg, domain, emb)
        wind = _suffix_windings(curve)
        acc[curve.corners] += p * np.exp(-0.5j * _PHASE_SIGN * wind)
    values = acc / _normalization(emb, domain)
    return CornerField(values=values, lines=emb.corner_dir.copy())


def estimate_f(domain: FKDomain, emb: SEmbedding, corners=None,
               n_samples: int = 1000, seed: int = 0, chains: int = 1,
               sweeps_per_sample: int = 4, burn_in: int = 64,
               edge_ratio: str = "as_printed") -> ObservableEstimate:
    """Monte Carlo estimate of the corner observable.

    Chains are independent streams keyed by their index; their
    accumulators merge by summation, so the pooled result matches a
    single stream over the union of the samples.
    """
    g = domain.graph
    if corners is None:
        corners = np.arange(g.n_corners, dtype=np.int64)
    else:
        corners = np.asarray(corners, dtype=np.int64)
    if chains < 1 or n_samples < chains:
        raise ValueError("need at least one sample per chain")
    nf = domain.n_free
    if nf == 0:
        raise ValueError("domain has no free edge to sample")

    fratio = edge_odds(emb, edge_ratio)[domain.boundary.free]
    mid = 0.5 * (emb.s[g.corners[:, 0]] + emb.s[g.corners[:, 1]])
    acc_re = np.zeros(g.n_corners)
    acc_im = np.zeros(g.n_corners)
    acc_cnt = np.zeros(g.n_corners, dtype=np.int64)
    path = np.empty(4 * g.n_quads + 4, dtype=np.int64)
    taux = np.empty(len(path))
    tauy = np.empty(len(path))
    per_chain = [n_samples // chains] * chains
    for c in range(n_samples % chains):
        per_chain[c] += 1

    for c, n_c in enumerate(per_chain):
        state = domain.base_open.copy()
        visited, queue = _scratch(domain)
        stamp = _kern.run_steps(
            state, seed, c, 0, burn_in * nf, domain.boundary.free,
            domain.free_ends[:, 0], domain.free_ends[:, 1], fratio,
            domain.adj_indptr, domain.adj_nbr, domain.adj_quad, visited,
            queue, 0)
        status, _ = _kern.accumulate(
            state, seed, c, burn_in * nf, n_c, sweeps_per_sample * nf,
            domain.boundary.free, domain.free_ends[:, 0],
            domain.free_ends[:, 1], fratio, domain.adj_indptr,
            domain.adj_nbr, domain.adj_quad, visited, queue,
            domain.boundary.a, domain.boundary.b, g.quad_corners,
            g.corner_quads, domain.corner_slot, mid.real.copy(),
            mid.imag.copy(), emb.corner_dir.real.copy(),
            emb.corner_dir.imag.copy(), _PHASE_SIGN, acc_re, acc_im,
            acc_cnt, path, taux, tauy)
        if status < 0:
            raise ValueError(f"interface walk failed with code {status}")

    raw_mean = (acc_re[corners] + 1j * acc_im[corners]) / n_samples
    # Visited samples contribute unit modulus, the rest zero, so the
    # second moment is the visit frequency.
    var = acc_cnt[corners] / n_samples - np.abs(raw_mean) ** 2
    if n_samples > 1:
        stderr_raw = np.sqrt(np.maximum(var, 0.0) / (n_samples - 1))
    else:
        stderr_raw = np.full(len(corners), np.inf)
    norm = _normalization(emb, domain)[corners]
    return ObservableEstimate(corners=corners, mean=raw_mean / norm,
                              stderr=stderr_raw / np.abs(norm),
                              samples=n_samples)


def observable_quad_field(f: CornerField,
                          emb: SEmbedding) -> tuple[np.ndarray, np.ndarray]:
    """Integral-form quad representative of a corner observable.

    Returns per-quad values and per-quad reconstruction residuals.
    Coherence (small residual) is only promised on the free quads of a
    Dobrushin domain; quads forced by the boundary arcs carry boundary
    effects and may reconstruct poorly.
    """
    g = emb.graph
    vals = np.empty(g.n_quads, dtype=complex)
    residuals = np.empty(g.n_quads)
    for z in range(g.n_quads):
        cs = g.quad_corners[z]
        w, res = reconstruct_f_on_quad(f.values[cs], emb.corner_dir[cs])
        vals[z] = w
        residuals[z] = res
    return _TWIST * vals, residuals


# ---------------------------------------------------------------------------
# The square-integrated observable


def build_h(f: CornerField, domain: FKDomain, emb: SEmbedding,
            tol: float = 1e-10,
            stderr: np.ndarray | float | None = None) -> np.ndarray:
    """Integrate the squared observable into the vertex field H.

    Every corner carries the increment H(primal) - H(dual) equal to the
    corner length times the squared line coefficient.  The increments
    must close around every quad (else MonodromyError), H must vanish
    on the free arc, equal 1 on the wired arc and stay within [0, 1] up
    to tolerance.  For Monte Carlo input pass the estimator's stderr
    (scalar or per corner); all checks then slacken by 3 standard
    errors of the quantity they test.
    """
    g = domain.graph
    bd = domain.boundary
    u = 1.0 / np.sqrt(emb.corner_dir)
    t = np.real(f.values * np.conj(u))
    step = emb.corner_len * t * t

    if stderr is None:
        sd_step = np.zeros(g.n_corners)
    else:
        sd = np.broadcast_to(np.asarray(stderr, dtype=float), (g.n_corners,))
        sd_step = emb.corner_len * (2.0 * np.abs(t) * sd + sd * sd)

    qc = g.quad_corners
    defect = np.abs(step[qc[:, 0]] - step[qc[:, 1]]
                    + step[qc[:, 2]] - step[qc[:, 3]])
    quad_tol = tol + 3.0 * sd_step[qc].sum(axis=1)
    excess = defect - quad_tol
    z = int(np.argmax(excess)) if len(excess) else 0
    if len(excess) and excess[z] > 0.0:
        raise MonodromyError(z, float(defect[z]))
    # Noise on any integration path is at most the quadrature sum of
    # all step deviations; one global slack covers boundary and range.
    slack = tol + 3.0 * math.sqrt(float((sd_step * sd_step).sum()))

    n_all = g.n_primal + g.n_dual
    h = np.full(n_all, np.nan)
    root = int(bd.dual_arc[0])
    h[root] = 0.0
    # BFS over corners: each corner is an edge primal <- step -> dual.
    incident = [[] for _ in range(n_all)]
    for k in range(g.n_corners):
        p, d = int(g.corners[k, 0]), int(g.corners[k, 1])
        incident[p].append((d, -step[k]))
        incident[d].append((p, step[k]))
    queue = [root]
    while queue:
        v = queue.pop()
        for w, ds in incident[v]:
            if np.isnan(h[w]):
                h[w] = h[v] + ds
                queue.append(w)

    if np.isnan(h).any():
        raise ValueError("corner graph is disconnected")
    dual_dev = np.abs(h[bd.dual_arc]).max()
    primal_dev = np.abs(h[bd.primal_arc] - 1.0).max()
    if primal_dev > slack or dual_dev > slack:
        raise ValueError(
            "H fails its boundary values: wired arc off by "
            f"{primal_dev:.3e}, free arc off by {dual_dev:.3e}")
    if h.max() > 1.0 + slack or h.min() < -slack:
        raise ValueError(f"H leaves [0, 1]: range [{h.min()}, {h.max()}]")
    return h
