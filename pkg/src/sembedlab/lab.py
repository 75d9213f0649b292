"""Experiment orchestration on top of the core modules.

Three pipelines, all driven by a plain-text config file:

* the identity suite replays every operator- and observable-level
  invariant on a given embedding and reports per-check defects,
* the convergence study builds a ladder of embeddings, estimates the
  interface observable on each, integrates it to the vertex field H,
  and compares H at probe points against the continuum Dirichlet
  solution h of the induced Laplace-Beltrami operator,
* the renderer wraps the SVG drawing with an optional sampled
  interface on top.

Runs are reproducible: a config resolves to a canonical dictionary,
its SHA-256 prefix becomes the run hash, every emitted CSV row carries
that hash, and re-running an identical config writes byte-identical
CSVs regardless of the number of worker processes.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import continuum as ct
from . import discrete_ops as do
from . import fkmodel as fk
from . import quadgraph as qg
from . import sembedding as se
from . import __version__

# Tolerances used by the identity suite and pinned into manifests.
TOLERANCES = {
    "kernel_const": 1e-10,
    "kernel_s": 1e-10,
    "kernel_q": 1e-10,
    "realness": 1e-10,
    "symmetry": 1e-10,
    "factorization": 1e-10,
    "kernel_row": 1e-10,
    "lorentz": 1e-8,
    "projection": 1e-12,
    "lines": 1e-12,
    "propagation": 1e-12,
    "coherence": 1e-10,
    "h_range": 1e-10,
    "h_boundary": 1e-10,
    "dbar_h": 1e-10,
    "integral": 1e-10,
    "positivity": 1e-10,
    "membership": 0.0,
    "isometry": 1e-12,
}

_FMT = "%.17g"


def _f(x: float) -> str:
    return _FMT % float(x)


# ---------------------------------------------------------------------------
# Identity suite


@dataclass
class CheckResult:
    name: str
    defect: float
    tol: float
    passed: bool
    detail: str = ""


@dataclass
class IdentityReport:
    """Machine-readable outcome of the identity suite.

    ``mode`` is "exact" when a Dobrushin boundary under the enumeration
    cap allowed observable-level checks, "operators" otherwise.
    Failures never raise; they are entries with ``passed`` False.
    """

    mode: str
    n_free: int
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_free": self.n_free,
            "passed": self.passed,
            "checks": [dataclasses.asdict(c) for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _common_quad(g: qg.QuadGraph, i: int, j: int) -> str:
    hits = np.flatnonzero(((g.quads == i).any(axis=1)) & ((g.quads == j).any(axis=1)))
    if len(hits):
        return f"quad {int(hits[0])}"
    return f"vertices {i},{j}"


def run_identity_suite(emb: se.SEmbedding,
                       boundary: qg.DobrushinBoundary | None = None,
                       seed: int = 0,
                       lorentz_trials: int = 20,
                       edge_ratio: str = "as_printed") -> IdentityReport:
    """Replay every shipped invariant on one embedding.

    Operator-level checks always run.  When ``boundary`` is given and
    its free-edge count is under the enumeration cap, the exact
    observable is computed and the full chain of observable identities
    runs as well.  The report never raises: a corrupted embedding shows
    up as failed entries, with the symmetry entry naming the quad whose
    coefficients disagree.
    """
    g = emb.graph
    checks: list[CheckResult] = []
    rng = np.random.default_rng(seed)

    def add(name, defect, detail=""):
        tol = TOLERANCES[name]
        checks.append(CheckResult(name, float(defect), tol, bool(defect <= tol), detail))

    mdbar = do.dbar_s_matrix(emb)
    ones = np.ones(g.n_vertices)
    add("kernel_const", np.abs(mdbar @ ones).max() if g.n_quads else 0.0)
    add("kernel_s", np.abs(mdbar @ emb.s).max() if g.n_quads else 0.0)
    add("kernel_q", np.abs(mdbar @ emb.q).max() if g.n_quads else 0.0)

    interior = np.flatnonzero(g.interior)
    momega = do.d_omega_matrix(emb, interior)
    lap_c = (-4.0 * (momega.conj() @ mdbar)).tocsr()
    add("realness", np.abs(lap_c.data.imag).max() if lap_c.nnz else 0.0)
    lap = lap_c.real.tocsr()
    block = lap[interior][:, interior]
    gap = (block - block.T).tocoo()
    if gap.nnz:
        k = int(np.argmax(np.abs(gap.data)))
        i, j = int(interior[gap.row[k]]), int(interior[gap.col[k]])
        add("symmetry", np.abs(gap.data).max(), _common_quad(g, i, j))
    else:
        add("symmetry", 0.0)
    other = (-4.0 * (momega @ mdbar.conj())).tocsr()
    fgap = (lap_c - other).tocoo()
    add("factorization", np.abs(fgap.data).max() if fgap.nnz else 0.0)
    kernel = np.column_stack([ones, emb.s.real, emb.s.imag, emb.q])
    add("kernel_row", np.abs((lap @ kernel)[interior]).max() if len(interior) else 0.0)

    worst_l = 0.0
    for _ in range(lorentz_trials):
        lm = se.lorentz_rotation(rng.uniform(0, 2 * math.pi)).compose(
            se.lorentz_boost(rng.uniform(0, 0.5), rng.uniform(0, 2 * math.pi))).compose(
            se.lorentz_translation(rng.normal(size=3)))
        emb2 = se.apply_isometry(emb, lm)
        lap2 = (-4.0 * (do.d_omega_matrix(emb2, interior).conj()
                        @ do.dbar_s_matrix(emb2))).real.tocsr()
        d = (lap - lap2).tocoo()
        worst_l = max(worst_l, np.abs(d.data).max() if d.nnz else 0.0)
    add("lorentz", worst_l)

    gvals = rng.normal(size=g.n_quads) + 1j * rng.normal(size=g.n_quads)
    worst_p = 0.0
    for z in range(g.n_quads):
        cs = g.quad_corners[z]
        n = emb.corner_dir[cs]
        u = 1.0 / np.sqrt(n)
        proj = np.real(gvals[z] * np.conj(u)) * u
        rec, res = do.reconstruct_f_on_quad(proj, n)
        worst_p = max(worst_p, res, abs(rec - gvals[z]))
    add("projection", worst_p)

    n_free = len(boundary.free) if boundary is not None else -1
    if boundary is None or n_free > fk._ENUM_CAP:
        return IdentityReport(mode="operators", n_free=n_free, checks=checks)

    dom = fk.make_domain(g, boundary)
    f = fk.exact_f(dom, emb, edge_ratio=edge_ratio)
    add("lines", f.max_line_residual())

    t = np.real(f.values * np.conj(1.0 / np.sqrt(emb.corner_dir)))
    step = emb.corner_len * t * t
    qc = g.quad_corners
    add("propagation",
        np.abs(step[qc[:, 0]] - step[qc[:, 1]] + step[qc[:, 2]] - step[qc[:, 3]]).max())

    fq, resid = fk.observable_quad_field(f, emb)
    free = np.asarray(boundary.free, dtype=np.int64)
    add("coherence", resid[free].max() if len(free) else 0.0)

    try:
        hv = fk.build_h(f, dom, emb)
    except (fk.MonodromyError, ValueError) as exc:
        checks.append(CheckResult("h_range", math.inf, TOLERANCES["h_range"],
                                  False, f"integration failed: {exc}"))
        return IdentityReport(mode="exact", n_free=n_free, checks=checks)
    add("h_range", max(0.0, float(hv.max()) - 1.0, -float(hv.min())))
    bdev = max(abs(hv[v] - 1.0) for v in boundary.primal_arc)
    bdev = max(bdev, max(abs(hv[v]) for v in boundary.dual_arc))
    add("h_boundary", bdev)

    dh = np.conj(mdbar @ hv.astype(complex))
    add("dbar_h",
        np.abs(dh[free] - fq[free] ** 2 / 4j).max() if len(free) else 0.0)

    sv = emb.s[g.quads]
    qv = emb.q[g.quads]
    hq = hv[g.quads]
    f2 = fq * fq
    fa2 = np.abs(fq) ** 2
    worst_i = 0.0
    for aa, bb in ((0, 2), (1, 3)):
        dif = np.abs(hq[:, bb] - hq[:, aa]
                     - np.imag(0.5 * (f2 * (sv[:, bb] - sv[:, aa])
                                      + 1j * fa2 * (qv[:, bb] - qv[:, aa]))))
        if len(free):
            worst_i = max(worst_i, float(dif[free].max()))
    add("integral", worst_i)

    # Positivity of the s-laplacian of H only holds where the whole fan
    # is made of free quads; vertices touching a forced quad see the
    # boundary arcs and legitimately break it.
    free_set = set(int(z) for z in free)
    deep = [int(v) for v in interior
            if all(int(z) in free_set for z in g.fan_quads[v])]
    if deep:
        vals = (lap @ hv)[deep]
        add("positivity", max(0.0, -float(vals.min())), f"{len(deep)} vertices")
    else:
        add("positivity", 0.0, "no interior vertex with an all-free fan")

    masks = (range(2 ** n_free) if n_free <= 6
             else (int(x) for x in rng.integers(0, 2 ** n_free, size=64)))
    bad = 0
    for m in masks:
        bits = np.array([(m >> k) & 1 for k in range(n_free)], dtype=bool)
        flags = dom.base_open.astype(bool)
        flags[free] = bits
        conf = fk.make_config(dom, flags)
        curve = fk.trace_interface(conf, dom, emb)
        member = fk.interface_membership(conf, dom)
        on_curve = np.zeros(g.n_corners, dtype=bool)
        on_curve[curve.corners] = True
        bad += int((member != on_curve).sum())
    add("membership", float(bad))

    lm = se.lorentz_rotation(rng.uniform(0, 2 * math.pi)).compose(
        se.lorentz_boost(0.3, rng.uniform(0, 2 * math.pi)))
    emb2 = se.apply_isometry(emb, lm)
    f2x = fk.exact_f(fk.make_domain(emb2.graph, boundary), emb2, edge_ratio=edge_ratio)
    hv2 = fk.build_h(f2x, fk.make_domain(emb2.graph, boundary), emb2)
    add("isometry", np.abs(hv - hv2).max())

    return IdentityReport(mode="exact", n_free=n_free, checks=checks)


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    """Resolved experiment description.

    Geometry (surface kind and parameters, domain shape, marked points),
    the delta ladder, probe points, sampler settings and output paths,
    all validated at construction.  ``canonical()`` returns the exact
    dictionary that is hashed into the run hash.
    """

    surface: str                       # flat | tilted | catenoid
    beta: float = 0.0
    direction: float = 0.0
    c: float = 1.0
    shape: tuple = ("rect", 0.0, 0.0, 1.0, 1.0)
    mark_a: complex = 1.0 + 0.5j
    mark_b: complex = 0.5j
    deltas: tuple = (0.25, 0.125)
    probes: tuple = ()
    seed: int = 0
    samples: int = 100000
    chains: int = 2
    sweeps_per_sample: int = 4
    burn_in: int = 64
    edge_ratio: str = "as_printed"
    fem_mesh: float = 0.02
    fem_ramp: float = 0.0
    out_dir: str = "out"

    def __post_init__(self):
        if self.surface not in ("flat", "tilted", "catenoid"):
            raise ValueError(f"unknown surface kind {self.surface!r}")
        if self.edge_ratio not in fk.RATIO_CONVENTIONS:
            raise ValueError(f"unknown edge_ratio {self.edge_ratio!r}")
        self.deltas = tuple(float(d) for d in self.deltas)
        if not self.deltas or any(d <= 0 for d in self.deltas):
            raise ValueError("deltas must be positive")
        if any(b >= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise ValueError("deltas must be strictly decreasing")
        self.probes = tuple(complex(p) for p in self.probes)
        self.mark_a = complex(self.mark_a)
        self.mark_b = complex(self.mark_b)
        dom = ct.mark_domain(self.surface_spec(), self.mark_a, self.mark_b)
        clearance = 2.0 * max(self.deltas)
        for p in self.probes:
            if not dom.contains(p):
                raise ValueError(f"probe {p} is outside the domain")
            if _poly_clearance(dom.polygon, p) < clearance:
                raise ValueError(
                    f"probe {p} is closer than 2*max(delta)={clearance} to the boundary")
        if self.samples < 1 or self.chains < 1 or self.sweeps_per_sample < 1:
            raise ValueError("sampler settings must be positive")

    def surface_spec(self) -> se.SurfaceSpec:
        if self.surface == "flat":
            return se.flat_surface(self.shape)
        if self.surface == "tilted":
            a = self.beta * math.cos(self.direction)
            b = self.beta * math.sin(self.direction)
            return se.tilted_surface(a, b, domain=self.shape)
        return se.catenoid_surface(self.c, domain=self.shape)

    def canonical(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out_dir")           # where outputs land must not change the run hash
        for key in ("mark_a", "mark_b"):
            z = d[key]
            d[key] = [z.real, z.imag]
        d["probes"] = [[p.real, p.imag] for p in self.probes]
        d["shape"] = list(self.shape)
        d["version"] = __version__
        return d

    @property
    def run_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _poly_clearance(polygon: np.ndarray, p: complex) -> float:
    a = polygon
    b = np.roll(polygon, -1)
    ab = b - a
    tt = np.clip(((p - a) * np.conj(ab)).real / np.abs(ab) ** 2, 0.0, 1.0)
    return float(np.abs(a + tt * ab - p).min())


def _get(cp: configparser.ConfigParser, section: str, key: str, default=None):
    if cp.has_option(section, key):
        return cp.get(section, key)
    return default


def load_config(path: str, seed: int | None = None,
                out: str | None = None) -> ExperimentConfig:
    """Parse a key=value config file with bracketed section headers."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)

    kind = _get(cp, "surface", "kind")
    if kind is None:
        raise ValueError("config needs [surface] kind")
    shape_name = _get(cp, "domain", "shape", "rect")
    if shape_name == "rect":
        shape = ("rect",
                 cp.getfloat("domain", "x0", fallback=0.0),
                 cp.getfloat("domain", "y0", fallback=0.0),
                 cp.getfloat("domain", "x1", fallback=1.0),
                 cp.getfloat("domain", "y1", fallback=1.0))
    elif shape_name == "annulus_sector":
        shape = ("annulus_sector",
                 cp.getfloat("domain", "r0"),
                 cp.getfloat("domain", "r1"),
                 cp.getfloat("domain", "phi0", fallback=0.0),
                 cp.getfloat("domain", "phi1", fallback=math.pi / 2))
    else:
        raise ValueError(f"unknown domain shape {shape_name!r}")

    raw_seed = _get(cp, "sampler", "seed") if seed is None else str(seed)
    if raw_seed is None:
        raise ValueError("config needs [sampler] seed")

    deltas = tuple(float(t) for t in _get(cp, "study", "deltas", "").split())
    probes = tuple(complex(t) for t in _get(cp, "study", "probes", "").split())

    return ExperimentConfig(
        surface=kind,
        beta=cp.getfloat("surface", "beta", fallback=0.0),
        direction=cp.getfloat("surface", "direction", fallback=0.0),
        c=cp.getfloat("surface", "c", fallback=1.0),
        shape=shape,
        mark_a=complex(_get(cp, "domain", "a", "1+0.5j")),
        mark_b=complex(_get(cp, "domain", "b", "0.5j")),
        deltas=deltas,
        probes=probes,
        seed=int(raw_seed),
        samples=cp.getint("sampler", "samples", fallback=100000),
        chains=cp.getint("sampler", "chains", fallback=2),
        sweeps_per_sample=cp.getint("sampler", "sweeps_per_sample", fallback=4),
        burn_in=cp.getint("sampler", "burn_in", fallback=64),
        edge_ratio=_get(cp, "sampler", "edge_ratio", "as_printed"),
        fem_mesh=cp.getfloat("continuum", "mesh", fallback=0.02),
        fem_ramp=cp.getfloat("continuum", "ramp", fallback=0.0),
        out_dir=out if out is not None else _get(cp, "output", "dir", "out"),
    )


@dataclass
class RunManifest:
    """Reproducibility record written next to every run's outputs."""

    run_hash: str
    version: str
    edge_ratio: str
    tolerances: dict
    config: dict
    timings: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def for_config(cls, config: ExperimentConfig) -> "RunManifest":
        return cls(run_hash=config.run_hash, version=__version__,
                   edge_ratio=config.edge_ratio, tolerances=dict(TOLERANCES),
                   config=config.canonical())


# ---------------------------------------------------------------------------
# Per-delta discrete setup


def _plane_map(lm: se.LorentzMap):
    def go(z: complex) -> complex:
        p = lm.apply(np.array([z.real, z.imag, 0.0]))
        return complex(p[0], p[1])
    return go


def discrete_setup(config: ExperimentConfig, delta: float):
    """Embedding plus Dobrushin boundary for one rung of the ladder."""
    if config.shape[0] == "rect":
        _, x0, y0, x1, y1 = config.shape
        w = (x1 - x0) / delta
        h = (y1 - y0) / delta
        wi, hi = int(round(w)), int(round(h))
        if abs(w - wi) > 1e-9 or abs(h - hi) > 1e-9 or wi % 2 or hi % 2:
            raise ValueError(
                f"delta={delta} must split the rectangle into an even cell count")
        emb = se.flat_rect_embedding(wi, hi, delta)
        if x0 or y0:
            emb = se.apply_isometry(emb, se.lorentz_translation((x0, y0, 0.0)))
        bd = qg.rect_dobrushin(emb.graph, wi, hi)
        if config.surface == "tilted":
            lm = se.lorentz_boost(config.beta, config.direction)
            emb = se.apply_isometry(emb, lm)
        return emb, bd
    spec = config.surface_spec()
    emb = se.build_maximal_triangulation(spec, delta)
    bd = qg.disc_dobrushin(emb.graph, emb.s, config.mark_a, config.mark_b)
    return emb, bd


def _corner_midpoints(emb: se.SEmbedding, corners=None) -> np.ndarray:
    g = emb.graph
    cs = g.corners if corners is None else g.corners[corners]
    return 0.5 * (emb.s[cs[:, 0]] + emb.s[cs[:, 1]])


# ---------------------------------------------------------------------------
# Convergence study


def _study_delta(config: ExperimentConfig, k: int) -> dict:
    """Build, estimate, integrate and probe one rung.  Pure in config."""
    delta = config.deltas[k]
    out: dict = {"delta": delta}
    t0 = time.perf_counter()
    emb, bd = discrete_setup(config, delta)
    dom = fk.make_domain(emb.graph, bd)
    out["n_free"] = dom.n_free
    out["t_build"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if dom.n_free <= fk._ENUM_CAP:
        fobs = fk.exact_f(dom, emb, edge_ratio=config.edge_ratio)
        stderr = np.zeros(emb.graph.n_corners)
        n_used = 2 ** dom.n_free
        out["exact"] = True
    else:
        est = fk.estimate_f(dom, emb, n_samples=config.samples,
                            seed=config.seed, chains=config.chains,
                            sweeps_per_sample=config.sweeps_per_sample,
                            burn_in=config.burn_in, edge_ratio=config.edge_ratio)
        fobs = do.CornerField.on_embedding(emb, est.mean)
        stderr = est.stderr
        n_used = est.samples
        out["exact"] = False
    out["t_estimate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    hv = fk.build_h(fobs, dom, emb,
                    stderr=None if out["exact"] else stderr)
    # A path from the root can cross any subset of corners, so the
    # quadrature sum over all step deviations bounds the error of H at
    # every vertex at once.
    tvals = np.real(fobs.values * np.conj(1.0 / np.sqrt(emb.corner_dir)))
    sd_step = emb.corner_len * (2.0 * np.abs(tvals) * stderr + stderr ** 2)
    h_stderr = float(np.sqrt((sd_step ** 2).sum()))
    out["t_integrate"] = time.perf_counter() - t0

    if config.surface == "tilted":
        go = _plane_map(se.lorentz_boost(config.beta, config.direction))
        probes = [go(p) for p in config.probes]
    else:
        probes = list(config.probes)

    mids = _corner_midpoints(emb)
    probe_rows = []
    for i, p in enumerate(probes):
        v = int(np.argmin(np.abs(emb.s - p)))
        probe_rows.append({
            "probe": i, "px": p.real, "py": p.imag,
            "vertex": v, "vx": emb.s[v].real, "vy": emb.s[v].imag,
            "dist": abs(emb.s[v] - p),
            "h": float(hv[v]), "stderr": h_stderr,
        })
    out["probes"] = probe_rows

    out["corner_rows"] = [
        (c, mids[c].real, mids[c].imag,
         fobs.values[c].real, fobs.values[c].imag, float(stderr[c]), n_used)
        for c in range(emb.graph.n_corners)
    ]
    out["h_rows"] = [
        (v, emb.s[v].real, emb.s[v].imag, float(hv[v]), h_stderr)
        for v in range(emb.graph.n_vertices)
    ]
    ca, cb = emb.graph.corners[bd.a], emb.graph.corners[bd.b]
    out["junction_a"] = complex(0.5 * (emb.s[ca[0]] + emb.s[ca[1]]))
    out["junction_b"] = complex(0.5 * (emb.s[cb[0]] + emb.s[cb[1]]))
    return out


@dataclass
class StudyResult:
    manifest: RunManifest
    probe_rows: list
    pair_rows: list
    h_ref: np.ndarray
    csv_paths: dict
    svg_path: str

    @property
    def passed(self) -> bool:
        return not any(r["verdict"] == "increasing" for r in self.pair_rows)


def run_convergence_study(config: ExperimentConfig, jobs: int = 1) -> StudyResult:
    """Error of the discrete field H against the continuum solution h.

    One FEM solve provides the reference; each delta contributes the
    probe values of H at the nearest vertex, the probe-vertex distance
    on record, and a conservative Monte Carlo standard error.  The
    monotonicity verdicts compare consecutive deltas per probe and only
    claim a direction beyond twice the combined standard error.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    manifest = RunManifest.for_config(config)
    rh = manifest.run_hash

    t0 = time.perf_counter()
    spec = config.surface_spec()
    if config.surface == "tilted":
        go = _plane_map(se.lorentz_boost(config.beta, config.direction))
        base = ct.mark_domain(se.flat_surface(config.shape),
                              config.mark_a, config.mark_b)
        polygon = np.array([go(z) for z in base.polygon])
        marked = ct.MarkedDomain(polygon, go(config.mark_a), go(config.mark_b))
        probes = np.array([go(p) for p in config.probes])
    else:
        marked = ct.mark_domain(spec, config.mark_a, config.mark_b)
        probes = np.asarray(config.probes, dtype=complex)
    fem = ct.solve_h(spec, marked, config.fem_mesh, junction_ramp=config.fem_ramp)
    h_ref = fem.interpolate(probes)
    manifest.timings["fem"] = time.perf_counter() - t0

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_study_delta, [config] * len(config.deltas),
                                    range(len(config.deltas))))
    else:
        results = [_study_delta(config, k) for k in range(len(config.deltas))]

    probe_rows = []
    for k, res in enumerate(results):
        manifest.timings[f"build_d{k}"] = res["t_build"]
        manifest.timings[f"estimate_d{k}"] = res["t_estimate"]
        manifest.timings[f"integrate_d{k}"] = res["t_integrate"]
        for row in res["probes"]:
            err = abs(row["h"] - h_ref[row["probe"]])
            probe_rows.append({**row, "delta": res["delta"],
                               "h_ref": float(h_ref[row["probe"]]),
                               "err": float(err)})

    pair_rows = []
    for i, p in enumerate(config.probes):
        seq = [r for r in probe_rows if r["probe"] == i]
        for prev, nxt in zip(seq, seq[1:]):
            combined = prev["stderr"] + nxt["stderr"]
            if nxt["err"] <= prev["err"] - 2.0 * combined:
                verdict = "decreasing"
            elif nxt["err"] >= prev["err"] + 2.0 * combined:
                verdict = "increasing"
            else:
                verdict = "within_noise"
            pair_rows.append({
                "probe": i, "delta_coarse": prev["delta"], "delta_fine": nxt["delta"],
                "err_coarse": prev["err"], "err_fine": nxt["err"],
                "combined_stderr": combined, "verdict": verdict,
            })

    paths: dict = {}
    t0 = time.perf_counter()
    for k, res in enumerate(results):
        p = os.path.join(config.out_dir, f"corners_d{k}.csv")
        _write_csv(p, "hash,delta,corner_id,x,y,re_f,im_f,stderr,n",
                   [[rh, _f(res["delta"]), str(c), _f(x), _f(y), _f(re), _f(im),
                     _f(sd), str(n)]
                    for c, x, y, re, im, sd, n in res["corner_rows"]])
        paths[f"corners_d{k}"] = p
        p = os.path.join(config.out_dir, f"field_d{k}.csv")
        _write_csv(p, "hash,delta,vertex_id,x,y,h,stderr",
                   [[rh, _f(res["delta"]), str(v), _f(x), _f(y), _f(h), _f(sd)]
                    for v, x, y, h, sd in res["h_rows"]])
        paths[f"field_d{k}"] = p

    p = os.path.join(config.out_dir, "probes.csv")
    _write_csv(p, "hash,delta,probe_id,probe_x,probe_y,vertex_id,vertex_x,"
               "vertex_y,vertex_dist,h_discrete,h_stderr,h_continuum,abs_err",
               [[rh, _f(r["delta"]), str(r["probe"]), _f(r["px"]), _f(r["py"]),
                 str(r["vertex"]), _f(r["vx"]), _f(r["vy"]), _f(r["dist"]),
                 _f(r["h"]), _f(r["stderr"]), _f(r["h_ref"]), _f(r["err"])]
                for r in probe_rows])
    paths["probes"] = p

    p = os.path.join(config.out_dir, "pairs.csv")
    _write_csv(p, "hash,probe_id,delta_coarse,delta_fine,err_coarse,err_fine,"
               "combined_stderr,verdict",
               [[rh, str(r["probe"]), _f(r["delta_coarse"]), _f(r["delta_fine"]),
                 _f(r["err_coarse"]), _f(r["err_fine"]),
                 _f(r["combined_stderr"]), r["verdict"]]
                for r in pair_rows])
    paths["pairs"] = p

    p = os.path.join(config.out_dir, "fem.csv")
    _write_csv(p, "hash,node_id,x,y,h",
               [[rh, str(i), _f(fem.nodes[i].real), _f(fem.nodes[i].imag),
                 _f(fem.values[i])]
                for i in range(len(fem.nodes))])
    paths["fem"] = p

    svg_path = os.path.join(config.out_dir, "study.svg")
    with open(svg_path, "w") as fh:
        fh.write(_loglog_svg(config, probe_rows))
    paths["study_svg"] = svg_path
    manifest.timings["emit"] = time.perf_counter() - t0

    manifest.outputs = paths
    manifest.save(os.path.join(config.out_dir, "manifest.json"))
    return StudyResult(manifest=manifest, probe_rows=probe_rows,
                       pair_rows=pair_rows, h_ref=h_ref,
                       csv_paths=paths, svg_path=svg_path)


def _write_csv(path: str, header: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _loglog_svg(config: ExperimentConfig, probe_rows, width=560, height=420) -> str:
    """Dependency-free log-log plot of probe error against delta."""
    deltas = sorted({r["delta"] for r in probe_rows}, reverse=True)
    errs = [max(r["err"], 1e-17) for r in probe_rows]
    if not errs:
        return "<svg xmlns='http://www.w3.org/2000/svg'/>"
    lx = [math.log10(d) for d in deltas]
    ly = [math.log10(e) for e in errs]
    x_lo, x_hi = min(lx) - 0.1, max(lx) + 0.1
    y_lo, y_hi = min(ly) - 0.2, max(ly) + 0.2
    ml, mb, mt, mr = 58, 42, 12, 12

    def sx(v):
        return ml + (v - x_lo) / (x_hi - x_lo) * (width - ml - mr)

    def sy(v):
        return height - mb - (v - y_lo) / (y_hi - y_lo) * (height - mb - mt)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{ml}" y1="{height-mb}" x2="{width-mr}" y2="{height-mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height-mb}" stroke="black"/>',
    ]
    for d in deltas:
        x = sx(math.log10(d))
        parts.append(f'<line x1="{x:.1f}" y1="{height-mb}" x2="{x:.1f}" '
                     f'y2="{height-mb+5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{height-mb+18}" font-size="11" '
                     f'text-anchor="middle">{d:g}</text>')
    k = int(math.floor(y_lo))
    while k <= math.ceil(y_hi):
        if y_lo <= k <= y_hi:
            y = sy(k)
            parts.append(f'<line x1="{ml-5}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" '
                         'stroke="black"/>')
            parts.append(f'<text x="{ml-8}" y="{y+4:.1f}" font-size="11" '
                         f'text-anchor="end">1e{k}</text>')
        k += 1
    parts.append(f'<text x="{(ml+width-mr)//2}" y="{height-6}" font-size="12" '
                 'text-anchor="middle">lattice step</text>')
    parts.append(f'<text x="14" y="{(mt+height-mb)//2}" font-size="12" '
                 f'text-anchor="middle" transform="rotate(-90 14 {(mt+height-mb)//2})">'
                 'probe error</text>')
    for i in range(len(config.probes)):
        pts = [(sx(math.log10(r["delta"])), sy(math.log10(max(r["err"], 1e-17))))
               for r in probe_rows if r["probe"] == i]
        if len(pts) > 1:
            d = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
            parts.append(f'<polyline points="{d}" fill="none" stroke="#4a6da7" '
                         'stroke-width="1" opacity="0.55"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2.4" fill="#4a6da7"/>')
    mean_pts = []
    for d in deltas:
        es = [r["err"] for r in probe_rows if r["delta"] == d]
        if es:
            mean_pts.append((sx(math.log10(d)),
                             sy(math.log10(max(sum(es) / len(es), 1e-17)))))
    if len(mean_pts) > 1:
        d = " ".join(f"{x:.1f},{y:.1f}" for x, y in mean_pts)
        parts.append(f'<polyline points="{d}" fill="none" stroke="#c0392b" '
                     'stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Rendering


def render_embedding(emb: se.SEmbedding,
                     boundary: qg.DobrushinBoundary | None = None,
                     interface: fk.InterfaceCurve | None = None,
                     width: int = 640) -> str:
    """SVG of the embedding, arcs, and an optional interface polyline."""
    pts = None
    if interface is not None:
        pts = _corner_midpoints(emb, np.asarray(interface.corners))
    return se.render_svg(emb, boundary, width=width, interface=pts)
