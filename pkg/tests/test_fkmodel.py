"""FK-Ising measure, interface, and observable tests.

The exact enumeration oracle anchors everything: MCMC frequencies,
Monte Carlo observable estimates, and the discrete identities of the
exact observable are all checked against independently computed or
hand-derived values.
"""

import itertools
import math

import numpy as np
import pytest

from sembedlab import discrete_ops as do
from sembedlab import fkmodel as fk
from sembedlab import quadgraph as qg
from sembedlab import sembedding as se
from sembedlab.discrete_ops import CornerField
from sembedlab.sembedding import MonodromyError

SQ2 = math.sqrt(2.0)
X_CRIT = SQ2 - 1.0


def rect_domain(w, h):
    emb = se.flat_rect_embedding(w, h, delta=1.0)
    bd = qg.rect_dobrushin(emb.graph, w, h)
    return emb, bd, fk.make_domain(emb.graph, bd)


def one_free_edge_domain():
    # 2x1 strip, left cell forced closed by the dual arc, right cell free.
    # The free edge joins two primal singletons, so opening it costs one
    # cluster: the two-configuration normalization is fully hand-checkable.
    emb = se.flat_rect_embedding(2, 1, delta=1.0)
    vid, _ = qg.rect_vertex_ids(2, 1)
    pa = [vid[(0, 1)]]
    da = [vid[(1, 1)], vid[(0, 0)]]
    bd = qg.make_dobrushin(emb.graph, pa, da)
    return emb, bd, fk.make_domain(emb.graph, bd)


def config_from_mask(domain, mask):
    flags = domain.base_open.astype(bool).copy()
    for i, z in enumerate(domain.boundary.free):
        if mask >> i & 1:
            flags[int(z)] = True
    return fk.make_config(domain, flags)


def brute_force_probabilities(domain, emb, edge_ratio="as_printed"):
    """Independent enumerator: plain dict DFS for clusters, no reuse of
    the union-find inside fkmodel."""
    g = domain.graph
    odds = fk.edge_odds(emb, edge_ratio)
    nf = domain.n_free
    weights = []
    for mask in range(1 << nf):
        flags = domain.base_open.astype(bool).copy()
        for i, z in enumerate(domain.boundary.free):
            if mask >> i & 1:
                flags[int(z)] = True
        adj = {v: [] for v in range(g.n_primal)}
        w = 1.0
        for z in range(g.n_quads):
            if flags[z]:
                u, v = int(g.quads[z, 0]), int(g.quads[z, 2])
                adj[u].append(v)
                adj[v].append(u)
                w *= odds[z]
        seen, k = set(), 0
        for v0 in range(g.n_primal):
            if v0 in seen:
                continue
            k += 1
            stack = [v0]
            while stack:
                v = stack.pop()
                if v in seen:
                    continue
                seen.add(v)
                stack.extend(adj[v])
        weights.append(w * 2.0**k)
    weights = np.asarray(weights)
    return weights / weights.sum()


# ---------------------------------------------------------------------------
# Weights and enumeration


def test_weight_empty_product_and_cluster_factor():
    emb, bd, dom = one_free_edge_domain()
    closed = config_from_mask(dom, 0)
    opened = config_from_mask(dom, 1)
    # three primal singletons when everything is closed
    assert fk.weight(closed, emb) == pytest.approx(8.0, rel=1e-14)
    for ratio in fk.RATIO_CONVENTIONS:
        r = fk.edge_odds(emb, ratio)[int(bd.free[0])]
        wc = fk.weight(closed, emb, edge_ratio=ratio)
        wo = fk.weight(opened, emb, edge_ratio=ratio)
        # open edge joins two distinct clusters: ratio times 2^{-1}
        assert wo / wc == pytest.approx(r / 2.0, rel=1e-13)


def test_weight_already_connected_pair():
    emb, bd, dom = rect_domain(2, 4)
    # cells 4 and 5 both touch the wired cluster through the top arc
    base = dom.base_open.astype(bool).copy()
    base[4] = True
    one = fk.make_config(dom, base)
    both = base.copy()
    both[5] = True
    two = fk.make_config(dom, both)
    r = fk.edge_odds(emb, "as_printed")[5]
    # endpoints already joined through quad 4 and the arc: no 2-factor
    assert fk.weight(two, emb) / fk.weight(one, emb) == pytest.approx(
        r, rel=1e-13)


def test_enumerate_probabilities_normalized():
    for w, h in [(2, 4), (4, 4)]:
        emb, bd, dom = rect_domain(w, h)
        for ratio in fk.RATIO_CONVENTIONS:
            states = fk.enumerate_exact(dom, emb, edge_ratio=ratio)
            assert len(states) == 1 << dom.n_free
            total = sum(p for _, p in states)
            assert abs(total - 1.0) <= 1e-12
            for cfg, _ in states:
                assert cfg.open[bd.forced_open].all()
                assert not cfg.open[bd.forced_closed].any()


def test_enumerate_matches_independent_enumerator():
    emb, bd, dom = rect_domain(2, 4)
    for ratio in fk.RATIO_CONVENTIONS:
        probs = np.array(
            [p for _, p in fk.enumerate_exact(dom, emb, edge_ratio=ratio)])
        oracle = brute_force_probabilities(dom, emb, ratio)
        assert np.abs(probs - oracle).max() <= 1e-12


def test_enumerate_two_by_two_single_config():
    emb, bd, dom = rect_domain(2, 2)
    assert dom.n_free == 0
    states = fk.enumerate_exact(dom, emb)
    assert len(states) == 1
    assert states[0][1] == pytest.approx(1.0, abs=1e-15)
    oracle = brute_force_probabilities(dom, emb)
    assert oracle.shape == (1,) and oracle[0] == pytest.approx(1.0)


def test_one_free_edge_closed_form():
    emb, bd, dom = one_free_edge_domain()
    assert dom.n_free == 1
    z = int(bd.free[0])
    for ratio in fk.RATIO_CONVENTIONS:
        r = float(fk.edge_odds(emb, ratio)[z])
        p_open = sum(p for cfg, p in
                     fk.enumerate_exact(dom, emb, edge_ratio=ratio)
                     if cfg.open[z])
        assert p_open == pytest.approx(r / (2.0 + r), abs=1e-13)
    # at the self-dual weight the printed convention lands on x itself
    p_open = sum(p for cfg, p in fk.enumerate_exact(dom, emb)
                 if cfg.open[z])
    assert p_open == pytest.approx(X_CRIT, abs=1e-13)


def test_enumeration_cap():
    emb, bd, dom = rect_domain(6, 8)
    assert dom.n_free > 22
    with pytest.raises(ValueError, match="cap"):
        fk.enumerate_exact(dom, emb)


def test_edge_odds_conventions():
    emb, _, _ = rect_domain(2, 2)
    x = emb.weights
    assert np.allclose(fk.edge_odds(emb, "as_printed"), (1 - x) / x)
    assert np.allclose(fk.edge_odds(emb, "standard"), x / (1 - x))
    with pytest.raises(ValueError):
        fk.edge_odds(emb, "bogus")


def test_make_config_validation():
    emb, bd, dom = rect_domain(2, 4)
    with pytest.raises(ValueError):
        fk.make_config(dom, np.zeros(3, dtype=bool))
    bad = dom.base_open.astype(bool).copy()
    bad[int(bd.forced_open[0])] = False
    with pytest.raises(ValueError, match="forcing"):
        fk.make_config(dom, bad)


# ---------------------------------------------------------------------------
# MCMC


def test_mcmc_zero_steps_keeps_initial_config():
    emb, bd, dom = rect_domain(2, 4)
    init = config_from_mask(dom, 0b0101)
    out = list(fk.mcmc_sample(dom, emb, steps=0, seed=7, init=init.open))
    assert len(out) == 1
    assert np.array_equal(out[0].open, init.open)


def test_mcmc_same_seed_identical_streams():
    emb, bd, dom = rect_domain(2, 4)
    s1 = [c.open.copy() for c in fk.mcmc_sample(dom, emb, steps=64, seed=3)]
    s2 = [c.open.copy() for c in fk.mcmc_sample(dom, emb, steps=64, seed=3)]
    s3 = [c.open.copy() for c in fk.mcmc_sample(dom, emb, steps=64, seed=4)]
    assert all(np.array_equal(a, b) for a, b in zip(s1, s2))
    assert any(not np.array_equal(a, b) for a, b in zip(s1, s3))


def test_mcmc_chi_square_against_enumeration():
    emb, bd, dom = rect_domain(2, 4)
    probs = np.array([p for _, p in fk.enumerate_exact(dom, emb)])
    counts = fk.mcmc_state_counts(dom, emb, sweeps=10**6, seed=0,
                                  measure_every=4)
    n = counts.sum()
    assert n == 250000
    expected = probs * n
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    df = len(probs) - 1
    assert chi2 < df + 3.0 * math.sqrt(2.0 * df)


def test_state_counts_validation():
    emb, bd, dom = rect_domain(2, 4)
    with pytest.raises(ValueError):
        fk.mcmc_state_counts(dom, emb, sweeps=10, seed=0, measure_every=0)
    emb2, bd2, dom2 = rect_domain(2, 2)
    with pytest.raises(ValueError):
        fk.mcmc_state_counts(dom2, emb2, sweeps=10, seed=0)


# ---------------------------------------------------------------------------
# Interface tracing and winding


def curve_midpoints(emb, curve):
    g = emb.graph
    return 0.5 * (emb.s[g.corners[curve.corners, 0]]
                  + emb.s[g.corners[curve.corners, 1]])


def test_trace_hugs_the_forced_arcs():
    emb, bd, dom = rect_domain(2, 4)
    closed = fk.trace_interface(config_from_mask(dom, 0), dom, emb)
    mask_all = (1 << dom.n_free) - 1
    opened = fk.trace_interface(config_from_mask(dom, mask_all), dom, emb)
    # all closed: the wired cluster is just the top arc, so the curve
    # stays high; all open: the dual cluster shrinks to the free arc
    assert curve_midpoints(emb, closed).imag.min() >= 2.0
    assert curve_midpoints(emb, opened).imag.max() <= 2.5
    assert int(closed.corners[0]) == bd.a and int(closed.corners[-1]) == bd.b
    assert int(opened.corners[0]) == bd.a and int(opened.corners[-1]) == bd.b


def test_membership_identity_on_every_enumerated_config():
    emb, bd, dom = rect_domain(2, 4)
    g = emb.graph
    for mask in range(1 << dom.n_free):
        cfg = config_from_mask(dom, mask)
        curve = fk.trace_interface(cfg, dom, emb)
        on_curve = np.zeros(g.n_corners, dtype=bool)
        on_curve[curve.corners] = True
        assert np.array_equal(on_curve, fk.interface_membership(cfg, dom))
        # consecutive corners share exactly one endpoint
        for c1, c2 in zip(curve.corners[:-1], curve.corners[1:]):
            shared = set(g.corners[c1]) & set(g.corners[c2])
            assert len(shared) == 1


def test_membership_identity_random_configs():
    emb, bd, dom = rect_domain(4, 6)
    rng = np.random.default_rng(5)
    for _ in range(20):
        mask = int(rng.integers(0, 1 << dom.n_free))
        cfg = config_from_mask(dom, mask)
        curve = fk.trace_interface(cfg, dom, emb)
        on_curve = np.zeros(emb.graph.n_corners, dtype=bool)
        on_curve[curve.corners] = True
        assert np.array_equal(on_curve, fk.interface_membership(cfg, dom))


def test_trace_invalid_config_raises():
    emb, bd, dom = rect_domain(2, 4)
    g = emb.graph
    bad = fk.FKConfig(open=np.zeros(g.n_quads, dtype=bool),
                      primal_label=np.arange(g.n_primal),
                      dual_label=np.zeros(g.n_dual, dtype=np.int64),
                      n_primal_clusters=g.n_primal, n_dual_clusters=1)
    with pytest.raises(ValueError, match="left the domain"):
        fk.trace_interface(bad, dom, emb)


def test_winding_quarter_turns_and_straight_corridors():
    emb, bd, dom = rect_domain(4, 4)
    curve = fk.trace_interface(config_from_mask(dom, 0), dom, emb)
    turns = np.asarray(curve.turns)
    # square lattice: consecutive corner segments are perpendicular
    assert np.abs(np.abs(turns) - math.pi / 2).max() <= 1e-12
    # the first step bends left around the wired arc, the crest bends right
    assert turns[0] == pytest.approx(+math.pi / 2, abs=1e-12)
    assert turns[2] == pytest.approx(-math.pi / 2, abs=1e-12)
    # straight corridor: parallel consecutive chords cancel in pairs
    mids = curve_midpoints(emb, curve)
    chords = np.diff(mids)
    for k in range(len(chords) - 1):
        cross = np.cross(
            [chords[k].real, chords[k].imag, 0.0],
            [chords[k + 1].real, chords[k + 1].imag, 0.0])[2]
        if abs(cross) < 1e-12:
            assert abs(turns[k] + turns[k + 1]) <= 1e-12
    # a full crossing of the strip is a straight corridor overall
    assert fk.winding(curve, int(curve.corners[0])) == pytest.approx(
        0.0, abs=1e-12)


def test_winding_loop_detour_adds_two_pi():
    emb, bd, dom = rect_domain(4, 6)
    base = fk.trace_interface(config_from_mask(dom, 0xF4), dom, emb)
    loop = fk.trace_interface(config_from_mask(dom, 0xF8), dom, emb)
    c = 16
    assert c in base.corners and c in loop.corners
    delta = fk.winding(loop, c) - fk.winding(base, c)
    assert delta == pytest.approx(2.0 * math.pi, abs=1e-12)


def test_winding_additivity_and_errors():
    emb, bd, dom = rect_domain(4, 4)
    curve = fk.trace_interface(config_from_mask(dom, 0b1010), dom, emb)
    turns = np.asarray(curve.turns)
    cs = curve.corners
    for j in (0, 1, len(cs) - 2):
        expect = float(turns[j:].sum())
        assert fk.winding(curve, int(cs[j])) == pytest.approx(
            expect, abs=1e-12)
    assert fk.winding(curve, int(cs[-1])) == 0.0
    off_curve = next(k for k in range(emb.graph.n_corners)
                     if k not in set(cs.tolist()))
    with pytest.raises(ValueError):
        fk.winding(curve, off_curve)


# ---------------------------------------------------------------------------
# The exact observable and its identities


def line_coefficients(f, emb):
    u = 1.0 / np.sqrt(emb.corner_dir)
    return np.real(f.values * np.conj(u))


def test_exact_f_one_free_edge_hand_values():
    emb, bd, dom = one_free_edge_domain()
    for ratio in fk.RATIO_CONVENTIONS:
        f = fk.exact_f(dom, emb, edge_ratio=ratio)
        # the curve is the same two-corner arc in both configurations,
        # so the two-term average collapses to the pure phases
        assert f.values[bd.a] == pytest.approx(-1j, abs=1e-14)
        assert f.values[bd.b] == pytest.approx(
            complex(SQ2 / 2, -SQ2 / 2), abs=1e-14)
        rest = np.delete(f.values, [bd.a, bd.b])
        assert np.abs(rest).max() == 0.0


def test_exact_f_lines_and_coherence():
    for w, h in [(2, 4), (4, 4)]:
        emb, bd, dom = rect_domain(w, h)
        f = fk.exact_f(dom, emb)
        assert f.max_line_residual() <= 1e-12
        _, residuals = fk.observable_quad_field(f, emb)
        assert residuals[bd.free].max() <= 1e-10


def test_exact_f_propagation_of_squares_every_quad():
    for build in [lambda: rect_domain(2, 4), lambda: rect_domain(4, 4),
                  one_free_edge_domain]:
        emb, bd, dom = build()
        f = fk.exact_f(dom, emb)
        t = line_coefficients(f, emb)
        step = emb.corner_len * t * t
        qc = emb.graph.quad_corners
        defect = np.abs(step[qc[:, 0]] - step[qc[:, 1]]
                        + step[qc[:, 2]] - step[qc[:, 3]])
        assert defect.max() <= 1e-12


def test_wrong_ratio_convention_breaks_coherence():
    # the embedding carries the critical weights; the swapped odds put
    # the measure off criticality, which the quad residuals detect
    emb, bd, dom = rect_domain(4, 4)
    f = fk.exact_f(dom, emb, edge_ratio="standard")
    _, residuals = fk.observable_quad_field(f, emb)
    assert residuals[bd.free].max() > 1e-2


def test_estimate_f_matches_exact_within_three_stderr():
    emb, bd, dom = rect_domain(4, 4)
    exact = fk.exact_f(dom, emb)
    est = fk.estimate_f(dom, emb, n_samples=4000, seed=11, chains=2)
    dev = np.abs(est.mean - exact.values)
    assert (dev <= 3.0 * np.maximum(est.stderr, 1e-15)).all()
    # estimates stay on their lines within the same error budget
    u = 1.0 / np.sqrt(emb.corner_dir)
    off_line = np.abs(np.imag(est.mean * np.conj(u)))
    assert (off_line <= 3.0 * np.maximum(est.stderr, 1e-15)).all()


def test_estimate_f_pocket_corners_are_exactly_zero():
    emb, bd, dom = rect_domain(2, 4)
    exact = fk.exact_f(dom, emb)
    visited = np.zeros(emb.graph.n_corners, dtype=bool)
    for mask in range(1 << dom.n_free):
        cfg = config_from_mask(dom, mask)
        visited |= fk.interface_membership(cfg, dom)
    est = fk.estimate_f(dom, emb, n_samples=500, seed=2)
    pockets = ~visited
    assert pockets.any()
    assert np.abs(est.mean[pockets]).max() == 0.0
    assert np.abs(exact.values[pockets]).max() == 0.0
    assert np.abs(est.stderr[pockets]).max() == 0.0


def test_estimate_f_deterministic():
    emb, bd, dom = rect_domain(2, 4)
    e1 = fk.estimate_f(dom, emb, n_samples=300, seed=9, chains=2)
    e2 = fk.estimate_f(dom, emb, n_samples=300, seed=9, chains=2)
    assert np.array_equal(e1.mean, e2.mean)
    assert np.array_equal(e1.stderr, e2.stderr)


# ---------------------------------------------------------------------------
# The square-integrated observable H


def test_build_h_boundary_values_and_range():
    for w, h in [(2, 4), (4, 4)]:
        emb, bd, dom = rect_domain(w, h)
        f = fk.exact_f(dom, emb)
        hv = fk.build_h(f, dom, emb)
        assert np.abs(hv[bd.primal_arc] - 1.0).max() <= 1e-10
        assert np.abs(hv[bd.dual_arc]).max() <= 1e-10
        assert hv.min() >= -1e-10 and hv.max() <= 1.0 + 1e-10


def test_build_h_is_isometry_invariant():
    emb, bd, dom = rect_domain(4, 4)
    hv = fk.build_h(fk.exact_f(dom, emb), dom, emb)
    lm = se.lorentz_rotation(0.7).compose(
        se.lorentz_translation([1.3, -0.4, 0.0]))
    for mapped in (lm, se.lorentz_boost(0.05, 0.3)):
        emb2 = se.apply_isometry(emb, mapped)
        hv2 = fk.build_h(fk.exact_f(dom, emb2), dom, emb2)
        assert np.abs(hv - hv2).max() <= 1e-12


def test_build_h_quarter_derivative_identity():
    for w, h in [(2, 4), (4, 4)]:
        emb, bd, dom = rect_domain(w, h)
        f = fk.exact_f(dom, emb)
        hv = fk.build_h(f, dom, emb)
        fq, _ = fk.observable_quad_field(f, emb)
        ds_h = np.conj(do.dbar_s_matrix(emb) @ hv.astype(complex))
        err = np.abs(ds_h - fq * fq / 4j)
        assert err[bd.free].max() <= 1e-10


def test_build_h_rejects_inconsistent_input():
    emb, bd, dom = rect_domain(2, 4)
    rng = np.random.default_rng(0)
    u = 1.0 / np.sqrt(emb.corner_dir)
    noise = CornerField(rng.normal(size=emb.graph.n_corners) * u,
                        emb.corner_dir.copy())
    with pytest.raises(MonodromyError):
        fk.build_h(noise, dom, emb)
    zero = CornerField(np.zeros(emb.graph.n_corners, dtype=complex),
                       emb.corner_dir.copy())
    with pytest.raises(ValueError, match="boundary"):
        fk.build_h(zero, dom, emb)


def test_build_h_accepts_monte_carlo_noise_with_stderr():
    emb, bd, dom = rect_domain(4, 4)
    est = fk.estimate_f(dom, emb, n_samples=4000, seed=11, chains=2)
    f_mc = CornerField(est.mean, emb.corner_dir.copy())
    with pytest.raises(ValueError):
        fk.build_h(f_mc, dom, emb)          # strict tolerance must balk
    h_mc = fk.build_h(f_mc, dom, emb, stderr=est.stderr)
    h_exact = fk.build_h(fk.exact_f(dom, emb), dom, emb)
    assert np.abs(h_mc - h_exact).max() <= 0.05
