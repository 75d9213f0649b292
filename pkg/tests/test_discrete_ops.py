"""Discrete derivative, Laplacian, and reconstruction tests."""

import numpy as np
import pytest

import sembedlab.discrete_ops as ops
import sembedlab.sembedding as se


@pytest.fixture(scope="module")
def flat():
    return se.flat_rect_embedding(6, 6, delta=0.25)


@pytest.fixture(scope="module")
def catenoid():
    return se.build_maximal_triangulation(se.catenoid_surface(1.0), 0.1)


@pytest.fixture(scope="module")
def tilted():
    return se.build_maximal_triangulation(se.tilted_surface(0.3, 0.15), 0.1)


def coherent_quad_field(emb, seed=0):
    """A nonconstant s-holomorphic quad field, solved from scratch.

    Corner projections taken along e^{i pi/4} n(c)^{-1/2} must agree
    between the two quads sharing each corner; the solution space of
    that homogeneous system contains the constants, and any other
    null vector is a genuine nonconstant example.
    """
    g = emb.graph
    u = np.exp(0.25j * np.pi) / np.sqrt(emb.corner_dir)
    shared = np.flatnonzero(g.corner_quads[:, 1] >= 0)
    a = np.zeros((len(shared), 2 * g.n_quads))
    for i, c in enumerate(shared):
        z0, z1 = (int(x) for x in g.corner_quads[c])
        a[i, 2 * z0] += u[c].real
        a[i, 2 * z0 + 1] += u[c].imag
        a[i, 2 * z1] -= u[c].real
        a[i, 2 * z1 + 1] -= u[c].imag
    _, sv, vt = np.linalg.svd(a)
    null = vt[len(sv[sv > 1e-10 * sv[0]]):]
    assert len(null) > 2, "patch too rigid to carry a nonconstant field"
    # project out the two constant solutions, then take a random mix
    consts = np.zeros((2, 2 * g.n_quads))
    consts[0, 0::2] = 1.0
    consts[1, 1::2] = 1.0
    consts /= np.linalg.norm(consts, axis=1, keepdims=True)
    rng = np.random.default_rng(seed)
    vec = null.T @ rng.standard_normal(len(null))
    for b in consts:
        vec -= (vec @ b) * b
    vec /= np.linalg.norm(vec)
    f = vec[0::2] + 1j * vec[1::2]

    # residual check: every shared corner sees one projection value
    t = np.real(f[g.corner_quads[:, 0]] * np.conj(u))
    t1 = np.real(f[g.corner_quads[shared, 1]] * np.conj(u[shared]))
    assert np.abs(t[shared] - t1).max() < 1e-10
    return f, t, u


def integrate_corner_steps(emb, t):
    """Vertex field H with H(primal) - H(dual) = len(c) t_c^2 per corner."""
    g = emb.graph
    step = emb.corner_len * t * t
    h = np.full(g.n_vertices, np.nan)
    h[0] = 0.0
    order = [0]
    adj = [[] for _ in range(g.n_vertices)]
    for c, (p, d) in enumerate(g.corners):
        adj[int(p)].append((int(d), -step[c]))
        adj[int(d)].append((int(p), step[c]))
    while order:
        v = order.pop()
        for w, ds in adj[v]:
            if np.isnan(h[w]):
                h[w] = h[v] + ds
                order.append(w)
    assert not np.isnan(h).any()
    # closure: the same walk along any other corner must agree
    p, d = g.corners[:, 0], g.corners[:, 1]
    assert np.abs(h[p] - h[d] - step).max() < 1e-10
    return h


# ---------------------------------------------------------------------------
# quad derivatives


def test_kernel_identities_flat(flat):
    g = flat.graph
    assert np.abs(ops.dbar_s(flat, np.ones(g.n_vertices, complex))).max() < 1e-12
    assert np.abs(ops.dbar_s(flat, flat.s)).max() < 1e-12
    assert np.abs(ops.dbar_s(flat, flat.q.astype(complex))).max() < 1e-12
    assert np.abs(ops.dbar_s(flat, np.conj(flat.s)) - 1.0).max() < 1e-12


@pytest.mark.parametrize("fixture", ["catenoid", "tilted"])
def test_kernel_identities_curved(request, fixture):
    emb = request.getfixturevalue(fixture)
    g = emb.graph
    assert np.abs(ops.dbar_s(emb, np.ones(g.n_vertices, complex))).max() < 1e-10
    assert np.abs(ops.dbar_s(emb, emb.s)).max() < 1e-10
    assert np.abs(ops.dbar_s(emb, emb.q.astype(complex))).max() < 1e-10
    assert np.abs(ops.dbar_s(emb, np.conj(emb.s)) - 1.0).max() < 1e-10


def test_d_s_of_s_is_one(flat, catenoid):
    for emb in (flat, catenoid):
        assert np.abs(ops.d_s(emb, emb.s) - 1.0).max() < 1e-10
        assert np.abs(ops.d_s(emb, np.ones(emb.graph.n_vertices, complex))).max() < 1e-10


def test_field_shape_rejected(flat):
    with pytest.raises(ValueError):
        ops.dbar_s(flat, np.ones(3, complex))


def test_normalization_translation_invariant(catenoid):
    mu = ops.quad_normalizations(catenoid)
    moved = se.apply_isometry(catenoid, se.lorentz_translation([12.5, -3.0, 0.8]))
    mu2 = ops.quad_normalizations(moved)
    assert np.abs(mu - mu2).max() < 1e-9


# ---------------------------------------------------------------------------
# fan derivative


def test_d_omega_constant_is_exactly_zero(catenoid):
    g = catenoid.graph
    k = np.full(g.n_quads, 2.3 - 0.7j)
    for v in np.flatnonzero(g.interior)[:20]:
        assert ops.d_omega(catenoid, k, int(v)) == 0.0


def test_d_omega_zero_field(catenoid):
    g = catenoid.graph
    v = int(np.flatnonzero(g.interior)[0])
    assert ops.d_omega(catenoid, np.zeros(g.n_quads, complex), v) == 0.0


def test_d_omega_boundary_rejected(flat):
    g = flat.graph
    v = int(np.flatnonzero(~g.interior)[0])
    with pytest.raises(ValueError, match="interior"):
        ops.d_omega(flat, np.zeros(g.n_quads, complex), v)


def test_d_omega_matches_matrix_composition():
    # 3 x 3 grid: a single interior vertex
    emb = se.flat_rect_embedding(2, 2, delta=0.5)
    g = emb.graph
    assert g.interior.sum() == 1
    v = int(np.flatnonzero(g.interior)[0])
    field = emb.s * np.conj(emb.s)
    k = ops.dbar_s(emb, field)
    composed = ops.d_omega_matrix(emb) @ ops.dbar_s_matrix(emb) @ field
    assert abs(ops.d_omega(emb, k, v) - composed[v]) < 1e-12


def test_dbar_omega_is_conjugate_variant(catenoid):
    g = catenoid.graph
    rng = np.random.default_rng(3)
    k = rng.standard_normal(g.n_quads) + 1j * rng.standard_normal(g.n_quads)
    v = int(np.flatnonzero(g.interior)[5])
    assert ops.dbar_omega(catenoid, k, v) == pytest.approx(
        complex(np.conj(ops.d_omega(catenoid, np.conj(k), v)))
    )


# ---------------------------------------------------------------------------
# Laplacian


def test_laplacian_real_symmetric_with_kernel(flat, catenoid):
    for emb in (flat, catenoid):
        lap = ops.assemble_s_laplacian(emb)
        assert lap.asymmetry < 1e-10
        assert lap.kernel_residual < 1e-10


def test_factorization_orderings_agree(catenoid):
    mw = ops.d_omega_matrix(catenoid)
    md = ops.dbar_s_matrix(catenoid)
    l1 = (-4.0 * (mw.conj() @ md)).tocsr()
    l2 = (-4.0 * (mw @ md.conj())).tocsr()
    gap = (l1 - l2).tocoo()
    assert (np.abs(gap.data).max() if gap.nnz else 0.0) < 1e-10


def test_flat_stencil_matches_hand_derivation(flat):
    # interior primal row: four same-type couplings sqrt(2)/spacing, no
    # cross couplings, diagonal -4x; dual rows carry the opposite sign
    g = flat.graph
    lap = ops.assemble_s_laplacian(flat)
    spacing = flat.delta * np.sqrt(2.0)
    a = np.sqrt(2.0) / spacing
    for v in np.flatnonzero(g.interior):
        v = int(v)
        primal = g.is_primal(v)
        sign = 1.0 if primal else -1.0
        row = dict(lap.stencil(v))
        same = {w: c for w, c in row.items() if g.is_primal(w) == primal and w != v}
        cross = {w: c for w, c in row.items() if g.is_primal(w) != primal}
        assert len(same) == 4
        for c in same.values():
            assert c == pytest.approx(sign * a, abs=1e-10)
        for c in cross.values():
            assert abs(c) < 1e-10
        assert row[v] == pytest.approx(-4 * sign * a, abs=1e-10)


def test_coupling_magnitude_matches_minkowski_product(catenoid):
    # for two corners of one quad at a common vertex, the product of
    # lengths times sin^2 of the half-angle equals minus half the
    # Minkowski inner product of the lifted corner vectors
    emb = catenoid
    g = emb.graph
    lifted = emb.lifted()
    for z in range(0, g.n_quads, 7):
        verts = g.quads[z]
        cs = g.quad_corners[z]
        # corner pairs at each vertex of the quad, per the fan layout
        at_vertex = [(verts[0], cs[0], cs[3]), (verts[2], cs[2], cs[1]),
                     (verts[1], cs[1], cs[0]), (verts[3], cs[3], cs[2])]
        for v, ca, cb in at_vertex:
            wa = int(g.corners[ca][0] if g.corners[ca][1] == v else g.corners[ca][1])
            wb = int(g.corners[cb][0] if g.corners[cb][1] == v else g.corners[cb][1])
            ea = emb.s[wa] - emb.s[v]
            eb = emb.s[wb] - emb.s[v]
            la, lb = abs(ea), abs(eb)
            cos_angle = np.real(ea * np.conj(eb)) / (la * lb)
            lhs = la * lb * 0.5 * (1.0 - cos_angle)
            da = lifted[wa] - lifted[v]
            db = lifted[wb] - lifted[v]
            mink = da[0] * db[0] + da[1] * db[1] - da[2] * db[2]
            assert lhs == pytest.approx(-0.5 * mink, abs=1e-10)


def test_entries_invariant_under_isometry(flat, catenoid):
    lm_flat = (
        se.lorentz_boost(0.3, 0.7)
        .compose(se.lorentz_rotation(0.8))
        .compose(se.lorentz_translation([0.4, -1.2, 0.3]))
    )
    lm_cat = (
        se.lorentz_boost(0.05, -0.4)
        .compose(se.lorentz_rotation(2.1))
        .compose(se.lorentz_translation([3.0, 0.5, -0.2]))
    )
    for emb, lm in ((flat, lm_flat), (catenoid, lm_cat)):
        lap = ops.assemble_s_laplacian(emb)
        lap2 = ops.assemble_s_laplacian(se.apply_isometry(emb, lm))
        diff = (lap.matrix - lap2.matrix).tocoo()
        scale = np.abs(lap.matrix.data).max()
        rel = (np.abs(diff.data).max() / scale) if diff.nnz else 0.0
        assert rel < 1e-8


def test_explicit_interior_subset_and_errors(flat):
    g = flat.graph
    inner = np.flatnonzero(g.interior)[:3]
    lap = ops.assemble_s_laplacian(flat, interior=inner)
    assert sorted(lap.interior) == sorted(int(v) for v in inner)
    assert lap.matrix.getrow(int(np.flatnonzero(g.interior)[4])).nnz == 0
    with pytest.raises(ValueError, match="interior"):
        ops.assemble_s_laplacian(flat, interior=[int(np.flatnonzero(~g.interior)[0])])


def test_stencil_matches_matrix(flat):
    lap = ops.assemble_s_laplacian(flat)
    v = int(lap.interior[0])
    row = lap.matrix.getrow(v).toarray().ravel()
    for w, coef in lap.stencil(v):
        assert row[w] == coef


def test_coordinate_text_roundtrip(flat):
    lap = ops.assemble_s_laplacian(flat)
    text = lap.coordinate_text()
    coo = lap.matrix.tocoo()
    lines = text.strip().splitlines()
    assert len(lines) == coo.nnz
    r, c, x = lines[0].split()
    assert lap.matrix[int(r), int(c)] == float(x)


# ---------------------------------------------------------------------------
# exact pairs: the derivative identity and the integral identity


def test_constant_pair_identities(flat, catenoid):
    w = 0.8 - 0.55j
    for emb in (flat, catenoid):
        h = np.imag(0.5 * (w * w * emb.s + 1j * abs(w) ** 2 * emb.q))
        f = np.full(emb.graph.n_quads, w)
        assert ops.check_discrete_integral(emb, f, h) < 1e-12
        assert np.abs(ops.d_s(emb, h.astype(complex)) - w * w / 4j).max() < 1e-10


def test_solved_pair_derivative_identity(flat):
    f, t, _ = coherent_quad_field(flat)
    h = integrate_corner_steps(flat, t)
    assert np.abs(ops.d_s(flat, h.astype(complex)) - f * f / 4j).max() < 1e-10


def test_solved_pair_derivative_identity_curved(catenoid):
    f, t, _ = coherent_quad_field(catenoid)
    h = integrate_corner_steps(catenoid, t)
    assert np.abs(ops.d_s(catenoid, h.astype(complex)) - f * f / 4j).max() < 1e-10


def test_solved_pair_integral_identity(flat, catenoid):
    for emb in (flat, catenoid):
        f, t, _ = coherent_quad_field(emb)
        h = integrate_corner_steps(emb, t)
        assert ops.check_discrete_integral(emb, f, h) < 1e-10


def test_integral_defect_grows_linearly(flat):
    g = flat.graph
    w = 0.9 + 0.3j
    h = np.imag(0.5 * (w * w * flat.s + 1j * abs(w) ** 2 * flat.q))
    f = np.full(g.n_quads, w)
    rng = np.random.default_rng(11)
    noise = rng.standard_normal(g.n_quads) + 1j * rng.standard_normal(g.n_quads)
    d1 = ops.check_discrete_integral(flat, f + 1e-3 * noise, h)
    d2 = ops.check_discrete_integral(flat, f + 2e-3 * noise, h)
    assert d1 > 1e-6
    assert d2 / d1 == pytest.approx(2.0, rel=0.15)


def test_trivial_integral_cases(flat):
    g = flat.graph
    assert ops.check_discrete_integral(
        flat, np.zeros(g.n_quads, complex), np.full(g.n_vertices, 3.7)
    ) == 0.0


# ---------------------------------------------------------------------------
# positivity


def test_positivity_of_solved_pair(flat, catenoid):
    for emb in (flat, catenoid):
        f, t, _ = coherent_quad_field(emb)
        h = integrate_corner_steps(emb, t)
        lap = ops.assemble_s_laplacian(emb)
        assert ops.check_s_positivity(lap, h) > -1e-10
        # generic fields are strictly positive somewhere, so the flipped
        # sign must fail
        vals = (lap.matrix @ h)[lap.interior]
        assert vals.max() > 1e-8
        assert ops.check_s_positivity(lap, -h) < -1e-8


def test_positivity_kernel_field(catenoid):
    lap = ops.assemble_s_laplacian(catenoid)
    assert abs(ops.check_s_positivity(lap, catenoid.q)) < 1e-10


# ---------------------------------------------------------------------------
# reconstruction


def test_reconstruct_exact_projections(catenoid):
    g = catenoid.graph
    rng = np.random.default_rng(5)
    for z in rng.choice(g.n_quads, 12, replace=False):
        n = catenoid.corner_dir[g.quad_corners[int(z)]]
        w = complex(*rng.standard_normal(2))
        u = 1.0 / np.sqrt(n)
        values = np.real(w * np.conj(u)) * u
        f, res = ops.reconstruct_f_on_quad(values, n)
        assert abs(f - w) < 1e-10
        assert res < 1e-12


def test_reconstruct_inconsistent_values_flagged(catenoid):
    g = catenoid.graph
    n = catenoid.corner_dir[g.quad_corners[0]]
    u = 1.0 / np.sqrt(n)
    values = np.real((1.3 - 0.2j) * np.conj(u)) * u
    values[2] += 0.05 * u[2]
    _, res = ops.reconstruct_f_on_quad(values, n)
    assert res > 1e-3


def test_reconstruct_coincident_lines_rejected():
    n = np.full(4, np.exp(0.3j * np.pi))
    u = 1.0 / np.sqrt(n)
    values = np.real((0.4 + 0.1j) * np.conj(u)) * u
    with pytest.raises(ValueError, match="coincide"):
        ops.reconstruct_f_on_quad(values, n)


def test_projection_consistency_for_any_quad_field(catenoid):
    g = catenoid.graph
    rng = np.random.default_rng(7)
    vals = rng.standard_normal(g.n_quads) + 1j * rng.standard_normal(g.n_quads)
    for z in range(0, g.n_quads, 37):
        n = catenoid.corner_dir[g.quad_corners[z]]
        u = 1.0 / np.sqrt(n)
        proj = np.real(vals[z] * np.conj(u)) * u
        f, res = ops.reconstruct_f_on_quad(proj, n)
        assert abs(f - vals[z]) < 1e-12
        assert res < 1e-12


# ---------------------------------------------------------------------------
# corner fields and regularity


def test_corner_field_line_residuals(catenoid):
    f, t, _ = coherent_quad_field(catenoid)
    u0 = 1.0 / np.sqrt(catenoid.corner_dir)
    cf = ops.CornerField.on_embedding(catenoid, t * u0)
    assert cf.max_line_residual() < 1e-12
    off = ops.CornerField.on_embedding(catenoid, t * u0 + 0.1j * u0)
    assert off.max_line_residual() > 1e-3


def test_regularity_of_zero_field(catenoid):
    g = catenoid.graph
    cf = ops.CornerField.on_embedding(catenoid, np.zeros(g.n_corners, complex))
    rep = ops.measure_regularity(cf, catenoid, 0.0 + 0.0j, [0.3, 0.6])
    assert rep.c == 0.0
    assert rep.beta == 0.0


def test_regularity_reports_finite_constants(catenoid):
    f, t, _ = coherent_quad_field(catenoid)
    u0 = 1.0 / np.sqrt(catenoid.corner_dir)
    cf = ops.CornerField.on_embedding(catenoid, t * u0)
    rep = ops.measure_regularity(cf, catenoid, 0.0 + 0.0j, [0.4, 0.8])
    assert rep.c > 0.0
    assert np.isfinite(rep.beta)
    assert len(rep.per_radius) == 2
    assert all(np.isfinite(c) for _, c in rep.per_radius)
