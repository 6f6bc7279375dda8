import numpy as np
import pytest

from holofid import (NoiseSpec, abelian_test_connection, build_basis,
                     decompose, fidelity_overlap, first_order_fidelity,
                     mc_fidelity, pauli_connection, square_loop,
                     smallness_parameter, van_kampen_fidelity)

SQRT2 = np.sqrt(2.0)


def register_state(basis):
    return decompose(np.diag([1.0] + [0.0] * (basis.n - 1)), basis)


# ---------------------------------------------------------------------------
# fidelity_overlap
# ---------------------------------------------------------------------------

def test_overlap_identical_pure_states():
    basis = build_basis(2)
    rho = register_state(basis)
    assert fidelity_overlap(rho, rho) == pytest.approx(1.0, abs=1e-12)


def test_overlap_orthogonal_pure_states():
    basis = build_basis(2)
    up = decompose(np.diag([1.0, 0.0]), basis)
    down = decompose(np.diag([0.0, 1.0]), basis)
    assert fidelity_overlap(up, down) == pytest.approx(0.0, abs=1e-12)


def test_overlap_maximally_mixed():
    basis = build_basis(3)
    mixed = decompose(np.eye(3) / 3.0, basis)
    pure = register_state(basis)
    assert fidelity_overlap(mixed, pure) == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_overlap_matches_trace_and_is_symmetric():
    basis = build_basis(2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        probs = rng.dirichlet([1, 1])
        u = np.linalg.qr(rng.standard_normal((2, 2))
                         + 1j * rng.standard_normal((2, 2)))[0]
        rho_a = u @ np.diag(probs) @ u.conj().T
        rho_b = np.diag(rng.dirichlet([1, 1]))
        cva, cvb = decompose(rho_a, basis), decompose(rho_b, basis)
        assert fidelity_overlap(cva, cvb) == pytest.approx(
            np.trace(rho_a @ rho_b).real, abs=1e-12)
        assert fidelity_overlap(cva, cvb) == fidelity_overlap(cvb, cva)


def test_overlap_rejects_mismatched_dimensions():
    with pytest.raises(ValueError):
        fidelity_overlap(register_state(build_basis(2)),
                         register_state(build_basis(3)))


# ---------------------------------------------------------------------------
# smallness diagnostic
# ---------------------------------------------------------------------------

def test_smallness_parameter_reference_points():
    conn = pauli_connection()
    loop = square_loop(10.0)
    s1 = smallness_parameter(conn, loop, NoiseSpec(n_err=400, sigma=0.3))
    assert s1 == pytest.approx(0.12, abs=1e-12)
    s2 = smallness_parameter(conn, loop, NoiseSpec(n_err=100, sigma=0.15))
    assert s2 == pytest.approx(0.24, abs=1e-12)
    assert smallness_parameter(conn, loop, NoiseSpec(n_err=400, sigma=0.0)) == 0.0


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def test_mc_zero_noise_returns_unit_fidelity():
    conn = pauli_connection()
    basis = conn.basis
    est = mc_fidelity(conn, square_loop(2.0), register_state(basis),
                      NoiseSpec(n_err=32, sigma=0.0, seed=5), 8, basis)
    assert est.mean == pytest.approx(1.0, abs=1e-8)
    assert est.stderr == 0.0
    assert est.method == "monte_carlo"


def test_mc_rejects_too_few_samples():
    conn = pauli_connection()
    with pytest.raises(ValueError):
        mc_fidelity(conn, square_loop(1.0), register_state(conn.basis),
                    NoiseSpec(n_err=8, sigma=0.1), 1)


def test_mc_is_deterministic_per_seed():
    conn = pauli_connection()
    basis = conn.basis
    loop = square_loop(2.0)
    spec = NoiseSpec(n_err=40, sigma=0.08, seed=123)
    a = mc_fidelity(conn, loop, register_state(basis), spec, 24, basis)
    b = mc_fidelity(conn, loop, register_state(basis), spec, 24, basis)
    assert a.mean == b.mean and a.stderr == b.stderr
    c = mc_fidelity(conn, loop, register_state(basis),
                    NoiseSpec(n_err=40, sigma=0.08, seed=124), 24, basis)
    assert c.mean != a.mean


def test_mc_bit_stable_across_worker_counts():
    conn = pauli_connection()
    basis = conn.basis
    loop = square_loop(2.0)
    spec = NoiseSpec(n_err=40, sigma=0.1, seed=7)
    serial = mc_fidelity(conn, loop, register_state(basis), spec, 30, basis,
                         n_workers=1)
    pooled = mc_fidelity(conn, loop, register_state(basis), spec, 30, basis,
                         n_workers=3)
    assert serial.mean == pooled.mean
    assert serial.stderr == pooled.stderr


def test_mc_sample_values_respect_overlap_bounds():
    from holofid.fidelity_lab import _McContext, _chunk_size, _mc_block, _batch_bloch
    from holofid.param_geometry import arc_length_params, fit_closed_spline
    conn = pauli_connection()
    basis = conn.basis
    loop = square_loop(2.0)
    spec = NoiseSpec(n_err=40, sigma=0.15, seed=9)
    rho0 = register_state(basis).coeffs
    knots = loop.eval(arc_length_params(loop, spec.n_err))
    baseline = fit_closed_spline(knots)
    steps = 1600
    ref, _ = _batch_bloch(conn, [baseline], rho0, steps)
    ref = ref[0] * (np.linalg.norm(rho0) / np.linalg.norm(ref[0]))
    ctx = _McContext(conn=conn, seed=spec.seed, sigma=spec.sigma,
                     n_err=spec.n_err, dim=2, n_hilbert=2, base_knots=knots,
                     rho0=rho0, rho_ref=ref, steps=steps, tol=1e-8,
                     max_refine=6, chunk=_chunk_size(steps, 2))
    values = _mc_block(ctx, 0, 50)
    radius = float(rho0 @ rho0)
    assert np.all(values <= 0.5 + radius + 1e-8)
    assert np.all(values >= 0.5 - radius - 1e-8)


def test_mc_engine_matches_public_pipeline():
    # the vectorized engine must agree with the documented composition:
    # perturb_loop -> transport_bloch along the perturbed loop -> overlap
    from holofid import (CoeffVector, fit_closed_spline, perturb_loop,
                         realization_rng, transport_bloch)
    from holofid.fidelity_lab import (_McContext, _batch_bloch, _chunk_size,
                                      _mc_block)
    from holofid.param_geometry import arc_length_params
    conn = pauli_connection()
    basis = conn.basis
    loop = square_loop(2.0)
    spec = NoiseSpec(n_err=40, sigma=0.08, seed=13)
    rho_in = register_state(basis)
    rho0 = rho_in.coeffs
    knots = loop.eval(arc_length_params(loop, spec.n_err))
    baseline = fit_closed_spline(knots)
    steps = 1600
    ref, _ = _batch_bloch(conn, [baseline], rho0, steps)
    ref = ref[0] * (np.linalg.norm(rho0) / np.linalg.norm(ref[0]))
    ctx = _McContext(conn=conn, seed=spec.seed, sigma=spec.sigma,
                     n_err=spec.n_err, dim=2, n_hilbert=2, base_knots=knots,
                     rho0=rho0, rho_ref=ref, steps=steps, tol=1e-8,
                     max_refine=6, chunk=_chunk_size(steps, 2))
    engine_values = _mc_block(ctx, 0, 3)
    ref_cv = CoeffVector(0.5, ref)
    for idx in range(3):
        real = perturb_loop(loop, spec, realization_rng(spec.seed, idx))
        rho_out = transport_bloch(conn, real.perturbed, rho_in,
                                  tol=1e-10).bloch_final
        f = fidelity_overlap(CoeffVector(0.5, rho_out), ref_cv)
        assert abs(f - engine_values[idx]) < 1e-6


def test_mc_mean_bounds_and_estimate_fields():
    conn = pauli_connection()
    basis = conn.basis
    est = mc_fidelity(conn, square_loop(2.0), register_state(basis),
                      NoiseSpec(n_err=40, sigma=0.12, seed=2), 40, basis)
    assert est.mean <= 1.0 + 1e-8
    assert est.mean >= 0.0 - 1e-8
    assert est.stderr > 0.0
    assert est.n_samples == 40
    assert est.smallness == pytest.approx(4.0 * 0.12 * 0.2, abs=1e-12)


# ---------------------------------------------------------------------------
# first-order prediction
# ---------------------------------------------------------------------------

def test_first_order_zero_field_is_exact_unity():
    conn = pauli_connection()
    basis = conn.basis
    est = first_order_fidelity(conn, square_loop(2.0), register_state(basis),
                               lambda s: np.zeros(2), basis)
    assert est.mean == pytest.approx(1.0, abs=1e-12)
    assert est.stderr == 0.0
    assert est.method == "first_order"


def test_first_order_requires_vanishing_start():
    conn = pauli_connection()
    with pytest.raises(ValueError):
        first_order_fidelity(conn, square_loop(1.0),
                             register_state(conn.basis),
                             lambda s: np.array([0.1, 0.0]), conn.basis)


def test_first_order_abelian_connection_keeps_aligned_state():
    # the commuting generator only rotates the transverse coefficient plane,
    # so a register state aligned with it keeps fidelity one for any field
    g = lambda x: 0.3 * x
    conn = abelian_test_connection(g, dg=lambda x: 0.3)
    basis = conn.basis

    def delta(s):
        t = 2.0 * np.pi * s
        return 0.1 * np.array([1.0 - np.cos(t), np.sin(t)])

    est = first_order_fidelity(conn, square_loop(2.0), register_state(basis),
                               delta, basis)
    assert est.mean == pytest.approx(1.0, abs=1e-9)


def test_first_order_matches_displaced_loop_transport():
    from holofid import ParamLoop, transport_bloch
    conn = pauli_connection()
    basis = conn.basis
    loop = square_loop(4.0)
    rho_in = register_state(basis)
    amp = 0.05

    def delta(s):
        t = 2.0 * np.pi * np.asarray(s, dtype=float)
        return np.stack([amp * (1.0 - np.cos(t)),
                         0.7 * amp * np.sin(2.0 * t)], axis=-1)

    def ddelta(s):
        t = 2.0 * np.pi * np.asarray(s, dtype=float)
        return 2.0 * np.pi * np.stack([amp * np.sin(t),
                                       1.4 * amp * np.cos(2.0 * t)], axis=-1)

    approx = first_order_fidelity(conn, loop, rho_in, lambda s: delta(float(s)),
                                  basis)
    displaced = ParamLoop(2, lambda s: loop.eval(s) + delta(s),
                          lambda s: loop.tangent(s) + ddelta(s),
                          breakpoints=(0.25, 0.5, 0.75))
    rho_disp = transport_bloch(conn, displaced, rho_in, tol=1e-10).bloch_final
    rho_ref = transport_bloch(conn, loop, rho_in, tol=1e-10).bloch_final
    exact = 0.5 + float(rho_disp @ rho_ref)
    assert abs(approx.mean - exact) < 5e-3


# ---------------------------------------------------------------------------
# second-order (van Kampen) prediction
# ---------------------------------------------------------------------------

def test_van_kampen_zero_noise_is_unity():
    conn = pauli_connection()
    basis = conn.basis
    est = van_kampen_fidelity(conn, square_loop(2.0), register_state(basis),
                              NoiseSpec(n_err=32, sigma=0.0), basis)
    assert est.mean == pytest.approx(1.0, abs=1e-12)
    assert est.stderr == 0.0
    assert est.method == "van_kampen"


def test_van_kampen_flat_connection_is_noise_immune():
    conn = abelian_test_connection(
        lambda x: np.full(np.shape(x), 0.7), dg=lambda x: 0.0)
    basis = conn.basis
    est = van_kampen_fidelity(conn, square_loop(2.0), register_state(basis),
                              NoiseSpec(n_err=64, sigma=0.4), basis)
    assert est.mean == pytest.approx(1.0, abs=1e-10)


def test_van_kampen_generator_is_negative_semidefinite():
    from holofid import sample_path, shifted_curvature_sweep
    conn = pauli_connection()
    loop = square_loop(4.0)
    grid = sample_path(loop, 512)
    sweep = shifted_curvature_sweep(conn, loop, grid)
    contracted = np.einsum("km,kmaij->kaij", grid.tangents, sweep.adjoints)
    speed = np.linalg.norm(grid.tangents, axis=1)
    mats = (0.5 * 0.1 * 0.01 / speed)[:, None, None] \
        * np.einsum("kaij,kajl->kil", contracted, contracted)
    mats = 0.5 * (mats + mats.transpose(0, 2, 1))
    eigs = np.linalg.eigvalsh(mats)
    assert np.max(eigs) < 1e-12


def test_van_kampen_below_unity_and_deterministic():
    conn = pauli_connection()
    basis = conn.basis
    spec = NoiseSpec(n_err=160, sigma=0.1)
    a = van_kampen_fidelity(conn, square_loop(4.0), register_state(basis),
                            spec, basis)
    b = van_kampen_fidelity(conn, square_loop(4.0), register_state(basis),
                            spec, basis)
    assert a.mean == b.mean
    assert a.mean < 1.0
    assert a.mean > 0.5


def test_van_kampen_warns_outside_validated_regime():
    conn = pauli_connection()
    basis = conn.basis
    spec = NoiseSpec(n_err=40, sigma=0.3)  # smallness 4 * 0.3 * 0.4 = 0.48
    with pytest.warns(UserWarning, match="smallness"):
        van_kampen_fidelity(conn, square_loop(4.0), register_state(basis),
                            spec, basis)


def test_cross_method_agreement_inside_validity():
    # the second-order prediction tracks Monte Carlo when sigma is well
    # below the knot spacing (here sigma / lambda_c = 0.5)
    conn = pauli_connection()
    basis = conn.basis
    loop = square_loop(4.0)
    spec = NoiseSpec(n_err=160, sigma=0.05, seed=31)
    mc = mc_fidelity(conn, loop, register_state(basis), spec, 300, basis)
    th = van_kampen_fidelity(conn, loop, register_state(basis), spec, basis)
    assert abs(mc.mean - th.mean) <= max(3.0 * mc.stderr, 0.02)
