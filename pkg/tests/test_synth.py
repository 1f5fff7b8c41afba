import math
from dataclasses import replace

import numpy as np
import pytest

from cbcsos import sdpbackend, verify
from cbcsos.polyalg import Polynomial, variables
from cbcsos.sosprog import BilinearError
from cbcsos.synth import (CONVERGED, ControlAffineSystem, ProblemError, RiccatiError, SemialgebraicUnion,
                          SynthesisConfig, X0Spec, build_theorem2_program, care_residual, care_solve,
                          enlarge_step, lqr_init, refine_step, solve_barrier_program, synthesize)
from oracles import care_double_integrator


def double_integrator():
    x1, x2 = variables(2)
    return ControlAffineSystem.with_box([x2, Polynomial.zero(2)], [[Polynomial.zero(2)], [Polynomial.constant(2, 1.0)]],
                                        [-1.0], [1.0])


def single_integrator():
    return ControlAffineSystem.with_box([Polynomial.zero(1)], [[Polynomial.constant(1, 1.0)]], [-1.0], [1.0])


# -- CARE ------------------------------------------------------------------------

def test_care_double_integrator():
    P = care_solve(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]), np.eye(2), np.eye(1))
    assert np.linalg.norm(P - care_double_integrator()) <= 1e-8


@pytest.mark.parametrize("a,expected", [(0.0, 1.0), (-1.0, math.sqrt(2) - 1)])
def test_care_scalar(a, expected):
    P = care_solve(np.array([[a]]), np.eye(1), np.eye(1), np.eye(1))
    assert abs(P[0, 0] - expected) <= 1e-10


def test_care_not_stabilizable():
    with pytest.raises(RiccatiError):
        care_solve(np.eye(2), np.array([[1.0], [0.0]]), np.eye(2), np.eye(1))


def test_care_random_residuals(rng):
    for _ in range(10):
        n = int(rng.integers(1, 5))
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, 1 + n // 2))
        P = care_solve(A, B, np.eye(n), np.eye(B.shape[1]))
        assert np.linalg.norm(care_residual(A, B, np.eye(n), np.eye(B.shape[1]), P)) <= 1e-8 * (1 + np.linalg.norm(P))
        assert np.linalg.eigvalsh(P).min() >= -1e-10


# -- LQR initialization ----------------------------------------------------------

def test_lqr_init_double_integrator():
    init = lqr_init(double_integrator(), [0.0, 0.0], SynthesisConfig(delta=1.0))
    r3 = math.sqrt(3.0)
    expected = {(0, 0): 1.0, (2, 0): -r3, (1, 1): -2.0, (0, 2): -r3}
    assert set(init.b0.terms) == set(expected)
    for m, c in expected.items():
        assert init.b0.coefficient(m) == pytest.approx(c, abs=1e-9)
    np.testing.assert_allclose(init.K, [[1.0, r3]], atol=1e-9)


def test_lqr_init_not_equilibrium():
    x1, x2 = variables(2)
    sys_ = ControlAffineSystem.with_box([x2 + 1, Polynomial.zero(2)],
                                        [[Polynomial.zero(2)], [Polynomial.constant(2, 1.0)]], [-1.0], [1.0])
    with pytest.raises(ProblemError):
        lqr_init(sys_, [0.0, 0.0], SynthesisConfig(delta=1.0))


def test_lqr_init_vdp_auto_delta(vdp):
    init = lqr_init(vdp.system, vdp.x_eq, vdp.config, vdp.unsafe, vdp.domain)
    grid = verify.grid_eval(init.b0, [[-3, 3], [-3, 3]], 301)
    inside = grid.points()[grid.values.ravel() >= 0]
    assert len(inside) and np.all(np.abs(inside) < 2.0)
    for i in range(len(vdp.unsafe)):
        assert not np.any(vdp.unsafe.member_mask(i, inside))


def test_unsafe_covering_equilibrium(vdp):
    x1, x2 = variables(2)
    unsafe = SemialgebraicUnion([[x1 ** 2 + x2 ** 2 - 0.25]])
    with pytest.raises(ProblemError):
        synthesize(vdp.system, unsafe, vdp.config, domain=vdp.domain)


# -- single programs -------------------------------------------------------------

def test_theorem2_init_feasible_and_certified(vdp):
    init = lqr_init(vdp.system, vdp.x_eq, vdp.config, vdp.unsafe, vdp.domain)
    t2 = build_theorem2_program(vdp.system, vdp.unsafe, None, init.b0, vdp.config)
    out = solve_barrier_program(t2, vdp.config)
    assert out.ok
    grams = out.result.grams
    for name in ("input_1", "input_2", "invariance"):
        assert grams[name].residual <= 1e-6 and grams[name].min_eigenvalue >= -1e-7
    rep = sdpbackend.validate(t2.program.compile().sdp, out.result.sdp_solution)
    assert rep.passed


def test_two_inequality_component_gets_two_multipliers(vdp):
    x1, x2 = variables(2)
    unsafe = SemialgebraicUnion([[x1 - 1.5, -x1 + 1.2], [-x2 + 3]])
    init = lqr_init(vdp.system, vdp.x_eq, replace(vdp.config, delta=0.5), unsafe, vdp.domain)
    t2 = build_theorem2_program(vdp.system, unsafe, None, init.b0, vdp.config)
    assert [len(c) for c in t2.sigma] == [2, 1]
    assert {"sigma_1_1", "sigma_1_2", "sigma_2_1"} <= set(t2.program.poly_vars)


def test_initial_set_with_phi_equal_b0(vdp):
    init = lqr_init(vdp.system, vdp.x_eq, vdp.config, vdp.unsafe, vdp.domain)
    t2 = build_theorem2_program(vdp.system, vdp.unsafe, X0Spec(init.b0), init.b0, vdp.config)
    assert any(c.name == "initial_set" for c in t2.program.constraints)
    assert solve_barrier_program(t2, vdp.config).ok


def test_unknown_b_and_unknown_u_is_bilinear(vdp):
    with pytest.raises(BilinearError):
        build_theorem2_program(vdp.system, vdp.unsafe, None, None, vdp.config)


def test_first_enlargement(vdp):
    cfg = vdp.config
    init = lqr_init(vdp.system, vdp.x_eq, cfg, vdp.unsafe, vdp.domain)
    t2 = solve_barrier_program(build_theorem2_program(vdp.system, vdp.unsafe, None, init.b0, cfg), cfg)
    s = init.b0.max_abs_coeff()
    enl = enlarge_step(init.b0 / s, t2.values["u"], [l * s for l in t2.values["lambda1"]], t2.values["lambda2"],
                       vdp.system, vdp.unsafe, cfg)
    assert enl.ok and enl.gamma > 0
    res = enl.record["residuals"]
    assert res["max_eq_residual"] <= 1e-6 and res["min_eigenvalue"] >= -1e-6
    f0, f1 = (verify.grid_eval(b, vdp.domain, 201) for b in (init.b0, enl.values["b"]))
    assert verify.contains(f0, f1)


def test_refine_single_integrator():
    x, = variables(1)
    out = refine_step(1 - x ** 2, single_integrator(), SynthesisConfig(deg_u=1, deg_lambda1=2, deg_lambda2=2))
    assert out.ok
    u = out.values["u"][0]
    # any returned u must push inward at x = +-1 and respect |u| <= 1 there
    assert u.evaluate([1.0]) <= 1e-6 and u.evaluate([-1.0]) >= -1e-6
    assert abs(u.evaluate([1.0])) <= 1 + 1e-6


def test_refine_empty_safe_set():
    out = refine_step(Polynomial.constant(1, -1.0), single_integrator(), SynthesisConfig())
    assert out.ok


# -- full alternation ------------------------------------------------------------

def test_vdp_converges(vdp, vdp_cert):
    assert vdp_cert.status == CONVERGED
    assert len(vdp_cert.gamma_history) >= 1 and all(g > 0 for g in vdp_cert.gamma_history)
    assert vdp_cert.gamma_history[-1] <= vdp.config.gamma_threshold
    assert len(vdp_cert.iterates) == len(vdp_cert.gamma_history) + 1


def test_vdp_final_set_strictly_contains_ellipse(vdp, vdp_cert):
    f0 = verify.grid_eval(vdp_cert.iterates[0], vdp.domain, 201)
    fN = verify.grid_eval(vdp_cert.b, vdp.domain, 201)
    assert verify.contains(f0, fN)
    assert verify.set_area(fN) > verify.set_area(f0)


def test_monotone_enlargement_gap(vdp, vdp_cert):
    for k, gamma in enumerate(vdp_cert.gamma_history):
        prev, nxt = vdp_cert.iterates[k], vdp_cert.iterates[k + 1]
        pts = verify.boundary_points(prev, vdp.domain, 100, seed=k)
        assert np.all(nxt(pts) >= gamma - 1e-6)


def test_unsafe_exclusion_every_iterate(vdp, vdp_cert):
    for b in vdp_cert.iterates:
        for chk in verify.sample_unsafe_max(b, vdp.unsafe, 10_000, vdp.sample_box, seed=0):
            assert chk.max_b <= -vdp.config.eps + 1e-6


def test_refined_controller_within_bounds_on_boundary(vdp, vdp_cert):
    out = refine_step(vdp_cert.b, vdp.system, vdp.config)
    assert out.ok
    pts = verify.boundary_points(vdp_cert.b, vdp.domain, 200, seed=3)
    assert np.all(np.abs(out.values["u"][0](pts)) <= 1 + 1e-6)
    for name in ("input_1", "input_2", "invariance"):
        cert = out.result.grams[name]
        assert cert.residual <= 1e-6 and cert.min_eigenvalue >= -1e-7


def test_infinite_threshold_single_iteration(vdp):
    cfg = replace(vdp.config, gamma_threshold=math.inf)
    cert = synthesize(vdp.system, vdp.unsafe, cfg, domain=vdp.domain)
    assert cert.status == CONVERGED and len(cert.gamma_history) == 1
    assert [r["step"] for r in cert.log] == ["init", "enlarge"]


def test_config_validation():
    with pytest.raises(ValueError):
        SynthesisConfig(eps=0.0)
    with pytest.raises(ValueError):
        SynthesisConfig(gamma_threshold=-1.0)
    with pytest.raises(ValueError):
        SynthesisConfig(deg_b=-2)
