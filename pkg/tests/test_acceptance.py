"""Acceptance criteria, one test each.

Every test records a single ``criterion N [PASS|FAIL] ...`` line; the lines
are printed as they are produced and again in the pytest terminal summary.
Run directly (``python3 tests/test_acceptance.py``) to get only the lines.
"""

import math
import time

import numpy as np
import pytest

from cbcsos import sdpbackend, verify
from cbcsos.io import fixture_path, load_certificate, load_problem
from cbcsos.polyalg import Polynomial
from cbcsos.runtime import CbcQpController, SafetyFilter, nominal_pd, simulate
from cbcsos.sosprog import SosProgram, check_sos
from cbcsos.synth import (CONVERGED, build_enlarge_program, build_theorem2_program, care_residual, care_solve,
                          enlarge_step, lqr_init, solve_barrier_program, synthesize)
from cbcsos.synth.lqr import is_stabilizable
from oracles import care_double_integrator, motzkin, negative_somewhere, random_sos

RESULTS: list[str] = []


def record(n: int, title: str, ok: bool, detail: str, elapsed: float, budget: float) -> None:
    within = elapsed <= budget
    line = (f"criterion {n} [{'PASS' if ok and within else 'FAIL'}] {title}: {detail} "
            f"({elapsed:.1f} s, budget {budget:.0f} s)")
    RESULTS.append(line)
    print(line)
    assert ok, line
    assert within, line


_cache: dict = {}


def vdp():
    if "problem" not in _cache:
        _cache["problem"] = load_problem(fixture_path("vanderpol.json"))
    return _cache["problem"]


def vdp_synthesis():
    if "cert" not in _cache:
        p = vdp()
        t0 = time.perf_counter()
        _cache["cert"] = synthesize(p.system, p.unsafe, p.config, p.x0, p.domain)
        _cache["synth_time"] = time.perf_counter() - t0
    return _cache["cert"], _cache["synth_time"]


def first_enlargement_inputs():
    p = vdp()
    init = lqr_init(p.system, p.x_eq, p.config, p.unsafe, p.domain)
    out = solve_barrier_program(build_theorem2_program(p.system, p.unsafe, None, init.b0, p.config), p.config)
    assert out.ok
    s = init.b0.max_abs_coeff()
    return init.b0 / s, out.values["u"], [l * s for l in out.values["lambda1"]], out.values["lambda2"]


def test_criterion_1_published_certificate_negative_on_unsafe_sets():
    t0 = time.perf_counter()
    p = vdp()
    b = load_certificate(fixture_path("appendix_a_cbc.json"), 2).b
    checks = verify.sample_unsafe_max(b, p.unsafe, 10_000, p.sample_box, seed=p.config.seed)
    ok = all(c.samples == 10_000 and c.max_b < 0 for c in checks)
    detail = "max b per component = [" + ", ".join(f"{c.max_b:.4g}" for c in checks) + "]"
    record(1, "published certificate negative on X_u1..X_u5", ok, detail, time.perf_counter() - t0, 5)


def test_criterion_2_published_boundary_feasibility():
    t0 = time.perf_counter()
    p = vdp()
    b = load_certificate(fixture_path("appendix_a_cbc.json"), 2).b
    pts = verify.boundary_points(b, p.domain, 500, seed=p.config.seed)
    chk = verify.boundary_feasibility(b, p.system, pts, eta=0.0, lp_tol=1e-6)
    ok = len(pts) == 500 and np.all(np.abs(b(pts)) <= 1e-8) and chk.feasible_fraction == 1.0
    detail = f"{len(pts)} points, feasible fraction {chk.feasible_fraction:.4f}, worst margin {chk.worst_margin:.4g}"
    record(2, "published certificate boundary LP feasibility", ok, detail, time.perf_counter() - t0, 30)


def test_criterion_3_sos_oracle_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_res, worst_eig, sos_ok = 0.0, np.inf, 0
    for k in range(20):
        nvars, half = 2 + k % 2, 1 + k % 3  # degrees 2, 4, 6 in 2 and 3 variables
        out = check_sos(random_sos(rng, nvars, half))
        if out.feasible:
            sos_ok += 1
            worst_res = max(worst_res, out.certificate.residual)
            worst_eig = min(worst_eig, out.certificate.min_eigenvalue)
    mot = check_sos(motzkin())
    prog = SosProgram(2)
    prog.add_sos_constraint(motzkin())
    mot_ext = sdpbackend.solve_sdpa_cvxopt(sdpbackend.read_sdpa(sdpbackend.export_sdpa(prog.compile().sdp)))
    neg_rejected = 0
    for k in range(10):
        p, x = negative_somewhere(rng, 2 + k % 2, 2 * (1 + k % 3))
        assert p.evaluate(x) == pytest.approx(-1.0)
        neg_rejected += check_sos(p).status == sdpbackend.INFEASIBLE
    ok = (sos_ok == 20 and worst_res <= 1e-6 and worst_eig >= -1e-7 and mot.status == sdpbackend.INFEASIBLE
          and mot_ext.status == sdpbackend.INFEASIBLE and neg_rejected == 10)
    detail = (f"SOS accepted {sos_ok}/20 (max residual {worst_res:.1e}, min eig {worst_eig:.1e}), "
              f"Motzkin {mot.status} / external {mot_ext.status}, negative polys rejected {neg_rejected}/10")
    record(3, "SOS oracle suite", ok, detail, time.perf_counter() - t0, 60)


def test_criterion_4_vanderpol_end_to_end():
    cert, synth_time = vdp_synthesis()
    t0 = time.perf_counter()
    p = vdp()
    fields = [verify.grid_eval(b, [[-2, 2], [-2, 2]], 201) for b in cert.iterates]
    contain = all(verify.contains(a, b) for a, b in zip(fields, fields[1:]))
    a0, aN = verify.set_area(fields[0]), verify.set_area(fields[-1])
    unsafe = verify.sample_unsafe_max(cert.b, p.unsafe, 10_000, p.sample_box, seed=p.config.seed)
    pts = verify.boundary_points(cert.b, p.domain, 500, seed=p.config.seed)
    bnd = verify.boundary_feasibility(cert.b, p.system, pts)
    ok = (cert.status == CONVERGED and len(cert.gamma_history) > 0 and all(g > 0 for g in cert.gamma_history)
          and contain and aN >= 2 * a0 and all(c.max_b < 0 for c in unsafe) and len(pts) == 500
          and bnd.feasible_fraction == 1.0)
    detail = (f"status {cert.status} after {len(cert.gamma_history)} enlargements, min gamma "
              f"{min(cert.gamma_history):.2e}, containment {contain}, area {a0:.3f} -> {aN:.3f} "
              f"({aN / a0:.2f}x), unsafe max {max(c.max_b for c in unsafe):.3g}, "
              f"boundary fraction {bnd.feasible_fraction:.4f}")
    record(4, "Van der Pol synthesis", ok, detail, synth_time + time.perf_counter() - t0, 600)


def test_criterion_5_trajectory_invariance():
    cert, _ = vdp_synthesis()
    t0 = time.perf_counter()
    p = vdp()
    filt = SafetyFilter(cert.b, p.system, p.eta)
    starts = verify.boundary_points(cert.b, p.domain, 8, seed=p.config.seed)
    min_b, min_margin, aborted = np.inf, np.inf, False
    for x0 in starts:
        ctrl = CbcQpController(filt, lambda x: nominal_pd(cert.init.K, p.x_eq, x))
        traj = simulate(p.system, ctrl, x0, 10.0, 0.01, cert.b)
        aborted |= traj.aborted
        min_b = min(min_b, float(traj.b_values.min()))
        min_margin = min(min_margin, min(float(p.system.input_margin(u).min()) for u in traj.inputs))
    ok = len(starts) == 8 and not aborted and min_b >= -1e-3 and min_margin >= -1e-9
    detail = f"{len(starts)} trajectories, min b {min_b:.2e}, min input margin {min_margin:.2e}"
    record(5, "closed-loop trajectories stay safe within input bounds", ok, detail, time.perf_counter() - t0, 30)


def test_criterion_6_care():
    t0 = time.perf_counter()
    P = care_solve(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]), np.eye(2), np.eye(1))
    e_di = float(np.linalg.norm(P - care_double_integrator()))
    e_s1 = abs(care_solve(np.zeros((1, 1)), np.eye(1), np.eye(1), np.eye(1))[0, 0] - 1.0)
    e_s2 = abs(care_solve(-np.eye(1), np.eye(1), np.eye(1), np.eye(1))[0, 0] - (math.sqrt(2) - 1))
    rng = np.random.default_rng(7)
    worst = 0.0
    pairs = 0
    while pairs < 20:
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, n + 1))
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        if not is_stabilizable(A, B):
            continue
        Pr = care_solve(A, B, np.eye(n), np.eye(m))
        worst = max(worst, float(np.linalg.norm(care_residual(A, B, np.eye(n), np.eye(m), Pr))))
        pairs += 1
    ok = e_di <= 1e-8 and e_s1 <= 1e-10 and e_s2 <= 1e-10 and worst <= 1e-8
    detail = (f"double integrator error {e_di:.1e}, scalar errors {e_s1:.1e} / {e_s2:.1e}, "
              f"worst residual over {pairs} random pairs {worst:.1e}")
    record(6, "Riccati solver", ok, detail, time.perf_counter() - t0, 5)


def test_criterion_7_cross_solver_consistency():
    t0 = time.perf_counter()
    p = vdp()
    b_prev, u, lam1, lam2 = first_enlargement_inputs()
    t2 = build_enlarge_program(b_prev, u, lam1, lam2, p.system, p.unsafe, p.config)
    sdp = t2.program.compile().sdp
    ours = sdpbackend.solve(sdp)
    theirs = sdpbackend.solve_sdpa_cvxopt(sdpbackend.read_sdpa(sdpbackend.export_sdpa(sdp)))
    rel = abs(ours.objective - theirs.objective) / max(1.0, abs(ours.objective))
    ok = ours.status == theirs.status == sdpbackend.OPTIMAL and rel <= 1e-5
    detail = (f"in-process {ours.status} {ours.objective:.10g}, external {theirs.status} "
              f"{theirs.objective:.10g}, relative gap {rel:.1e}")
    record(7, "SDPA export solved externally agrees", ok, detail, time.perf_counter() - t0, 120)


def test_criterion_8_scale_invariance():
    t0 = time.perf_counter()
    p = vdp()
    b_prev, u, lam1, lam2 = first_enlargement_inputs()
    one = enlarge_step(b_prev, u, lam1, lam2, p.system, p.unsafe, p.config)
    ten = enlarge_step(b_prev * 10.0, u, lam1, lam2, p.system, p.unsafe, p.config)
    agree = 0.0
    if one.ok and ten.ok:
        agree = verify.sign_agreement(verify.grid_eval(one.values["b"], p.domain, 201),
                                      verify.grid_eval(ten.values["b"], p.domain, 201))
    ok = one.ok and ten.ok and agree >= 0.999
    detail = f"gamma {one.gamma:.6g} vs {ten.gamma:.6g}, sign agreement {100 * agree:.3f}% of 201x201 cells"
    record(8, "enlargement invariant to scaling b_prev", ok, detail, time.perf_counter() - t0, 300)


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted((k, v) for k, v in dict(globals()).items() if k.startswith("test_criterion_")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
