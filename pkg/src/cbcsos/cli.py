"""``cbc`` command line: synthesize, verify, simulate, export."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, sdpbackend, verify
from .io import (ProblemFileError, certificate_to_dict, load_certificate, load_problem, problem_to_dict)
from .polyalg import Polynomial
from .runtime import CbcQpController, SafetyFilter, nominal_pd, simulate
from .synth import (CONVERGED, build_enlarge_program, build_refine_program, build_theorem2_program, lqr_init,
                    solve_barrier_program, synthesize)
from .synth.lqr import lqr_gain

log = logging.getLogger("cbcsos")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2

TRAJ_TOL = 1e-3
INPUT_TOL = 1e-9


class SdpaDumper:
    """Writes every compiled SDP as ``<name>_<k>.dat-s``, k counting per name."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.counts: dict[str, int] = {}

    def __call__(self, name: str, sdp: sdpbackend.SdpProblem) -> None:
        k = self.counts[name] = self.counts.get(name, 0) + 1
        (self.dir / f"{name}_{k:03d}.dat-s").write_text(sdpbackend.export_sdpa(sdp, comment=name))


def _apply_overrides(problem, args):
    cfg = problem.config
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "max_iter", None) is not None:
        cfg = replace(cfg, max_iterations=args.max_iter)
    if getattr(args, "threshold", None) is not None:
        cfg = replace(cfg, gamma_threshold=args.threshold)
    problem.config = cfg
    if getattr(args, "eta", None) is not None:
        problem.eta = args.eta
    if getattr(args, "grid_res", None) is not None:
        problem.grid_resolution = args.grid_res
    return problem


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def cmd_synthesize(args) -> int:
    problem = _apply_overrides(load_problem(args.problem), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "grids").mkdir(exist_ok=True)
    # config.json is itself a valid problem file with every default spelled out
    _write_json(out / "config.json", problem_to_dict(problem))
    feas_tol, psd_tol = sdpbackend.default_tolerances()
    run_info = {"version": __version__, "argv": sys.argv[1:], "feas_tol": feas_tol, "psd_tol": psd_tol}

    log_path = out / "iterations.jsonl"
    with open(log_path, "w") as fh:
        def on_record(rec):
            fh.write(json.dumps(rec, default=_json_default) + "\n")
            fh.flush()

        dump = SdpaDumper(args.dump_sdpa) if args.dump_sdpa else None
        t0 = time.perf_counter()
        cert = synthesize(problem.system, problem.unsafe, problem.config, problem.x0, problem.domain,
                          on_record=on_record, dump=dump)
        elapsed = time.perf_counter() - t0

    doc = certificate_to_dict(cert, problem.variables)
    _write_json(out / "certificate.json", doc)
    _write_json(out / "run.json", dict(run_info, status=cert.status, wall_time=elapsed))
    for k, b in enumerate(cert.iterates):
        verify.grid_eval(b, problem.domain, problem.grid_resolution).to_csv(out / "grids" / f"iter_{k:03d}.csv")
    report = verify.verify_certificate(
        cert.b, problem.system, problem.unsafe, domain=problem.domain, sample_box=problem.sample_box,
        n_unsafe=problem.config.n_unsafe_samples, n_boundary=problem.n_boundary,
        grid_res=problem.grid_resolution, seed=problem.config.seed, iterates=cert.iterates)
    _write_json(out / "report.json", report.as_dict())
    if cert.init is not None and args.trajectories > 0:
        starts = verify.boundary_points(cert.b, problem.domain, args.trajectories, problem.config.seed)
        summary, _ = _run_trajectories(problem, cert.b, cert.init.K, starts, out / "trajectories",
                                       problem.T, problem.dt)
        _write_json(out / "trajectories" / "summary.json",
                    {"eta": problem.eta, "T": problem.T, "dt": problem.dt, "trajectories": summary})
    print(f"status={cert.status} iterations={len(cert.gamma_history)} "
          f"gamma_last={cert.gamma_history[-1] if cert.gamma_history else None} time={elapsed:.1f}s "
          f"verified={report.passed}")
    return EXIT_OK if cert.status == CONVERGED else EXIT_PARTIAL


def cmd_verify(args) -> int:
    problem = _apply_overrides(load_problem(args.problem), args)
    cert = load_certificate(args.certificate, problem.nvars)
    report = verify.verify_certificate(
        cert.b, problem.system, problem.unsafe, domain=problem.domain, sample_box=problem.sample_box,
        n_unsafe=problem.config.n_unsafe_samples, n_boundary=problem.n_boundary,
        grid_res=problem.grid_resolution, seed=problem.config.seed, iterates=cert.iterates)
    doc = report.as_dict()
    doc["area"] = verify.set_area(verify.grid_eval(cert.b, problem.domain, problem.area_grid_resolution))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", doc)
    for u in report.unsafe:
        print(f"unsafe[{u.component + 1}] max b = {u.max_b:.6g} over {u.samples} samples: "
              f"{'PASS' if u.passed else 'FAIL'}")
    b = report.boundary
    print(f"boundary: {b.points} points, feasible fraction {b.feasible_fraction:.4f}, "
          f"worst margin {b.worst_margin:.6g}{' (vacuous)' if b.vacuous else ''}: {'PASS' if b.passed else 'FAIL'}")
    print(f"overall: {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_PARTIAL


def _parse_starts(spec: str, b: Polynomial, problem, seed: int) -> np.ndarray:
    if spec.startswith("boundary:"):
        n = int(spec.split(":", 1)[1])
        return verify.boundary_points(b, problem.domain, n, seed)
    pts = [[float(v) for v in chunk.split(",")] for chunk in spec.split(";") if chunk.strip()]
    arr = np.array(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != problem.nvars:
        raise ValueError(f"starts must be points with {problem.nvars} coordinates")
    return arr


def _nominal_gain(problem, cert) -> np.ndarray:
    if cert.K is not None:
        return cert.K
    return lqr_gain(problem.system, problem.x_eq, problem.config)[0]


def _run_trajectories(problem, b: Polynomial, K, starts, out: Path, T: float, dt: float) -> tuple[list, bool]:
    filt = SafetyFilter(b, problem.system, problem.eta)
    out.mkdir(parents=True, exist_ok=True)
    summary, ok = [], True
    for i, x0 in enumerate(starts):
        ctrl = CbcQpController(filt, lambda x: nominal_pd(K, problem.x_eq, x))
        traj = simulate(problem.system, ctrl, x0, T, dt, b)
        path = out / f"traj_{i:03d}.csv"
        traj.to_csv(path)
        margins = np.array([problem.system.input_margin(u) for u in traj.inputs])
        in_contract = bool(b.evaluate(x0) >= -verify.BOUNDARY_TOL)
        rec = {
            "file": path.name,
            "x0": np.asarray(x0).tolist(),
            "in_contract": in_contract,
            "min_b": float(np.min(traj.b_values)),
            "max_input_violation": float(max(0.0, -margins.min())),
            "qp_infeasible_steps": ctrl.infeasible_steps,
            "aborted": traj.aborted,
        }
        rec["passed"] = (not traj.aborted and rec["min_b"] >= -TRAJ_TOL
                         and rec["max_input_violation"] <= INPUT_TOL)
        if in_contract:
            ok &= rec["passed"]
        summary.append(rec)
    return summary, ok


def cmd_simulate(args) -> int:
    problem = _apply_overrides(load_problem(args.problem), args)
    cert = load_certificate(args.certificate, problem.nvars)
    starts = _parse_starts(args.starts, cert.b, problem, problem.config.seed)
    T = args.T if args.T is not None else problem.T
    dt = args.dt if args.dt is not None else problem.dt
    out = Path(args.out)
    summary, ok = _run_trajectories(problem, cert.b, _nominal_gain(problem, cert), starts, out, T, dt)
    for i, rec in enumerate(summary):
        print(f"traj {i}: min b = {rec['min_b']:.3e}, input violation = {rec['max_input_violation']:.1e}"
              f"{'' if rec['in_contract'] else ' (start outside the safe set: out of contract)'}")
    _write_json(out / "summary.json", {"eta": problem.eta, "T": T, "dt": dt, "trajectories": summary})
    return EXIT_OK if ok else EXIT_PARTIAL


def cmd_export(args) -> int:
    problem = _apply_overrides(load_problem(args.problem), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.what == "grid":
        if not args.certificate:
            print("export grid needs --certificate", file=sys.stderr)
            return EXIT_USAGE
        cert = load_certificate(args.certificate, problem.nvars)
        verify.grid_eval(cert.b, problem.domain, problem.grid_resolution).to_csv(out / "grid.csv")
        return EXIT_OK
    # first-iteration programs: initialization, enlargement, refinement
    cfg = problem.config
    init = lqr_init(problem.system, problem.x_eq, cfg, problem.unsafe, problem.domain)
    t2 = build_theorem2_program(problem.system, problem.unsafe, problem.x0, init.b0, cfg, name="init")
    (out / "init.dat-s").write_text(sdpbackend.export_sdpa(t2.program.compile().sdp, comment="init"))
    res = solve_barrier_program(t2, cfg)
    if not res.ok:
        print(f"initialization program is {res.status}; only init.dat-s written", file=sys.stderr)
        return EXIT_PARTIAL
    scale = init.b0.max_abs_coeff() if cfg.normalize else 1.0
    enl = build_enlarge_program(init.b0 / scale, res.values["u"], [l * scale for l in res.values["lambda1"]],
                                res.values["lambda2"], problem.system, problem.unsafe, cfg)
    enl_sdp = enl.program.compile()
    (out / "enlarge_1.dat-s").write_text(sdpbackend.export_sdpa(enl_sdp.sdp, comment="enlarge_1"))
    sol = sdpbackend.solve(enl_sdp.sdp)
    if sol.ok:
        b1 = enl.program.extract_solution(enl_sdp, sol, cfg.recon_tol).polys["b"]
        ref = build_refine_program(b1, problem.system, cfg)
        (out / "refine_1.dat-s").write_text(sdpbackend.export_sdpa(ref.compile().sdp, comment="refine_1"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbc", description="Control barrier certificate synthesis by SOS programming")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("problem", help="problem JSON file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--grid-res", type=int)
        sp.add_argument("--eta", type=float)

    s = sub.add_parser("synthesize", help="run the enlargement/refinement alternation")
    common(s)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--threshold", type=float)
    s.add_argument("--dump-sdpa", metavar="DIR")
    s.add_argument("--trajectories", type=int, default=8, metavar="N",
                   help="closed-loop runs from N boundary points written to the bundle (0 to skip)")
    s.set_defaults(func=cmd_synthesize)

    v = sub.add_parser("verify", help="sampling/LP checks of a certificate")
    common(v)
    v.add_argument("certificate")
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("simulate", help="closed-loop trajectories under the QP safety filter")
    common(m)
    m.add_argument("certificate")
    m.add_argument("--starts", default="boundary:8", help="'boundary:N' or 'x1,x2;x1,x2;...'")
    m.add_argument("--T", type=float)
    m.add_argument("--dt", type=float)
    m.set_defaults(func=cmd_simulate)

    e = sub.add_parser("export", help="SDPA dumps of the first iteration, or a grid CSV")
    common(e)
    e.add_argument("what", choices=["sdpa", "grid"])
    e.add_argument("--certificate")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ProblemFileError as exc:
        print(f"problem file error at {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
