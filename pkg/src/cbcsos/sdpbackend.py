"""Block-diagonal SDPs: representation, solving, validation, SDPA I/O.

Problem form (maximization)::

    maximize    sum_k <C_k, X_k> + c_free . y
    subject to  sum_k sum_{i<=j} A[r,k,i,j] * X_k[i,j] + sum_v a[r,v] * y_v = rhs[r]
                X_k PSD,  y free

Coefficients act on the *stored* upper-triangle entry ``X_k[i, j]``, i.e. a
constraint that involves ``X[i,j] + X[j,i]`` must carry coefficient 2 on the
single stored entry. Size-1 blocks are scalar nonnegativity constraints.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"

DEFAULT_FEAS_TOL = 1e-7
DEFAULT_PSD_TOL = 1e-7


def default_tolerances() -> tuple[float, float]:
    """(feas_tol, psd_tol), honouring the ``CBC_SOLVER_TOL`` override."""
    env = os.environ.get("CBC_SOLVER_TOL")
    if env:
        t = float(env)
        return t, t
    return DEFAULT_FEAS_TOL, DEFAULT_PSD_TOL


@dataclass(frozen=True)
class SdpProblem:
    block_sizes: tuple[int, ...]
    n_free: int
    rhs: np.ndarray
    # block coefficients: (constraint, block, i, j, value) with i <= j
    blk_con: np.ndarray
    blk_idx: np.ndarray
    blk_row: np.ndarray
    blk_col: np.ndarray
    blk_val: np.ndarray
    # free-variable coefficients: (constraint, var, value)
    free_con: np.ndarray
    free_var: np.ndarray
    free_val: np.ndarray
    obj_free: np.ndarray
    # objective on block entries: (block, i, j, value)
    obj_blk: tuple = ()
    free_names: tuple[str, ...] = ()

    @property
    def n_constraints(self) -> int:
        return len(self.rhs)

    def __post_init__(self):
        for k, i, j in zip(self.blk_idx, self.blk_row, self.blk_col):
            if not (0 <= k < len(self.block_sizes)):
                raise ValueError(f"block index {k} out of range")
            if not (0 <= i <= j < self.block_sizes[k]):
                raise ValueError(f"entry ({i}, {j}) invalid for block {k}")
        if len(self.blk_con) and (self.blk_con.max() >= len(self.rhs) or self.blk_con.min() < 0):
            raise ValueError("block triplet references a missing constraint")
        if len(self.free_con) and self.free_con.max() >= len(self.rhs):
            raise ValueError("free triplet references a missing constraint")
        if len(self.free_var) and self.free_var.max() >= self.n_free:
            raise ValueError("free triplet references a missing variable")
        if len(self.obj_free) != self.n_free:
            raise ValueError("objective length does not match free variable count")


class SdpBuilder:
    """Incremental construction of an :class:`SdpProblem`."""

    def __init__(self):
        self.block_sizes: list[int] = []
        self.n_free = 0
        self.free_names: list[str] = []
        self.rhs: list[float] = []
        self._blk: list[tuple[int, int, int, int, float]] = []
        self._free: list[tuple[int, int, float]] = []
        self.obj_free: dict[int, float] = {}
        self.obj_blk: list[tuple[int, int, int, float]] = []

    def add_block(self, size: int) -> int:
        self.block_sizes.append(int(size))
        return len(self.block_sizes) - 1

    def add_free(self, n: int = 1, names=None) -> int:
        start = self.n_free
        self.n_free += n
        self.free_names.extend(names if names is not None else [f"y{start + i}" for i in range(n)])
        return start

    def add_constraint(self, block_terms, free_terms, rhs: float) -> int:
        r = len(self.rhs)
        self.rhs.append(float(rhs))
        for k, i, j, v in block_terms:
            if i > j:
                i, j = j, i
            self._blk.append((r, k, i, j, float(v)))
        for var, v in free_terms:
            self._free.append((r, int(var), float(v)))
        return r

    def build(self) -> SdpProblem:
        blk = np.array(self._blk, dtype=float).reshape(-1, 5)
        fr = np.array(self._free, dtype=float).reshape(-1, 3)
        obj = np.zeros(self.n_free)
        for v, c in self.obj_free.items():
            obj[v] += c
        return SdpProblem(
            block_sizes=tuple(self.block_sizes),
            n_free=self.n_free,
            rhs=np.array(self.rhs, dtype=float),
            blk_con=blk[:, 0].astype(int),
            blk_idx=blk[:, 1].astype(int),
            blk_row=blk[:, 2].astype(int),
            blk_col=blk[:, 3].astype(int),
            blk_val=blk[:, 4],
            free_con=fr[:, 0].astype(int),
            free_var=fr[:, 1].astype(int),
            free_val=fr[:, 2],
            obj_free=obj,
            obj_blk=tuple(self.obj_blk),
            free_names=tuple(self.free_names),
        )


@dataclass
class SdpSolution:
    status: str
    blocks: list[np.ndarray] = field(default_factory=list)
    free: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class ResidualReport:
    max_eq_residual: float
    min_eigenvalues: list[float]
    objective_gap: float
    feas_tol: float
    psd_tol: float

    @property
    def min_eigenvalue(self) -> float:
        return min(self.min_eigenvalues, default=0.0)

    @property
    def passed(self) -> bool:
        return (
            self.max_eq_residual <= self.feas_tol
            and self.min_eigenvalue >= -self.psd_tol
            and self.objective_gap <= max(self.feas_tol, 1e-9)
        )

    def as_dict(self) -> dict:
        return {
            "max_eq_residual": self.max_eq_residual,
            "min_eigenvalue": self.min_eigenvalue,
            "objective_gap": self.objective_gap,
            "passed": self.passed,
        }


# ---------------------------------------------------------------------------
# Evaluation helpers shared by validate() and the solvers.

def constraint_values(problem: SdpProblem, blocks, free) -> np.ndarray:
    vals = np.zeros(problem.n_constraints)
    for r, k, i, j, v in zip(problem.blk_con, problem.blk_idx, problem.blk_row, problem.blk_col, problem.blk_val):
        vals[r] += v * blocks[k][i, j]
    if problem.n_free:
        np.add.at(vals, problem.free_con, problem.free_val * np.asarray(free)[problem.free_var])
    return vals


def objective_value(problem: SdpProblem, blocks, free) -> float:
    val = float(np.dot(problem.obj_free, free)) if problem.n_free else 0.0
    for k, i, j, v in problem.obj_blk:
        val += v * blocks[k][i, j]
    return val


def validate(problem: SdpProblem, solution: SdpSolution, feas_tol=None, psd_tol=None) -> ResidualReport:
    """Recompute residuals from problem data only (no solver state is trusted)."""
    dft, dpt = default_tolerances()
    feas_tol = dft if feas_tol is None else feas_tol
    psd_tol = dpt if psd_tol is None else psd_tol
    blocks = [0.5 * (B + B.T) for B in solution.blocks]
    if problem.n_constraints:
        res = float(np.max(np.abs(constraint_values(problem, blocks, solution.free) - problem.rhs)))
    else:
        res = 0.0
    eigs = [float(np.linalg.eigvalsh(B)[0]) if B.size else 0.0 for B in blocks]
    gap = abs(objective_value(problem, blocks, solution.free) - solution.objective) if problem.n_free or problem.obj_blk else 0.0
    if np.isnan(gap):
        gap = 0.0 if not (problem.n_free or problem.obj_blk) else float("inf")
    return ResidualReport(res, eigs, gap, feas_tol, psd_tol)


# ---------------------------------------------------------------------------
# Clarabel backend (interior point, native free variables).

def _svec_offsets(block_sizes):
    offsets, pos = [], 0
    for n in block_sizes:
        offsets.append(pos)
        pos += n * (n + 1) // 2
    return offsets, pos


def _tri_index(i, j):
    # column-major upper triangle, i <= j
    return j * (j + 1) // 2 + i


def solve(problem: SdpProblem, *, feas_tol=None, psd_tol=None, max_iter: int = 200, verbose: bool = False) -> SdpSolution:
    """Solve with Clarabel and validate before reporting ``optimal``.

    ``AlmostSolved`` results are accepted only if :func:`validate` passes at
    ten times the tolerances; otherwise they become ``numerical_failure``.
    """
    import clarabel

    dft, dpt = default_tolerances()
    feas_tol = dft if feas_tol is None else feas_tol
    psd_tol = dpt if psd_tol is None else psd_tol
    t0 = time.perf_counter()

    if problem.n_constraints == 0 and not problem.block_sizes and problem.n_free == 0:
        return SdpSolution(OPTIMAL, [], np.zeros(0), np.zeros(0), 0.0,
                           {"backend": "trivial", "free_vars": "native", "iterations": 0})

    offsets, n_blk = _svec_offsets(problem.block_sizes)
    nx = n_blk + problem.n_free
    m = problem.n_constraints

    cols = np.array([offsets[k] + _tri_index(i, j) for k, i, j in zip(problem.blk_idx, problem.blk_row, problem.blk_col)], dtype=int)
    rows = np.concatenate([problem.blk_con, problem.free_con]).astype(int)
    cols = np.concatenate([cols, n_blk + problem.free_var]).astype(int)
    vals = np.concatenate([problem.blk_val, problem.free_val])
    A_eq = sp.csc_matrix((vals, (rows, cols)), shape=(m, nx))

    # cone rows: -D x + s = 0, s = svec(X) with sqrt(2) on off-diagonals
    cone_rows, cone_cols, cone_vals = [], [], []
    cones = [clarabel.ZeroConeT(m)] if m else []
    r = 0
    for k, n in enumerate(problem.block_sizes):
        for j in range(n):
            for i in range(j + 1):
                cone_rows.append(r)
                cone_cols.append(offsets[k] + _tri_index(i, j))
                cone_vals.append(-1.0 if i == j else -np.sqrt(2.0))
                r += 1
        cones.append(clarabel.NonnegativeConeT(1) if n == 1 else clarabel.PSDTriangleConeT(n))
    A_cone = sp.csc_matrix((cone_vals, (cone_rows, cone_cols)), shape=(r, nx))
    A = sp.vstack([A_eq, A_cone]).tocsc()
    b = np.concatenate([problem.rhs, np.zeros(r)])

    q = np.zeros(nx)
    q[n_blk:] = -problem.obj_free
    for k, i, j, v in problem.obj_blk:
        q[offsets[k] + _tri_index(i, j)] -= v
    P = sp.csc_matrix((nx, nx))

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_feas = 1e-10
    settings.tol_gap_abs = 1e-10
    settings.tol_gap_rel = 1e-10
    settings.presolve_enable = False
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    status_name = str(sol.status)

    x = np.asarray(sol.x)
    blocks = []
    for k, n in enumerate(problem.block_sizes):
        B = np.zeros((n, n))
        for j in range(n):
            for i in range(j + 1):
                B[i, j] = B[j, i] = x[offsets[k] + _tri_index(i, j)]
        blocks.append(B)
    free = x[n_blk:].copy()
    dual = np.asarray(sol.z)[:m].copy()
    diagnostics = {
        "backend": "clarabel",
        "free_vars": "native",
        "solver_status": status_name,
        "iterations": int(sol.iterations),
        "solve_time": time.perf_counter() - t0,
    }
    solution = SdpSolution(NUMERICAL_FAILURE, blocks, free, dual, objective_value(problem, blocks, free), diagnostics)

    if status_name == "Solved" or status_name == "AlmostSolved":
        report = validate(problem, solution, feas_tol, psd_tol)
        diagnostics["residuals"] = report.as_dict()
        if report.passed:
            solution.status = OPTIMAL
        elif status_name == "AlmostSolved" or report.max_eq_residual <= 10 * feas_tol:
            loose = validate(problem, solution, 10 * feas_tol, 10 * psd_tol)
            solution.status = OPTIMAL if loose.passed else NUMERICAL_FAILURE
            diagnostics["accepted_at_10x"] = loose.passed
    elif status_name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        solution.status = INFEASIBLE
        diagnostics["reduced_accuracy"] = status_name.startswith("Almost")
    elif status_name in ("DualInfeasible", "AlmostDualInfeasible"):
        solution.status = UNBOUNDED
        diagnostics["reduced_accuracy"] = status_name.startswith("Almost")
    log.debug("clarabel %s in %d iterations", status_name, sol.iterations)
    return solution


# ---------------------------------------------------------------------------
# SDPA sparse format.
#
# The exported problem is SDPA's dual form: maximize tr(F0 Y) s.t.
# tr(Fi Y) = ci, Y PSD. Each free variable y_v is split as Y[2v,2v] - Y[2v+1,2v+1]
# inside one trailing diagonal block (negative size in the header).

def _fmt(v: float) -> str:
    return repr(float(v))


def export_sdpa(problem: SdpProblem, comment: str | None = None) -> str:
    nblk = len(problem.block_sizes)
    struct = list(problem.block_sizes)
    free_blk = None
    if problem.n_free:
        struct.append(-2 * problem.n_free)
        free_blk = nblk
    entries: dict[tuple[int, int, int, int], float] = {}

    def put(mat, blk, i, j, v):
        key = (mat, blk + 1, i + 1, j + 1)
        entries[key] = entries.get(key, 0.0) + v

    for r, k, i, j, v in zip(problem.blk_con, problem.blk_idx, problem.blk_row, problem.blk_col, problem.blk_val):
        put(int(r) + 1, int(k), int(i), int(j), v if i == j else v / 2.0)
    for r, var, v in zip(problem.free_con, problem.free_var, problem.free_val):
        put(int(r) + 1, free_blk, 2 * int(var), 2 * int(var), v)
        put(int(r) + 1, free_blk, 2 * int(var) + 1, 2 * int(var) + 1, -v)
    for var, v in enumerate(problem.obj_free):
        if v != 0.0:
            put(0, free_blk, 2 * var, 2 * var, v)
            put(0, free_blk, 2 * var + 1, 2 * var + 1, -v)
    for k, i, j, v in problem.obj_blk:
        put(0, int(k), int(i), int(j), v if i == j else v / 2.0)

    lines = []
    if comment:
        for c in comment.splitlines():
            lines.append(f'"{c}')
    lines.append(str(problem.n_constraints))
    lines.append(str(len(struct)))
    lines.append(" ".join(str(s) for s in struct) if struct else "0")
    lines.append(" ".join(_fmt(c) for c in problem.rhs) if problem.n_constraints else "")
    for key in sorted(entries):
        v = entries[key]
        if v != 0.0:
            lines.append(f"{key[0]} {key[1]} {key[2]} {key[3]} {_fmt(v)}")
    return "\n".join(lines) + "\n"


@dataclass
class SdpaData:
    """Raw SDPA content: ``mats[0]`` is F0, ``mats[i]`` is Fi (1-based blocks)."""

    m: int
    block_struct: list[int]
    c: np.ndarray
    mats: dict[int, list[tuple[int, int, int, float]]]


def read_sdpa(text: str) -> SdpaData:
    lines = []
    for raw in text.splitlines():
        s = raw.strip()
        if not s or s[0] in '"*':
            continue
        lines.append(s.replace(",", " ").replace("{", " ").replace("}", " ").replace("(", " ").replace(")", " "))
    m = int(lines[0].split()[0])
    nblocks = int(lines[1].split()[0])
    struct = [int(float(t)) for t in lines[2].split()[:nblocks]]
    pos = 3
    c = []
    while len(c) < m:
        c.extend(float(t) for t in lines[pos].split())
        pos += 1
    if m == 0 and pos < len(lines) and len(lines[pos].split()) != 5:
        pos += 1
    mats: dict[int, list] = {}
    for s in lines[pos:]:
        t = s.split()
        if len(t) < 5:
            continue
        mat, blk, i, j = (int(t[0]), int(t[1]), int(t[2]), int(t[3]))
        if i > j:
            i, j = j, i
        mats.setdefault(mat, []).append((blk, i, j, float(t[4])))
    return SdpaData(m, struct, np.array(c[:m], dtype=float), mats)


def sdpa_to_problem(data: SdpaData) -> SdpProblem:
    """Convert SDPA data to an :class:`SdpProblem`; diagonal blocks become 1x1 blocks."""
    builder = SdpBuilder()
    block_map: dict[tuple[int, int], tuple[int, int, int]] = {}
    for b, size in enumerate(data.block_struct, start=1):
        if size > 0:
            k = builder.add_block(size)
            for i in range(1, size + 1):
                for j in range(i, size + 1):
                    block_map[(b, i, j)] = (k, i - 1, j - 1)
        else:
            for i in range(1, -size + 1):
                k = builder.add_block(1)
                block_map[(b, i, i)] = (k, 0, 0)

    def terms(entries):
        out = []
        for blk, i, j, v in entries:
            k, ii, jj = block_map[(blk, i, j)]
            out.append((k, ii, jj, v if i == j else 2.0 * v))
        return out

    for r in range(1, data.m + 1):
        builder.add_constraint(terms(data.mats.get(r, [])), [], data.c[r - 1])
    builder.obj_blk = terms(data.mats.get(0, []))
    return builder.build()


def solve_sdpa_cvxopt(data: SdpaData, *, tol: float = 1e-9) -> SdpSolution:
    """Solve SDPA data with CVXOPT, an independent interior-point code.

    CVXOPT solves the SDPA primal ``min c.x s.t. sum x_i F_i - F0 PSD``; the
    SDPA dual (the exported problem) is recovered from its dual variables.
    """
    from cvxopt import matrix, solvers

    m = data.m
    lin_rows, sdp_blocks = [], []
    for b, size in enumerate(data.block_struct, start=1):
        if size < 0:
            lin_rows.extend((b, i) for i in range(1, -size + 1))
        else:
            sdp_blocks.append((b, size))
    lin_index = {key: r for r, key in enumerate(lin_rows)}
    Gl = np.zeros((len(lin_rows), m))
    hl = np.zeros(len(lin_rows))
    Gs = [np.zeros((n * n, m)) for _, n in sdp_blocks]
    hs = [np.zeros((n, n)) for _, n in sdp_blocks]
    sdp_index = {b: idx for idx, (b, _) in enumerate(sdp_blocks)}
    for mat, entries in data.mats.items():
        for blk, i, j, v in entries:
            if blk in sdp_index:
                idx = sdp_index[blk]
                n = sdp_blocks[idx][1]
                for a, c in {(i - 1, j - 1), (j - 1, i - 1)}:
                    if mat == 0:
                        hs[idx][a, c] += -v
                    else:
                        Gs[idx][c * n + a, mat - 1] += -v
            else:
                r = lin_index[(blk, i)]
                if mat == 0:
                    hl[r] += -v
                else:
                    Gl[r, mat - 1] += -v
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": 200}
    t0 = time.perf_counter()
    kwargs = {}
    if lin_rows:
        kwargs["Gl"] = matrix(Gl)
        kwargs["hl"] = matrix(hl)
    if sdp_blocks:
        kwargs["Gs"] = [matrix(G) for G in Gs]
        kwargs["hs"] = [matrix(h) for h in hs]
    res = solvers.sdp(matrix(data.c), options=opts, **kwargs)
    raw = res["status"]
    status = {"optimal": OPTIMAL, "dual infeasible": INFEASIBLE, "primal infeasible": UNBOUNDED}.get(raw, NUMERICAL_FAILURE)
    blocks = [np.array(z) for z in res["zs"]] if res.get("zs") is not None and status == OPTIMAL else []
    obj = float(res["primal objective"]) if status == OPTIMAL else float("nan")
    return SdpSolution(status, blocks, np.zeros(0), np.zeros(0), obj,
                       {"backend": "cvxopt", "solver_status": raw, "iterations": res.get("iterations"),
                        "solve_time": time.perf_counter() - t0, "free_vars": "split"})
