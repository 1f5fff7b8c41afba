"""Solver-free checks of barrier certificates.

Everything here works by sampling, bisection, small LPs and grid evaluation,
so a defect in the SOS machinery cannot certify its own output.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .polyalg import Polynomial

BOUNDARY_TOL = 1e-8
LP_TOL = 1e-6
MAX_DRAWS = 10_000_000
MIN_ACCEPT_RATE = 1e-4


def _box(box) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be an (n, 2) array of [lo, hi] rows with lo < hi")
    return box


def sample_component(unsafe, i: int, n: int, box, seed: int = 0) -> tuple[np.ndarray, int]:
    """Rejection-sample ``n`` points of unsafe component ``i`` inside ``box``.

    Returns (points, draws). Fewer than ``n`` points come back only when the
    draw budget ran out; an acceptance rate below 1e-4 over the first 10^6
    draws gives up early.
    """
    box = _box(box)
    rng = np.random.default_rng([seed, i])
    batch = 100_000
    got, draws = [], 0
    count = 0
    while count < n and draws < MAX_DRAWS:
        pts = rng.uniform(box[:, 0], box[:, 1], size=(batch, box.shape[0]))
        draws += batch
        acc = pts[unsafe.member_mask(i, pts)]
        got.append(acc)
        count += len(acc)
        if draws >= 1_000_000 and count / draws < MIN_ACCEPT_RATE:
            break
    pts = np.concatenate(got) if got else np.zeros((0, box.shape[0]))
    return pts[:n], draws


@dataclass
class UnsafeCheck:
    component: int
    max_b: float
    samples: int
    draws: int
    sampleable: bool

    @property
    def passed(self) -> bool:
        return self.sampleable and self.max_b < 0


def sample_unsafe_max(b: Polynomial, unsafe, n: int = 10_000, box=None, seed: int = 0) -> list[UnsafeCheck]:
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(len(unsafe)):
        pts, draws = sample_component(unsafe, i, n, box, seed)
        sampleable = len(pts) > 0 and len(pts) / draws >= MIN_ACCEPT_RATE
        mx = float(np.max(b(pts))) if len(pts) else float("nan")
        out.append(UnsafeCheck(i, mx, len(pts), draws, sampleable))
    return out


def find_interior_point(b: Polynomial, box, seed: int = 0, n: int = 20_000) -> np.ndarray | None:
    box = _box(box)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))
    vals = b(pts)
    k = int(np.argmax(vals))
    return pts[k] if vals[k] > 0 else None


def boundary_points(b: Polynomial, box, n: int, seed: int = 0, tol: float = BOUNDARY_TOL,
                    interior=None, max_rays_factor: int = 100) -> np.ndarray:
    """Points with |b| <= tol, by bisection along random rays from an interior point.

    Each ray runs from the interior point to where it leaves the box; rays
    whose exit point is not strictly outside the set are skipped.
    """
    box = _box(box)
    dim = box.shape[0]
    if interior is None:
        interior = find_interior_point(b, box, seed)
        if interior is None:
            return np.zeros((0, dim))
    x0 = np.asarray(interior, dtype=float)
    if b.evaluate(x0) <= 0:
        raise ValueError("interior point must satisfy b > 0")
    rng = np.random.default_rng([seed, 1])
    found: list[np.ndarray] = []
    rays = 0
    while sum(len(f) for f in found) < n and rays < max_rays_factor * n:
        m = min(max(2 * n, 64), max_rays_factor * n - rays)
        rays += m
        d = rng.normal(size=(m, dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            t_hi = np.where(d > 0, (box[:, 1] - x0) / d, np.where(d < 0, (box[:, 0] - x0) / d, np.inf))
        t_exit = t_hi.min(axis=1)
        ends = x0 + t_exit[:, None] * d
        keep = b(ends) < 0
        d, lo, hi = d[keep], np.zeros(keep.sum()), t_exit[keep]
        if not len(d):
            continue
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            vals = b(x0 + mid[:, None] * d)
            pos = vals > 0
            lo = np.where(pos, mid, lo)
            hi = np.where(pos, hi, mid)
        cand = np.concatenate([x0 + lo[:, None] * d, x0 + hi[:, None] * d])
        vals = np.abs(b(cand))
        k = len(lo)
        best = np.where(vals[:k] <= vals[k:], np.arange(k), np.arange(k, 2 * k))
        pts = cand[best]
        found.append(pts[np.abs(b(pts)) <= tol])
    pts = np.concatenate(found) if found else np.zeros((0, dim))
    return pts[:n]


@dataclass
class BoundaryCheck:
    points: int
    feasible_fraction: float
    worst_margin: float
    margins: list[float] = field(default_factory=list, repr=False)

    @property
    def vacuous(self) -> bool:
        return self.points == 0

    @property
    def passed(self) -> bool:
        return self.vacuous or self.feasible_fraction == 1.0


def best_lie_derivative(b: Polynomial, system, points: np.ndarray, eta: float = 0.0) -> np.ndarray:
    """max over u in U of db/dx (f + g u) + eta * b, per point (one LP each)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) == 0:
        return np.zeros(0)
    grads = np.stack([p(pts) for p in b.gradient()], axis=1)
    fvals = np.stack([p(pts) for p in system.f], axis=1)
    gvals = np.stack([np.stack([p(pts) for p in row], axis=1) for row in system.g], axis=1)
    drift = np.einsum("ni,ni->n", grads, fvals)
    gain = np.einsum("ni,nij->nj", grads, gvals)
    bvals = b(pts)
    out = np.empty(len(pts))
    bounds = [(None, None)] * system.nu
    for k in range(len(pts)):
        res = linprog(-gain[k], A_ub=-system.A_u, b_ub=system.c_u, bounds=bounds, method="highs")
        if res.status != 0:
            raise RuntimeError(f"input LP failed at {pts[k]}: {res.message}")
        out[k] = drift[k] - res.fun + eta * bvals[k]
    return out


def boundary_feasibility(b: Polynomial, system, points, eta: float = 0.0, lp_tol: float = LP_TOL) -> BoundaryCheck:
    margins = best_lie_derivative(b, system, points, eta)
    if len(margins) == 0:
        return BoundaryCheck(0, 1.0, float("nan"))
    return BoundaryCheck(len(margins), float(np.mean(margins >= -lp_tol)), float(margins.min()), margins.tolist())


# -- grids -------------------------------------------------------------------------

@dataclass
class GridField:
    box: np.ndarray
    resolution: tuple[int, ...]
    values: np.ndarray  # shape == resolution, axis i <-> x_{i+1}

    def __post_init__(self):
        self.box = _box(self.box)
        if any(r < 2 for r in self.resolution):
            raise ValueError("resolution must be >= 2 per axis")
        if self.values.size != int(np.prod(self.resolution)):
            raise ValueError("values do not match resolution")

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, r) for (lo, hi), r in zip(self.box, self.resolution)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod([(hi - lo) / (r - 1) for (lo, hi), r in zip(self.box, self.resolution)]))

    def to_csv(self, path) -> None:
        pts = self.points()
        names = [f"x{i + 1}" for i in range(pts.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + ["b"])
            for p, v in zip(pts, self.values.ravel()):
                w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        sidecar = Path(path).with_suffix(".json")
        sidecar.write_text(json.dumps({"box": self.box.tolist(), "resolution": list(self.resolution),
                                       "order": "row-major, x1 slowest"}, indent=2))


def grid_eval(b: Polynomial, box, resolution) -> GridField:
    box = _box(box)
    if np.isscalar(resolution):
        resolution = (int(resolution),) * box.shape[0]
    resolution = tuple(int(r) for r in resolution)
    probe = GridField(box, resolution, np.zeros(resolution))
    return GridField(box, resolution, np.asarray(b(probe.points())).reshape(resolution))


def set_area(field_: GridField) -> float:
    return field_.cell_volume * int(np.count_nonzero(field_.values >= 0))


def contains(prev: GridField, nxt: GridField, margin: float = 0.0) -> bool:
    """Every cell with prev >= 0 has next > margin."""
    if prev.resolution != nxt.resolution or not np.allclose(prev.box, nxt.box):
        raise ValueError("grids differ in box or resolution")
    inside = prev.values >= 0
    return bool(np.all(nxt.values[inside] > margin))


def sign_agreement(a: GridField, b_: GridField) -> float:
    return float(np.mean((a.values >= 0) == (b_.values >= 0)))


# -- full report ----------------------------------------------------------------

@dataclass
class CertificateReport:
    unsafe: list[UnsafeCheck]
    boundary: BoundaryCheck
    areas: list[float] = field(default_factory=list)
    containment: list[bool] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (all(u.passed for u in self.unsafe) and self.boundary.passed
                and all(self.containment))

    def as_dict(self) -> dict:
        bnd = asdict(self.boundary)
        bnd.pop("margins")
        bnd["vacuous"] = self.boundary.vacuous
        return {
            "passed": self.passed,
            "unsafe": [dict(asdict(u), passed=u.passed) for u in self.unsafe],
            "boundary": bnd,
            "areas": self.areas,
            "containment": self.containment,
        }


def verify_certificate(b: Polynomial, system, unsafe, *, domain, sample_box=None, n_unsafe: int = 10_000,
                       n_boundary: int = 500, grid_res: int = 201, seed: int = 0,
                       iterates: Sequence[Polynomial] = (), lp_tol: float = LP_TOL) -> CertificateReport:
    sample_box = domain if sample_box is None else sample_box
    unsafe_checks = sample_unsafe_max(b, unsafe, n_unsafe, sample_box, seed)
    pts = boundary_points(b, domain, n_boundary, seed)
    bcheck = boundary_feasibility(b, system, pts, 0.0, lp_tol)
    fields = [grid_eval(p, domain, grid_res) for p in iterates]
    areas = [set_area(f) for f in fields]
    cont = [contains(a, c) for a, c in zip(fields, fields[1:])]
    return CertificateReport(unsafe_checks, bcheck, areas, cont)
