"""Problem files and certificate files (JSON)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .polyalg import Polynomial
from .synth.system import ControlAffineSystem, ProblemError, SemialgebraicUnion, SynthesisConfig, X0Spec

CONVENTION = "s<0"

_TERM = {
    "type": "object",
    "required": ["coeff", "exponents"],
    "properties": {
        "coeff": {"type": "number"},
        "exponents": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    },
    "additionalProperties": False,
}
_POLY = {"type": "array", "items": _TERM}
_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_BOX = {"type": "array", "minItems": 1, "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}}

PROBLEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["convention", "variables", "dynamics", "inputs", "unsafe", "domain", "equilibrium"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "convention": {"const": CONVENTION},
        "variables": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "dynamics": {
            "type": "object",
            "required": ["f", "g"],
            "properties": {
                "f": {"type": "array", "items": _POLY},
                "g": {"type": "array", "items": {"type": "array", "items": _POLY}},
            },
            "additionalProperties": False,
        },
        "inputs": {
            "oneOf": [
                {"type": "object", "required": ["A_u", "c_u"], "additionalProperties": False,
                 "properties": {"A_u": _MATRIX, "c_u": {"type": "array", "items": {"type": "number"}}}},
                {"type": "object", "required": ["box"], "additionalProperties": False,
                 "properties": {"box": {"type": "object", "required": ["lower", "upper"],
                                        "properties": {"lower": {"type": "array", "items": {"type": "number"}},
                                                       "upper": {"type": "array", "items": {"type": "number"}}},
                                        "additionalProperties": False}}},
            ]
        },
        "unsafe": {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _POLY}},
        "domain": _BOX,
        "sample_box": _BOX,
        "equilibrium": {"type": "array", "items": {"type": "number"}},
        "initial_set": _POLY,
        "config": {
            "type": "object",
            "properties": {
                "deg_b": {"type": "integer", "minimum": 0},
                "deg_u": {"type": "integer", "minimum": 0},
                "deg_multipliers": {
                    "oneOf": [
                        {"type": "integer", "minimum": 0},
                        {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0},
                         "propertyNames": {"enum": ["sigma", "sigma2", "lambda1", "lambda2", "lambda3", "mu"]}},
                    ]
                },
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "gamma_threshold": {"type": "number", "exclusiveMinimum": 0},
                "max_iterations": {"type": "integer", "minimum": 0},
                "delta": {"oneOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "Q": _MATRIX,
                "R": _MATRIX,
                "seed": {"type": "integer"},
                "grid_resolution": {"type": "integer", "minimum": 2},
                "area_grid_resolution": {"type": "integer", "minimum": 2},
                "normalize": {"type": "boolean"},
                "n_unsafe_samples": {"type": "integer", "minimum": 1},
                "n_boundary": {"type": "integer", "minimum": 1},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


class ProblemFileError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def poly_from_json(terms, nvars: int, pointer: str = "") -> Polynomial:
    for k, t in enumerate(terms):
        if len(t["exponents"]) != nvars:
            raise ProblemFileError(f"{pointer}/{k}/exponents",
                                   f"has {len(t['exponents'])} exponents, expected {nvars}")
    return Polynomial.from_terms(nvars, ((t["coeff"], t["exponents"]) for t in terms))


def poly_to_json(p: Polynomial) -> list[dict]:
    return p.to_terms()


@dataclass
class Problem:
    name: str
    variables: list[str]
    system: ControlAffineSystem
    unsafe: SemialgebraicUnion
    domain: np.ndarray
    sample_box: np.ndarray
    x_eq: np.ndarray
    x0: X0Spec
    config: SynthesisConfig
    eta: float = 10.0
    grid_resolution: int = 201
    area_grid_resolution: int = 401
    n_boundary: int = 500
    T: float = 10.0
    dt: float = 0.01
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def nvars(self) -> int:
        return len(self.variables)


def _default_sample_box(domain: np.ndarray) -> np.ndarray:
    center = domain.mean(axis=1)
    half = 0.75 * (domain[:, 1] - domain[:, 0])
    return np.stack([center - half, center + half], axis=1)


def problem_from_dict(doc: dict) -> Problem:
    validator = jsonschema.Draft202012Validator(PROBLEM_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ProblemFileError(_pointer(err.absolute_path), err.message)
    n = len(doc["variables"])
    dyn = doc["dynamics"]
    if len(dyn["f"]) != n:
        raise ProblemFileError("/dynamics/f", f"has {len(dyn['f'])} entries, expected {n}")
    if len(dyn["g"]) != n:
        raise ProblemFileError("/dynamics/g", f"has {len(dyn['g'])} rows, expected {n}")
    f = [poly_from_json(p, n, f"/dynamics/f/{i}") for i, p in enumerate(dyn["f"])]
    g = [[poly_from_json(p, n, f"/dynamics/g/{i}/{j}") for j, p in enumerate(row)] for i, row in enumerate(dyn["g"])]
    nu = len(g[0])
    for i, row in enumerate(g):
        if len(row) != nu:
            raise ProblemFileError(f"/dynamics/g/{i}", f"has {len(row)} columns, expected {nu}")
    inputs = doc["inputs"]
    try:
        if "box" in inputs:
            lo, hi = inputs["box"]["lower"], inputs["box"]["upper"]
            if len(lo) != nu or len(hi) != nu:
                raise ProblemFileError("/inputs/box", f"bounds must have length {nu}")
            system = ControlAffineSystem.with_box(f, g, lo, hi)
        else:
            system = ControlAffineSystem(f, g, np.array(inputs["A_u"], float), np.array(inputs["c_u"], float))
    except ProblemError as exc:
        raise ProblemFileError("/inputs", str(exc)) from exc
    unsafe = SemialgebraicUnion([
        [poly_from_json(p, n, f"/unsafe/{i}/{j}") for j, p in enumerate(comp)]
        for i, comp in enumerate(doc["unsafe"])
    ])
    domain = np.array(doc["domain"], dtype=float)
    if domain.shape != (n, 2) or np.any(domain[:, 1] <= domain[:, 0]):
        raise ProblemFileError("/domain", f"must be {n} rows of [lo, hi] with lo < hi")
    if "sample_box" in doc:
        sample_box = np.array(doc["sample_box"], dtype=float)
        if sample_box.shape != (n, 2) or np.any(sample_box[:, 1] <= sample_box[:, 0]):
            raise ProblemFileError("/sample_box", f"must be {n} rows of [lo, hi] with lo < hi")
    else:
        sample_box = _default_sample_box(domain)
    x_eq = np.array(doc["equilibrium"], dtype=float)
    if len(x_eq) != n:
        raise ProblemFileError("/equilibrium", f"must have length {n}")
    phi = poly_from_json(doc["initial_set"], n, "/initial_set") if "initial_set" in doc else None

    cfg = dict(doc.get("config", {}))
    mult = cfg.get("deg_multipliers", 4)
    families = ["sigma", "sigma2", "lambda1", "lambda2", "lambda3", "mu"]
    degs = {fam: mult for fam in families} if isinstance(mult, int) else {fam: mult.get(fam, 4) for fam in families}
    delta = cfg.get("delta", "auto")
    for key, shape in (("Q", (n, n)), ("R", (nu, nu))):
        if key in cfg and np.array(cfg[key]).shape != shape:
            raise ProblemFileError(f"/config/{key}", f"must be {shape[0]}x{shape[1]}")
    config = SynthesisConfig(
        deg_b=cfg.get("deg_b", 4),
        deg_u=cfg.get("deg_u", 3),
        **{f"deg_{fam}": d for fam, d in degs.items()},
        eps=cfg.get("eps", 1e-3),
        gamma_threshold=cfg.get("gamma_threshold", 1e-3),
        max_iterations=cfg.get("max_iterations", 50),
        delta=None if delta == "auto" else float(delta),
        Q=np.array(cfg["Q"], float) if "Q" in cfg else None,
        R=np.array(cfg["R"], float) if "R" in cfg else None,
        normalize=cfg.get("normalize", True),
        x_eq=x_eq,
        sample_box=sample_box,
        n_unsafe_samples=cfg.get("n_unsafe_samples", 10_000),
        seed=cfg.get("seed", 0),
    )
    return Problem(
        name=doc.get("name", "problem"),
        variables=list(doc["variables"]),
        system=system,
        unsafe=unsafe,
        domain=domain,
        sample_box=sample_box,
        x_eq=x_eq,
        x0=X0Spec(phi),
        config=config,
        eta=cfg.get("eta", 10.0),
        grid_resolution=cfg.get("grid_resolution", 201),
        area_grid_resolution=cfg.get("area_grid_resolution", 401),
        n_boundary=cfg.get("n_boundary", 500),
        T=cfg.get("T", 10.0),
        dt=cfg.get("dt", 0.01),
        raw=doc,
    )


def load_problem(path) -> Problem:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ProblemFileError("", f"invalid JSON: {exc}") from exc
    return problem_from_dict(doc)


def problem_to_dict(problem: Problem) -> dict:
    """Re-serialize with every default made explicit."""
    c = problem.config
    sys_ = problem.system
    doc = {
        "name": problem.name,
        "convention": CONVENTION,
        "variables": list(problem.variables),
        "dynamics": {
            "f": [poly_to_json(p) for p in sys_.f],
            "g": [[poly_to_json(p) for p in row] for row in sys_.g],
        },
        "inputs": {"A_u": sys_.A_u.tolist(), "c_u": sys_.c_u.tolist()},
        "unsafe": [[poly_to_json(p) for p in comp] for comp in problem.unsafe.components],
        "domain": problem.domain.tolist(),
        "sample_box": problem.sample_box.tolist(),
        "equilibrium": problem.x_eq.tolist(),
        "config": {
            "deg_b": c.deg_b,
            "deg_u": c.deg_u,
            "deg_multipliers": {"sigma": c.deg_sigma, "sigma2": c.deg_sigma2, "lambda1": c.deg_lambda1,
                                "lambda2": c.deg_lambda2, "lambda3": c.deg_lambda3, "mu": c.deg_mu},
            "eps": c.eps,
            "gamma_threshold": c.gamma_threshold,
            "max_iterations": c.max_iterations,
            "delta": "auto" if c.delta is None else c.delta,
            "eta": problem.eta,
            "seed": c.seed,
            "grid_resolution": problem.grid_resolution,
            "area_grid_resolution": problem.area_grid_resolution,
            "normalize": c.normalize,
            "n_unsafe_samples": c.n_unsafe_samples,
            "n_boundary": problem.n_boundary,
            "T": problem.T,
            "dt": problem.dt,
        },
    }
    if c.Q is not None:
        doc["config"]["Q"] = np.asarray(c.Q).tolist()
    if c.R is not None:
        doc["config"]["R"] = np.asarray(c.R).tolist()
    if problem.x0.phi is not None:
        doc["initial_set"] = poly_to_json(problem.x0.phi)
    return doc


# -- certificates -------------------------------------------------------------

def _encode(obj):
    if isinstance(obj, Polynomial):
        return {"poly": poly_to_json(obj)}
    if isinstance(obj, (list, tuple)):
        return [_encode(o) for o in obj]
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _decode(obj, nvars):
    if isinstance(obj, dict) and set(obj) == {"poly"}:
        return poly_from_json(obj["poly"], nvars)
    if isinstance(obj, list):
        return [_decode(o, nvars) for o in obj]
    if isinstance(obj, dict):
        return {k: _decode(v, nvars) for k, v in obj.items()}
    return obj


def certificate_to_dict(cert, variables) -> dict:
    doc = {
        "variables": list(variables),
        "status": cert.status,
        "b": poly_to_json(cert.b),
        "u": [poly_to_json(p) for p in cert.u],
        "gamma_history": list(cert.gamma_history),
        "multipliers": _encode(cert.multipliers),
        "iterates": [poly_to_json(p) for p in cert.iterates],
    }
    if cert.init is not None:
        doc["init"] = {"delta": cert.init.delta, "P": cert.init.P.tolist(), "K": cert.init.K.tolist(),
                       "x_eq": cert.init.x_eq.tolist(), "u_eq": cert.init.u_eq.tolist()}
    return doc


@dataclass
class LoadedCertificate:
    b: Polynomial
    u: list[Polynomial] = field(default_factory=list)
    iterates: list[Polynomial] = field(default_factory=list)
    gamma_history: list[float] = field(default_factory=list)
    multipliers: dict = field(default_factory=dict)
    K: np.ndarray | None = None
    status: str | None = None
    raw: dict = field(default_factory=dict, repr=False)


def certificate_from_dict(doc: dict, nvars: int) -> LoadedCertificate:
    if "b" not in doc:
        raise ProblemFileError("/b", "certificate needs a 'b' polynomial")
    try:
        jsonschema.validate(doc["b"], _POLY)
    except jsonschema.ValidationError as exc:
        raise ProblemFileError("/b" + _pointer(exc.absolute_path), exc.message) from exc
    b = poly_from_json(doc["b"], nvars, "/b")
    u = [poly_from_json(p, nvars, f"/u/{j}") for j, p in enumerate(doc.get("u", []))]
    its = [poly_from_json(p, nvars, f"/iterates/{k}") for k, p in enumerate(doc.get("iterates", []))]
    K = np.array(doc["init"]["K"], float) if "init" in doc else None
    return LoadedCertificate(b, u, its, list(doc.get("gamma_history", [])),
                             _decode(doc.get("multipliers", {}), nvars), K, doc.get("status"), doc)


def load_certificate(path, nvars: int) -> LoadedCertificate:
    return certificate_from_dict(json.loads(Path(path).read_text()), nvars)


def fixture_path(name: str) -> Path:
    """Path of a bundled data file (e.g. ``vanderpol.json``)."""
    return Path(str(resources.files("cbcsos") / "data" / name))
