"""Sparse multivariate polynomials with float coefficients.

A :class:`Polynomial` maps exponent tuples to coefficients. Monomials are
ordered graded-lexicographically everywhere (total degree first, then
lexicographic with ``x1`` before ``x2``), so anything built from them
(Gram bases, SDP rows, text output) is reproducible.
"""

from __future__ import annotations

import math
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

Monomial = tuple[int, ...]


def grlex_key(mono: Monomial) -> tuple:
    return (sum(mono), tuple(-e for e in mono))


def monomial_basis(nvars: int, max_degree: int) -> list[Monomial]:
    """All monomials of total degree <= ``max_degree`` in graded-lex order.

    >>> monomial_basis(2, 2)
    [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    """
    if nvars < 1:
        raise ValueError("nvars must be >= 1")
    if max_degree < 0:
        return []
    basis = []
    for d in range(max_degree + 1):
        level = []
        for combo in combinations_with_replacement(range(nvars), d):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            level.append(tuple(e))
        level.sort(key=grlex_key)
        basis.extend(level)
    return basis


class Polynomial:
    """Immutable sparse polynomial in ``nvars`` variables."""

    __slots__ = ("nvars", "_terms")

    def __init__(self, nvars: int, terms: Mapping[Monomial, float] | None = None):
        self.nvars = int(nvars)
        clean: dict[Monomial, float] = {}
        if terms:
            for mono, c in terms.items():
                mono = tuple(int(e) for e in mono)
                if len(mono) != self.nvars:
                    raise ValueError(
                        f"monomial {mono} has {len(mono)} exponents, expected {self.nvars}"
                    )
                if any(e < 0 for e in mono):
                    raise ValueError(f"negative exponent in {mono}")
                c = float(c)
                if c != 0.0:
                    clean[mono] = clean.get(mono, 0.0) + c
            clean = {m: c for m, c in clean.items() if c != 0.0}
        self._terms = clean

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, nvars: int, value: float) -> Polynomial:
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def zero(cls, nvars: int) -> Polynomial:
        return cls(nvars)

    @classmethod
    def variable(cls, nvars: int, index: int) -> Polynomial:
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for {nvars} vars")
        e = [0] * nvars
        e[index] = 1
        return cls(nvars, {tuple(e): 1.0})

    @classmethod
    def from_terms(cls, nvars: int, terms: Iterable[tuple[float, Sequence[int]]]) -> Polynomial:
        acc: dict[Monomial, float] = {}
        for c, e in terms:
            e = tuple(int(v) for v in e)
            acc[e] = acc.get(e, 0.0) + float(c)
        return cls(nvars, acc)

    # -- accessors ----------------------------------------------------------
    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def monomials(self) -> list[Monomial]:
        return sorted(self._terms, key=grlex_key)

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self._terms), default=-1)

    def is_zero(self) -> bool:
        return not self._terms

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __len__(self) -> int:
        return len(self._terms)

    # -- arithmetic ---------------------------------------------------------
    def _check(self, other: Polynomial) -> None:
        if other.nvars != self.nvars:
            raise ValueError(f"variable count mismatch: {self.nvars} vs {other.nvars}")

    def _coerce(self, other):
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return None

    def __add__(self, other):
        q = self._coerce(other)
        if q is None:
            return NotImplemented
        out = dict(self._terms)
        for m, c in q._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial(self.nvars, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        q = self._coerce(other)
        if q is None:
            return NotImplemented
        return self + (-q)

    def __rsub__(self, other):
        q = self._coerce(other)
        if q is None:
            return NotImplemented
        return q + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            s = float(other)
            return Polynomial(self.nvars, {m: c * s for m, c in self._terms.items()})
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check(other)
        out: dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int) -> Polynomial:
        if k < 0:
            raise ValueError("negative powers are not polynomials")
        out = Polynomial.constant(self.nvars, 1.0)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    __hash__ = None

    # -- calculus -----------------------------------------------------------
    def differentiate(self, var_index: int) -> Polynomial:
        if not 0 <= var_index < self.nvars:
            raise IndexError(f"variable index {var_index} out of range for {self.nvars} vars")
        out: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            e = m[var_index]
            if e == 0:
                continue
            dm = list(m)
            dm[var_index] -= 1
            out[tuple(dm)] = c * e
        return Polynomial(self.nvars, out)

    def gradient(self) -> list[Polynomial]:
        return [self.differentiate(i) for i in range(self.nvars)]

    # -- evaluation ---------------------------------------------------------
    def evaluate(self, point: Sequence[float]) -> float:
        if len(point) != self.nvars:
            raise ValueError(f"point has {len(point)} entries, expected {self.nvars}")
        total = 0.0
        for m, c in self._terms.items():
            v = c
            for x, e in zip(point, m):
                if e:
                    v *= x**e
            total += v
        return total

    def __call__(self, points) -> np.ndarray | float:
        """Evaluate at one point (1-D) or many points (rows of a 2-D array)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            return self.evaluate(pts)
        if pts.ndim != 2 or pts.shape[1] != self.nvars:
            raise ValueError(f"expected shape (N, {self.nvars}), got {pts.shape}")
        if not self._terms:
            return np.zeros(pts.shape[0])
        maxdeg = [max(m[i] for m in self._terms) for i in range(self.nvars)]
        powers = []
        for i in range(self.nvars):
            col = [np.ones(pts.shape[0])]
            for _ in range(maxdeg[i]):
                col.append(col[-1] * pts[:, i])
            powers.append(col)
        out = np.zeros(pts.shape[0])
        for m, c in self._terms.items():
            term = np.full(pts.shape[0], c)
            for i, e in enumerate(m):
                if e:
                    term = term * powers[i][e]
            out += term
        return out

    # -- misc ---------------------------------------------------------------
    def truncate(self, tol: float = 1e-12) -> Polynomial:
        return Polynomial(self.nvars, {m: c for m, c in self._terms.items() if abs(c) > tol})

    def to_terms(self) -> list[dict]:
        return [{"coeff": self._terms[m], "exponents": list(m)} for m in self.monomials()]

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for m in self.monomials():
            factors = [
                f"x{i + 1}" if e == 1 else f"x{i + 1}^{e}" for i, e in enumerate(m) if e
            ]
            c = repr(self._terms[m])
            parts.append(f"{c} * {'*'.join(factors)}" if factors else c)
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"Polynomial(nvars={self.nvars}, {self})"


# Functional forms -------------------------------------------------------------

def add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def differentiate(p: Polynomial, var_index: int) -> Polynomial:
    return p.differentiate(var_index)


def evaluate(p: Polynomial, point: Sequence[float]) -> float:
    return p.evaluate(point)


def truncate(p: Polynomial, tol: float = 1e-12) -> Polynomial:
    return p.truncate(tol)


def variables(nvars: int) -> list[Polynomial]:
    return [Polynomial.variable(nvars, i) for i in range(nvars)]


def lie_derivative(b, f: Sequence, g: Sequence[Sequence], u: Sequence):
    """Sum_i db/dx_i * (f_i + sum_j g_ij u_j).

    Works for any operand types supporting ``differentiate``, ``+`` and ``*``
    (so an unknown ``b`` or ``u`` from the SOS layer can be passed through).
    """
    n = b.nvars
    if len(f) != n:
        raise ValueError(f"f has length {len(f)}, expected {n}")
    if len(g) != n:
        raise ValueError(f"g has {len(g)} rows, expected {n}")
    for row in g:
        if len(row) != len(u):
            raise ValueError(f"g has {len(row)} columns but u has length {len(u)}")
    total = None
    for i in range(n):
        flow = f[i]
        for j, uj in enumerate(u):
            if not _is_zero(g[i][j]):
                flow = flow + g[i][j] * uj
        term = b.differentiate(i) * flow
        total = term if total is None else total + term
    return total


def _is_zero(p) -> bool:
    return isinstance(p, Polynomial) and p.is_zero()


def jacobian_at(f: Sequence[Polynomial], point: Sequence[float]) -> np.ndarray:
    n = len(point)
    jac = np.zeros((len(f), n))
    for i, fi in enumerate(f):
        if fi.nvars != n:
            raise ValueError(f"point has {n} entries, polynomial has {fi.nvars} vars")
        for j in range(n):
            jac[i, j] = fi.differentiate(j).evaluate(point)
    return jac


def evaluate_vector(ps: Sequence[Polynomial], point: Sequence[float]) -> np.ndarray:
    return np.array([p.evaluate(point) for p in ps])


def evaluate_matrix(ps: Sequence[Sequence[Polynomial]], point: Sequence[float]) -> np.ndarray:
    return np.array([[p.evaluate(point) for p in row] for row in ps], dtype=float).reshape(
        len(ps), len(ps[0]) if ps else 0
    )


def basis_size(nvars: int, degree: int) -> int:
    return math.comb(nvars + degree, degree)
