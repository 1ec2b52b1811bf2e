"""The resolvent ``R(z) = (H0 - i z a - z^2)^-1``, its derivatives and norms.

Derivatives are handled symbolically: ``R^(n)(z)`` is a linear combination of
products ``z^k R a^{j_1} R ... a^{j_m} R`` with ``j_i in {0, 1}``, obtained by
repeated use of ``R' = i R a R + 2 z R^2``.  Coefficients are Gaussian
integers and are stored as integer pairs, so merging like terms is exact.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.fft import dstn, idstn

from .discretize import DiscreteOperator, Grid, centered_difference
from .errors import InputError, PowerIterationError, SolverError

__all__ = [
    "ResolventTerm",
    "TermExpansion",
    "SolveReport",
    "ResolventSolver",
    "NormReport",
    "BoundReport",
    "QuadraticReport",
    "derivative_terms",
    "apply_resolvent",
    "apply_derivative_composite",
    "power_norm",
    "weighted_norm_report",
    "weighted_norm_estimate",
    "dissipative_bound",
    "dissipative_bound_check",
    "quadratic_estimate_check",
]

DENSE_LIMIT = 1024
SPARSE_LIMIT = 200_000
SPARSE_LIMIT_3D = 30_000


# ---------------------------------------------------------------------------
# symbolic layer


def _gmul(p, q):
    return (p[0] * q[0] - p[1] * q[1], p[0] * q[1] + p[1] * q[0])


def _gadd(p, q):
    return (p[0] + q[0], p[1] + q[1])


@dataclass(frozen=True)
class ResolventTerm:
    """``coeff * z^k R a^{word[0]} R ... a^{word[-1]} R`` (``len(word) + 1`` factors R)."""

    coeff: tuple
    k: int
    word: tuple

    @property
    def m(self) -> int:
        return len(self.word)

    @property
    def value(self) -> complex:
        return complex(self.coeff[0], self.coeff[1])

    def order(self) -> int:
        """Derivative order ``n = 2m - k - sum(word)`` this term belongs to."""
        return 2 * self.m - self.k - sum(self.word)

    def __str__(self) -> str:
        factors = "R" + "".join(("aR" if j else "R") for j in self.word)
        return f"({self.coeff[0]}{self.coeff[1]:+d}i) z^{self.k} {factors}"


@dataclass(frozen=True)
class TermExpansion:
    order: int
    terms: tuple

    def __post_init__(self):
        keys = set()
        for t in self.terms:
            if t.order() != self.order:
                raise ValueError(f"term {t} does not belong to order {self.order}")
            if (t.k, t.word) in keys:
                raise ValueError("like terms must be merged")
            keys.add((t.k, t.word))

    def __len__(self) -> int:
        return len(self.terms)

    def as_dict(self) -> dict:
        return {(t.k, t.word): t.value for t in self.terms}

    def uses_absorption(self) -> bool:
        return any(any(t.word) for t in self.terms)


def _differentiate(table: dict) -> dict:
    out: dict = {}

    def add(key, c):
        if c == (0, 0):
            return
        out[key] = _gadd(out.get(key, (0, 0)), c)
        if out[key] == (0, 0):
            del out[key]

    for (k, word), c in table.items():
        if k > 0:
            add((k - 1, word), (c[0] * k, c[1] * k))
        for p in range(len(word) + 1):
            add((k, word[:p] + (1,) + word[p:]), _gmul(c, (0, 1)))
            add((k + 1, word[:p] + (0,) + word[p:]), (2 * c[0], 2 * c[1]))
    return out


def derivative_terms(n: int) -> TermExpansion:
    """Expansion of ``R^(n)(z)`` with like terms merged (``0 <= n <= 8``)."""
    if not isinstance(n, (int, np.integer)) or n < 0 or n > 8:
        raise InputError("derivative order must be an integer in [0, 8]")
    table = {(0, ()): (1, 0)}
    for _ in range(n):
        table = _differentiate(table)
    terms = tuple(ResolventTerm(c, k, w) for (k, w), c in sorted(table.items()))
    return TermExpansion(int(n), terms)


# ---------------------------------------------------------------------------
# linear solves


@dataclass(frozen=True)
class SolveReport:
    residual: float
    iterations: int
    method: str


class _DstPreconditioner:
    """``(-Delta_h - shift)^-1`` for the free Dirichlet Laplacian via DST-I."""

    def __init__(self, grid: Grid, shift: complex):
        n, h = grid.points_per_axis, grid.h
        lam1 = (2.0 - 2.0 * np.cos(np.pi * np.arange(1, n + 1) / (n + 1))) / h ** 2
        lam = np.zeros(grid.shape)
        for j in range(grid.dimension):
            shape = [1] * grid.dimension
            shape[j] = n
            lam = lam + lam1.reshape(shape)
        self.shape = grid.shape
        self.inv = 1.0 / (lam - shift)

    def apply(self, v, adjoint=False):
        V = np.reshape(v, self.shape)
        inv = np.conj(self.inv) if adjoint else self.inv
        return idstn(dstn(V, type=1) * inv, type=1).ravel()


class ResolventSolver:
    """Solves ``(H0 + S - i z a - z^2) w = v`` and the adjoint system.

    ``S`` is an optional sponge.  ``method`` is ``"auto"``, ``"dense"``,
    ``"sparse"`` or ``"iterative"``; ``"auto"`` picks dense LU for at most
    ``DENSE_LIMIT`` unknowns, sparse LU up to ``SPARSE_LIMIT`` (``SPARSE_LIMIT_3D``
    for d >= 3) and preconditioned GMRES beyond.  Factorisations are cached
    per ``z`` (least recently used, ``cache_size`` entries).
    """

    def __init__(self, h0: DiscreteOperator, absorption: DiscreteOperator | None = None,
                 sponge: DiscreteOperator | None = None, method: str = "auto",
                 tol: float = 1e-10, cache_size: int = 4, precond_damping: float = 0.0,
                 restart: int = 200, maxiter: int = 4000):
        self.grid = h0.grid
        self.size = h0.matrix.shape[0]
        base = h0.matrix.astype(complex)
        if sponge is not None:
            base = base + sponge.matrix
        self.base = base.tocsr()
        if absorption is None:
            self.a = np.zeros(self.size)
        else:
            self.a = np.real(absorption.diagonal())
        self.has_absorption = bool(np.any(self.a))
        self.a_matrix = sp.diags(self.a.astype(complex)).tocsr()
        self.tol = tol
        self.precond_damping = precond_damping
        self.restart = restart
        self.maxiter = maxiter
        self.method = self._choose(method)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def _choose(self, method: str) -> str:
        if method not in ("auto", "dense", "sparse", "iterative"):
            raise InputError(f"unknown solver method {method!r}")
        if method != "auto":
            return method
        if self.size <= DENSE_LIMIT:
            return "dense"
        limit = SPARSE_LIMIT if self.grid.dimension <= 2 else SPARSE_LIMIT_3D
        return "sparse" if self.size <= limit else "iterative"

    @property
    def method_label(self) -> str:
        return {"dense": "dense-direct", "sparse": "sparse-direct", "iterative": "iterative"}[self.method]

    def matrix(self, z: complex) -> sp.csr_matrix:
        z = complex(z)
        return (self.base - 1j * z * self.a_matrix - z * z * sp.identity(self.size)).tocsr()

    def _factor(self, z: complex):
        with self._lock:
            if z in self._cache:
                self._cache.move_to_end(z)
                return self._cache[z]
        M = self.matrix(z)
        if self.method == "dense":
            fac = sla.lu_factor(M.toarray(), check_finite=False)
        elif self.method == "sparse":
            fac = spla.splu(M.tocsc())
        else:
            shift = z * z * (1.0 + 1j * self.precond_damping)
            fac = _DstPreconditioner(self.grid, shift)
        with self._lock:
            self._cache[z] = (M, fac)
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return M, fac

    def solve(self, z: complex, v, adjoint: bool = False):
        """Return ``(w, SolveReport)`` with ``M(z) w = v`` (``M(z)^H w = v`` if adjoint)."""
        z = complex(z)
        if not z.imag > 0:
            raise InputError("the resolvent needs Im z > 0")
        v = np.asarray(v, dtype=complex)
        if not np.all(np.isfinite(v)):
            raise InputError("right-hand side must be finite")
        vnorm = np.linalg.norm(v)
        if vnorm == 0:
            return np.zeros_like(v), SolveReport(0.0, 0, self.method_label)
        M, fac = self._factor(z)
        Mop = M.conj().T.tocsr() if adjoint else M
        iterations = 1
        if self.method == "dense":
            w = sla.lu_solve(fac, v, trans=2 if adjoint else 0, check_finite=False)
        elif self.method == "sparse":
            w = fac.solve(v, trans="H" if adjoint else "N")
        else:
            count = [0]

            def cb(_):
                count[0] += 1

            P = spla.LinearOperator(M.shape, lambda x: fac.apply(x, adjoint), dtype=complex)
            w, info = spla.gmres(Mop, v, M=P, rtol=self.tol, atol=0.0, restart=self.restart,
                                 maxiter=self.maxiter, callback=cb, callback_type="pr_norm")
            iterations = count[0]
            if info != 0:
                res = np.linalg.norm(Mop @ w - v) / vnorm
                raise SolverError(f"GMRES did not converge at z={z}", res)
        res = float(np.linalg.norm(Mop @ w - v) / vnorm)
        limit = max(self.tol, 1e-12) * (10.0 if self.method == "iterative" else 1e3)
        if not np.isfinite(res) or res > limit:
            raise SolverError(f"solve at z={z} missed the tolerance", res)
        return w, SolveReport(res, iterations, self.method_label)


def apply_resolvent(h0: DiscreteOperator, absorption: DiscreteOperator | None, z: complex, v,
                    sponge: DiscreteOperator | None = None, method: str = "auto",
                    tol: float = 1e-10):
    """``R(z) v`` with its solve report."""
    return ResolventSolver(h0, absorption, sponge, method, tol).solve(z, v)


# ---------------------------------------------------------------------------
# composite derivatives


def apply_derivative_composite(solver: ResolventSolver, expansion: TermExpansion, z: complex,
                               v, adjoint: bool = False, reports: list | None = None):
    """Apply ``R^(n)(z)`` (or its adjoint) to ``v`` term by term.

    Products sharing a right-hand factor string reuse each other's solves, so
    the number of solves equals the number of distinct word suffixes.
    """
    z = complex(z)
    v = np.asarray(v, dtype=complex)
    a = solver.a
    memo: dict = {}

    def solve(x):
        w, rep = solver.solve(z, x, adjoint)
        if reports is not None:
            reports.append(rep)
        return w

    def chain(word):
        # R a^{word[0]} R ... a^{word[-1]} R v
        if word in memo:
            return memo[word]
        if not word:
            out = solve(v)
        else:
            inner = chain(word[1:])
            out = solve(a * inner if word[0] else inner)
        memo[word] = out
        return out

    total = np.zeros_like(v)
    zk = np.conj(z) if adjoint else z
    for term in expansion.terms:
        if any(term.word) and not solver.has_absorption:
            continue
        word = tuple(reversed(term.word)) if adjoint else term.word
        c = np.conj(term.value) if adjoint else term.value
        total += c * zk ** term.k * chain(word)
    return total


# ---------------------------------------------------------------------------
# norm estimation


def power_norm(apply: Callable, apply_adjoint: Callable, size: int, seed: int = 0,
               rtol: float = 1e-3, maxiter: int = 200):
    """Largest singular value of ``T`` by power iteration on ``T^H T``.

    Returns ``(sigma, iterations)``.  Iteration stops once the relative change
    of the estimate falls below ``rtol / 10``; reaching ``maxiter`` is
    accepted if the last change is below ``rtol`` and raises otherwise.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    x /= np.linalg.norm(x)
    sigma_old = None
    change = np.inf
    for it in range(1, maxiter + 1):
        y = apply(x)
        sigma = float(np.linalg.norm(y))
        if sigma == 0.0:
            return 0.0, it
        x = apply_adjoint(y)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return sigma, it
        x /= nx
        if sigma_old is not None:
            change = abs(sigma - sigma_old) / sigma
            if change <= 0.1 * rtol:
                return sigma, it
        sigma_old = sigma
    if change <= rtol:
        return sigma, maxiter
    raise PowerIterationError(f"no convergence after {maxiter} iterations (last change {change:.2e})")


@dataclass
class NormReport:
    value: float
    iterations: int
    residual: float
    method: str


def _weight(grid: Grid, delta: float) -> np.ndarray:
    from .medium import japanese_bracket

    return japanese_bracket(grid.nodes()) ** (-float(delta))


def weighted_norm_report(solver: ResolventSolver, n: int, z: complex, delta1: float = 0.0,
                         delta2: float = 0.0, deriv: int | None = None, seed: int = 0,
                         rtol: float = 1e-3, maxiter: int = 200,
                         left: np.ndarray | None = None, right: np.ndarray | None = None) -> NormReport:
    """Norm of ``T = W(-delta1) D^alpha R^(n)(z) W(-delta2)``.

    ``deriv`` is ``None`` or an axis index for the centred difference ``D``.
    ``left``/``right`` replace the weight diagonals when given.
    """
    z = complex(z)
    if not z.imag > 0:
        raise InputError("norm estimation needs Im z > 0")
    grid = solver.grid
    expansion = derivative_terms(n)
    w1 = _weight(grid, delta1) if left is None else np.asarray(left)
    w2 = _weight(grid, delta2) if right is None else np.asarray(right)
    D = None if deriv is None else centered_difference(grid, int(deriv))
    reports: list = []

    def apply(x):
        y = apply_derivative_composite(solver, expansion, z, w2 * x, reports=reports)
        if D is not None:
            y = D @ y
        return w1 * y

    def apply_adjoint(y):
        y = np.conj(w1) * y
        if D is not None:
            y = D.T @ y
        return np.conj(w2) * apply_derivative_composite(solver, expansion, z, y, adjoint=True,
                                                        reports=reports)

    sigma, its = power_norm(apply, apply_adjoint, grid.size, seed, rtol, maxiter)
    residual = max((r.residual for r in reports), default=0.0)
    return NormReport(sigma, its, residual, solver.method_label)


def weighted_norm_estimate(h0: DiscreteOperator, absorption: DiscreteOperator | None, n: int,
                           z: complex, delta1: float = 0.0, delta2: float = 0.0,
                           deriv: int | None = None, sponge: DiscreteOperator | None = None,
                           **kwargs) -> float:
    """Estimated ``||<x>^-delta1 D^alpha R^(n)(z) <x>^-delta2||``."""
    solver = ResolventSolver(h0, absorption, sponge)
    return weighted_norm_report(solver, n, z, delta1, delta2, deriv, **kwargs).value


def dissipative_bound(z: complex) -> tuple:
    """``(bound, branch)`` for ``||R(z)||`` valid for ``a >= 0``, ``H0 >= 0``."""
    z = complex(z)
    if not z.imag > 0:
        raise InputError("the bound needs Im z > 0")
    if abs(z.real) >= z.imag / 2:
        return 1.0 / (2.0 * abs(z.real) * z.imag), "real"
    return 4.0 / (3.0 * z.imag ** 2), "imaginary"


@dataclass
class BoundReport:
    z: complex
    estimate: float
    bound: float
    branch: str
    margin: float
    passed: bool


def dissipative_bound_check(h0: DiscreteOperator, absorption: DiscreteOperator | None,
                            z: complex, solver: ResolventSolver | None = None) -> BoundReport:
    """Compare the estimated ``||R(z)||`` with the dissipative bound."""
    solver = solver or ResolventSolver(h0, absorption)
    est = weighted_norm_report(solver, 0, z).value
    bound, branch = dissipative_bound(z)
    return BoundReport(complex(z), est, bound, branch, bound - est, est <= bound * (1 + 1e-12))


@dataclass
class QuadraticReport:
    z: complex
    lhs: float
    rhs: float
    passed: bool


def quadratic_estimate_check(h0: DiscreteOperator, absorption: DiscreteOperator, z: complex,
                             Q: DiscreteOperator | np.ndarray, slack: float = 0.05,
                             solver: ResolventSolver | None = None,
                             rtol: float = 1e-3) -> QuadraticReport:
    """Check ``|z| ||sqrt(a) R(z) Q||^2 <= sqrt(2) ||Q* R(z) Q||`` (with slack).

    ``Q`` is a diagonal operator (for instance a weight).  Both norms come from
    power iteration with tolerance ``rtol``; clustered singular values can leave
    the estimates slightly low, so tighten ``rtol`` for close comparisons.
    """
    solver = solver or ResolventSolver(h0, absorption)
    q = Q.diagonal() if isinstance(Q, DiscreteOperator) else np.asarray(Q)
    sqrt_a = np.sqrt(solver.a)
    if not np.any(sqrt_a):
        rhs = weighted_norm_report(solver, 0, z, left=np.conj(q), right=q, rtol=rtol).value
        return QuadraticReport(complex(z), 0.0, np.sqrt(2) * rhs, True)
    lhs = abs(z) * weighted_norm_report(solver, 0, z, left=sqrt_a, right=q, rtol=rtol).value ** 2
    rhs = np.sqrt(2) * weighted_norm_report(solver, 0, z, left=np.conj(q), right=q, rtol=rtol).value
    return QuadraticReport(complex(z), lhs, rhs, lhs <= (1 + slack) * rhs)
