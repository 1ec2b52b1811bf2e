"""Sparse operators on a tensor grid truncating R^d (Dirichlet boundary).

The grid has ``N`` interior nodes per axis at ``-L + i h``, ``i = 1..N``, with
``h = 2L/(N+1)``; the boundary nodes ``i = 0, N+1`` carry the value 0.
Grid functions are flattened in C order (last axis fastest).

``H0 = -div(G grad)`` is assembled from the quadratic form

    q(u) = sum_cells 2^-d sum_corners (grad_c u)^T G(cell centre) (grad_c u),

where ``grad_c u`` collects, for a corner ``c`` of the cell, the differences
along the ``d`` cell edges through that corner.  Every term is a positive
semi-definite form, so the matrix is Hermitian PSD up to roundoff, and for
``G = I`` it reduces to the usual ``2d/h^2`` stencil.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .errors import AssemblyError, InputError
from .medium import MediumSpec, MetricDensitySpec, japanese_bracket

__all__ = [
    "Grid",
    "DiscreteOperator",
    "SpongeSpec",
    "assemble_h0",
    "assemble_laplace_beltrami",
    "assemble_absorption_and_weights",
    "assemble_dilation_generator",
    "assemble_sponge",
    "sponge_damping",
    "apply_dilation",
    "centered_difference",
    "lp_norm",
    "export_triplets",
    "read_triplets",
]

ROLES = ("H0", "LaplaceBeltrami", "Absorption", "Weight", "DilationGenerator", "Sponge", "Commutator")


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on the open box ``(-L, L)^d``."""

    dimension: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if self.dimension < 1:
            raise InputError("grid dimension must be positive")
        if not self.half_width > 0:
            raise InputError("grid half width must be positive")
        if self.points_per_axis < 1:
            raise InputError("need at least one node per axis")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.points_per_axis + 1)

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dimension

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dimension

    @property
    def axis(self) -> np.ndarray:
        """Interior node coordinates along one axis."""
        return -self.half_width + self.h * np.arange(1, self.points_per_axis + 1)

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(N**d, d)``."""
        mesh = np.meshgrid(*([self.axis] * self.dimension), indexing="ij")
        return np.stack([c.ravel() for c in mesh], axis=-1)

    def cell_centers(self) -> np.ndarray:
        """Centres of the ``(N+1)**d`` cells including those touching the boundary."""
        c = -self.half_width + self.h * (np.arange(self.points_per_axis + 1) + 0.5)
        mesh = np.meshgrid(*([c] * self.dimension), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def inner(self, u, v) -> complex:
        """Discrete ``L^2`` inner product ``h^d sum u conj(v)``."""
        return complex(self.h ** self.dimension * np.vdot(v, u))

    def norm(self, u) -> float:
        return float(np.sqrt(self.h ** self.dimension) * np.linalg.norm(u))


@dataclass(frozen=True)
class DiscreteOperator:
    """Sparse matrix on a grid together with its role."""

    matrix: sp.csr_matrix
    role: str
    grid: Grid
    hermitian_flag: bool
    delta: float | None = None
    tolerance: float = 0.0

    def __post_init__(self):
        if self.role not in ROLES:
            raise InputError(f"unknown operator role {self.role!r}")

    @property
    def label(self) -> str:
        return f"Weight({self.delta:g})" if self.role == "Weight" else self.role

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def __matmul__(self, v):
        return self.matrix @ v

    def hermitian_deviation(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0


@dataclass(frozen=True)
class SpongeSpec:
    """Absorbing layer ``-i s ramp`` on the outer shell of width ``w``."""

    width: float | None = None
    strength: float = 1.0

    def resolved_width(self, g: Grid) -> float:
        w = g.half_width / 4.0 if self.width is None else float(self.width)
        if not 0 < w < g.half_width:
            raise InputError("sponge width must lie in (0, L)")
        return w


def _axis_selectors(n: int, h: float):
    """Cell-from-node maps along one axis: left value, right value, difference."""
    rows = np.arange(n + 1)
    left = sp.csr_matrix((np.ones(n), (rows[1:], np.arange(n))), shape=(n + 1, n))
    right = sp.csr_matrix((np.ones(n), (rows[:-1], np.arange(n))), shape=(n + 1, n))
    return left, right, (right - left) / h


def _kron_all(factors):
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), factors)


def _corner_gradients(g: Grid):
    """For each corner ``sigma`` the list of edge-difference matrices ``D_{sigma,j}``."""
    left, right, diff = _axis_selectors(g.points_per_axis, g.h)
    pick = (left, right)
    out = []
    for sigma in itertools.product((0, 1), repeat=g.dimension):
        mats = []
        for j in range(g.dimension):
            factors = [diff if l == j else pick[sigma[l]] for l in range(g.dimension)]
            mats.append(_kron_all(factors))
        out.append(mats)
    return out


def _assemble_form(coef: np.ndarray, g: Grid) -> sp.csr_matrix:
    """Matrix of the quadratic form with cell coefficients ``coef[c, j, k]``."""
    d = g.dimension
    total = sp.csr_matrix((g.size, g.size))
    for mats in _corner_gradients(g):
        for j in range(d):
            for k in range(d):
                c = coef[:, j, k]
                if not np.any(c):
                    continue
                total = total + mats[j].T @ sp.diags(c) @ mats[k]
    total = (total / 2 ** d).tocsr()
    # symmetrise away roundoff from the j/k ordering
    return (0.5 * (total + total.T)).astype(complex).tocsr()


def _sampled_metric(metric, points, d) -> np.ndarray:
    G = np.asarray(metric(points), dtype=float)
    if G.shape != (len(points), d, d):
        raise AssemblyError(f"metric returned shape {G.shape}, expected {(len(points), d, d)}")
    if not np.all(np.isfinite(G)):
        raise AssemblyError("metric has non-finite samples")
    G = 0.5 * (G + np.swapaxes(G, -1, -2))
    if np.min(np.linalg.eigvalsh(G)) <= 0:
        raise AssemblyError("sampled metric is not positive definite")
    return G


def assemble_h0(m: MediumSpec, g: Grid) -> DiscreteOperator:
    """Assemble ``H0 = -div(G grad)`` with Dirichlet boundary."""
    if g.points_per_axis < 3:
        raise InputError("assembly needs N >= 3")
    if g.dimension != m.dimension:
        raise InputError("grid and medium dimensions differ")
    G = _sampled_metric(m.metric, g.cell_centers(), g.dimension)
    return DiscreteOperator(_assemble_form(G, g), "H0", g, True)


def assemble_laplace_beltrami(m: MetricDensitySpec, g: Grid) -> DiscreteOperator:
    """``-Delta_g = -|g|^-1 d_j(|g| g^{jk} d_k)``; ``g^{jk}`` is ``m.base.metric``.

    Self-adjoint for the inner product weighted by ``|g|`` at the nodes.
    """
    if g.points_per_axis < 3:
        raise InputError("assembly needs N >= 3")
    centers = g.cell_centers()
    ginv = _sampled_metric(m.base.metric, centers, g.dimension)
    dens_c = np.asarray(m.density(centers), dtype=float)
    dens_n = np.asarray(m.density(g.nodes()), dtype=float)
    if np.any(dens_c <= 0) or np.any(dens_n <= 0):
        raise AssemblyError("metric density must be positive")
    K = _assemble_form(dens_c[:, None, None] * ginv, g)
    return DiscreteOperator(sp.diags(1.0 / dens_n) @ K, "LaplaceBeltrami", g, False)


def assemble_absorption_and_weights(m: MediumSpec, g: Grid, z_dummy=None, delta: float = 0.0):
    """Return ``(absorption, W(-delta), W(+delta))`` as diagonal operators.

    ``z_dummy`` is accepted for call-site symmetry with the resolvent and ignored.
    """
    nodes = g.nodes()
    a = np.asarray(m.absorption(nodes), dtype=float)
    if a.shape != (g.size,) or not np.all(np.isfinite(a)):
        raise AssemblyError("absorption must return one finite value per node")
    if np.any(a < 0):
        raise AssemblyError("absorption must be non-negative")
    wp = japanese_bracket(nodes) ** delta
    A = DiscreteOperator(sp.diags(a.astype(complex)).tocsr(), "Absorption", g, True)
    Wm = DiscreteOperator(sp.diags((1.0 / wp).astype(complex)).tocsr(), "Weight", g, True, -delta)
    Wp = DiscreteOperator(sp.diags(wp.astype(complex)).tocsr(), "Weight", g, True, delta)
    return A, Wm, Wp


def weight_operator(g: Grid, delta: float) -> DiscreteOperator:
    w = japanese_bracket(g.nodes()) ** delta
    return DiscreteOperator(sp.diags(w.astype(complex)).tocsr(), "Weight", g, True, delta)


def centered_difference(g: Grid, axis: int) -> sp.csr_matrix:
    """Skew-symmetric centred difference ``(u[i+1] - u[i-1]) / 2h`` along ``axis``."""
    if not 0 <= axis < g.dimension:
        raise InputError("axis out of range")
    n = g.points_per_axis
    one = np.ones(n - 1)
    D = sp.diags([-one, one], [-1, 1], shape=(n, n)) / (2 * g.h)
    eye = sp.identity(n, format="csr")
    return _kron_all([D if l == axis else eye for l in range(g.dimension)])


def assemble_dilation_generator(g: Grid) -> DiscreteOperator:
    """``A = -(i/2) sum_j (X_j D_j + D_j X_j)`` with centred ``D_j``; exactly Hermitian."""
    if g.points_per_axis < 3:
        raise InputError("assembly needs N >= 3")
    nodes = g.nodes()
    S = sp.csr_matrix((g.size, g.size))
    for j in range(g.dimension):
        D = centered_difference(g, j)
        X = sp.diags(nodes[:, j])
        S = S + X @ D + D @ X
    M = (-0.5j * S).tocsr()
    op = DiscreteOperator(M, "DilationGenerator", g, True, tolerance=1e-10)
    dev = op.hermitian_deviation()
    scale = max(np.max(np.abs(M.data)), 1.0) if M.nnz else 1.0
    if dev > 1e-10 * scale:
        raise AssemblyError(f"dilation generator not Hermitian (deviation {dev:.2e})")
    return op


def apply_dilation(u, theta: float, g: Grid):
    """Return ``(e^{d theta/2} u(e^theta x), escaped)`` on the grid.

    Off-grid values use cubic spline interpolation of ``u`` extended by zero
    (the Dirichlet boundary values included).  ``escaped`` is True when part
    of ``u`` is pushed out of the box by the rescaling.
    """
    if abs(theta) > 3:
        raise InputError("|theta| must be at most 3")
    u = np.asarray(u)
    d, n = g.dimension, g.points_per_axis
    arr = np.pad(u.reshape(g.shape), 1)
    scale = np.exp(theta)
    idx = (scale * g.axis + g.half_width) / g.h
    coords = np.stack(np.meshgrid(*([idx] * d), indexing="ij"))

    def interp(values):
        return ndimage.map_coordinates(values, coords, order=3, mode="constant", cval=0.0)

    if np.iscomplexobj(arr):
        out = interp(arr.real) + 1j * interp(arr.imag)
    else:
        out = interp(arr)
    out = np.exp(d * theta / 2) * out.ravel()
    # mass of u at points y whose image y / e^theta lies outside the box
    outside = np.max(np.abs(g.nodes()), axis=1) / scale >= g.half_width
    big = np.max(np.abs(u)) if u.size else 0.0
    escaped = bool(big > 0 and np.any(np.abs(u[outside]) > 1e-10 * big))
    return out, escaped


def lp_norm(u, g: Grid, p: float = 2.0) -> float:
    """Discrete ``L^p`` norm ``(h^d sum |u|^p)^(1/p)``."""
    return float((g.h ** g.dimension * np.sum(np.abs(u) ** p)) ** (1.0 / p))


def sponge_ramp(g: Grid, width: float) -> np.ndarray:
    """Quintic smoothstep in the box distance ``max_j |x_j|``, 0 inside, 1 at the wall."""
    dist = np.max(np.abs(g.nodes()), axis=1)
    s = np.clip((dist - (g.half_width - width)) / width, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def assemble_sponge(spec: SpongeSpec, g: Grid) -> DiscreteOperator:
    """Diagonal ``-i s ramp(x)``."""
    ramp = sponge_ramp(g, spec.resolved_width(g))
    M = sp.diags(-1j * spec.strength * ramp).tocsr()
    return DiscreteOperator(M, "Sponge", g, False)


def sponge_damping(spec: SpongeSpec, g: Grid) -> DiscreteOperator:
    """Real diagonal ``s ramp(x)``, the sponge as extra damping for time stepping."""
    ramp = sponge_ramp(g, spec.resolved_width(g))
    return DiscreteOperator(sp.diags(spec.strength * ramp).tocsr(), "Absorption", g, True)


def export_triplets(op: DiscreteOperator, path) -> None:
    """Write ``row col re im`` lines (0-based indices) for the stored entries."""
    coo = op.matrix.tocoo()
    table = np.column_stack([coo.row, coo.col, coo.data.real, coo.data.imag])
    header = f"role={op.label} d={op.grid.dimension} L={op.grid.half_width!r} N={op.grid.points_per_axis}"
    np.savetxt(path, table, fmt=["%d", "%d", "%.17g", "%.17g"], header=header)


def read_triplets(path, size: int) -> sp.csr_matrix:
    table = np.loadtxt(path, ndmin=2)
    if table.size == 0:
        return sp.csr_matrix((size, size), dtype=complex)
    return sp.csr_matrix((table[:, 2] + 1j * table[:, 3],
                          (table[:, 0].astype(int), table[:, 1].astype(int))),
                         shape=(size, size))
