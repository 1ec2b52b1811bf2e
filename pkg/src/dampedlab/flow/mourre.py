"""Discrete positive-commutator (Mourre) checks on a spectral window."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ..discretize import DiscreteOperator, Grid, _assemble_form
from ..errors import InputError
from ..medium import MediumSpec

__all__ = [
    "CommutatorReport",
    "mourre_commutator_check",
    "symbol_commutator",
    "commutator_defect",
    "write_mourre_csv",
]

DENSE_MAX = 4096


@dataclass
class CommutatorReport:
    """Smallest eigenvalue of ``P (i[H, A] + beta a) P`` on ``range(P)``, ``P = 1_J(H)``."""

    window: tuple
    alpha_estimate: float
    beta_used: float
    projector_rank: int
    eigenvalues: np.ndarray

    @property
    def positive(self) -> bool:
        return self.projector_rank > 0 and self.alpha_estimate > 0


def _dense(op) -> np.ndarray:
    M = op.matrix if isinstance(op, DiscreteOperator) else op
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def _spectral_data(H: np.ndarray):
    return sla.eigh(H)


def symbol_commutator(m: MediumSpec, g: Grid, step: float = 1e-6) -> DiscreteOperator:
    """Form assembly of ``-div((2G - x . grad G) grad)``.

    This quantizes ``{p, <x, xi>}`` directly, the operator that ``i[H0, A]``
    equals on the whole space.  On a bounded box the matrix commutator differs
    from it by boundary terms; for every eigenvector ``phi`` of ``H0`` one has
    ``<phi, i[H0, A] phi> = 0``.
    """
    centers = g.cell_centers()
    G = np.asarray(m.metric(centers), dtype=float)
    radial = np.zeros_like(G)
    hs = step * np.maximum(1.0, np.linalg.norm(centers, axis=1))
    for k in range(g.dimension):
        shift = np.zeros_like(centers)
        shift[:, k] = hs
        dG = (np.asarray(m.metric(centers + shift)) - np.asarray(m.metric(centers - shift))) / (2 * hs)[:, None, None]
        radial += centers[:, k, None, None] * dG
    coef = 2.0 * G - radial
    coef = 0.5 * (coef + np.swapaxes(coef, -1, -2))
    return DiscreteOperator(_assemble_form(coef, g), "Commutator", g, True)


def mourre_commutator_check(H, A, a=None, J: tuple = (0.5, 1.5), beta=0.0,
                            spectral=None, commutator=None) -> CommutatorReport | list:
    """Projected commutator ``1_J(H) (i[H, A] + beta a) 1_J(H)``.

    By default ``i[H, A]`` is the matrix commutator.  Its compression to
    eigenvectors of ``H`` has zero diagonal, so with ``beta = 0`` the
    estimate is never positive on a bounded grid; ``commutator`` replaces it
    by a given operator such as :func:`symbol_commutator`.

    Parameters
    ----------
    H, A : DiscreteOperator or array
        Hermitian operator and conjugate operator.
    a : DiscreteOperator, array or None
        Non-negative potential term (absorption); ``None`` means zero.
    J : (lo, hi)
        Closed spectral window.
    beta : float or sequence of floats
        A sequence returns one report per value, sharing a single eigensolve.
    spectral : (w, V), optional
        Precomputed eigendecomposition of ``H``.
    commutator : DiscreteOperator or array, optional
        Operator used in place of ``i[H, A]``.

    Returns
    -------
    CommutatorReport or list of them.
    """
    Hd = _dense(H)
    n = Hd.shape[0]
    if n > DENSE_MAX:
        raise InputError(f"dense eigendecomposition limited to {DENSE_MAX} unknowns, got {n}")
    if Hd.shape != (n, n):
        raise InputError("H must be square")
    lo, hi = J
    if lo > hi:
        raise InputError("spectral window must satisfy lo <= hi")
    Ad = _dense(A)
    ad = np.zeros((n, n)) if a is None else _dense(a)
    w, V = _spectral_data(Hd) if spectral is None else spectral
    sel = (w >= lo) & (w <= hi)
    P = V[:, sel]
    rank = int(P.shape[1])
    betas = np.atleast_1d(np.asarray(beta, dtype=float))
    if np.any(betas < 0):
        raise InputError("beta must be non-negative")
    reports = []
    if rank == 0:
        reports = [CommutatorReport((lo, hi), np.inf, float(b), 0, np.zeros(0)) for b in betas]
    else:
        if commutator is None:
            # P^H i(HA - AH) P with H P = P diag(w)
            PAP = P.conj().T @ (Ad @ P)
            ws = w[sel]
            comm = 1j * (ws[:, None] * PAP - PAP * ws[None, :])
        else:
            comm = P.conj().T @ (_dense(commutator) @ P)
        comm = 0.5 * (comm + comm.conj().T)
        potential = P.conj().T @ (ad @ P)
        potential = 0.5 * (potential + potential.conj().T)
        for b in betas:
            ev = sla.eigvalsh(comm + b * potential)
            reports.append(CommutatorReport((lo, hi), float(ev[0]), float(b), rank, ev))
    return reports if np.ndim(beta) else reports[0]


def commutator_defect(H, A, u) -> float:
    """``||(i[H, A] - 2H) u|| / ||u||`` for the vector ``u``."""
    Hm = H.matrix if isinstance(H, DiscreteOperator) else H
    Am = A.matrix if isinstance(A, DiscreteOperator) else A
    u = np.asarray(u, dtype=complex)
    r = 1j * (Hm @ (Am @ u) - Am @ (Hm @ u)) - 2.0 * (Hm @ u)
    return float(np.linalg.norm(r) / np.linalg.norm(u))


def write_mourre_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j_low", "j_high", "beta", "alpha_estimate", "projector_rank"])
        for r in reports:
            w.writerow([repr(float(r.window[0])), repr(float(r.window[1])), repr(r.beta_used),
                        repr(r.alpha_estimate), r.projector_rank])
