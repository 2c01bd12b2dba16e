"""Displacement vectors, bases and basis projection for BDTs.

A basis anchors ``d'`` linearly independent displacement vectors at an origin
tree; applying coefficients moves every origin branch in the birth/death
plane. Projection recovers the coefficients that best reproduce a target
tree by alternating optimal assignments with a least-squares update. When
the assignment sends augmented diagonal points to estimate branches, the
diagonal-projected basis rows fold into the pseudoinverse, so all four
match cases are handled by one solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metric
from .metric import DIAGONAL, Assignment
from .topology import BDT

__all__ = ["BDTVector", "BDTBasis", "apply", "vectorize", "reorder",
           "project", "projection_error"]

RANK_TOL = 1e-10


@dataclass
class BDTVector:
    """Per-branch (d_birth, d_death) displacements anchored at an origin."""

    origin: BDT
    displacements: np.ndarray

    def __post_init__(self):
        self.displacements = np.asarray(self.displacements, dtype=np.float64)
        if self.displacements.size != 2 * self.origin.size:
            raise ValueError("displacement length must be 2 * |origin|")


@dataclass
class BDTBasis:
    origin: BDT
    vectors: np.ndarray  # (2|origin|, dim), one displacement vector per column
    checked: bool = True  # rank validation; internal callers may skip it

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != 2 * self.origin.size:
            raise ValueError("vectors must be a 2|origin| x d' matrix")
        if (self.checked and self.dim
                and np.linalg.matrix_rank(self.vectors, tol=RANK_TOL) < self.dim):
            raise ValueError("basis vectors are not linearly independent")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def vectorize(bdt: BDT) -> np.ndarray:
    """Concatenated (birth, death) coordinates in branch-index order."""
    return bdt.coords()


def apply(basis: BDTBasis, alpha: np.ndarray) -> BDT:
    """Origin displaced by the weighted basis columns; no validity projection."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (basis.dim,):
        raise ValueError(f"alpha must have length {basis.dim}")
    coords = basis.origin.coords() + basis.vectors @ alpha
    return BDT(coords[0::2], coords[1::2], basis.origin.parent.copy(),
               basis.origin.normalized, basis.origin.scale)


def reorder(b: BDT, bhat: BDT, phi: Assignment) -> np.ndarray:
    """Vector of b's coordinates ordered by bhat's branches under phi.

    Estimate branches matched from the diagonal receive the coordinates of
    their own diagonal projection (the augmented point they were paired
    with).
    """
    partner = phi.right_partner()
    out = np.empty(2 * bhat.size)
    for j in range(bhat.size):
        if j not in partner:
            raise ValueError(f"assignment does not cover branch {j}")
        l = partner[j]
        if l == DIAGONAL:
            mid = (bhat.births[j] + bhat.deaths[j]) / 2.0
            out[2 * j], out[2 * j + 1] = mid, mid
        else:
            out[2 * j], out[2 * j + 1] = b.births[l], b.deaths[l]
    return out


def _update_alpha(b: BDT, basis: BDTBasis, phi: Assignment) -> np.ndarray:
    """Least-squares coefficients for a fixed assignment.

    Rows belonging to created branches (matched from the diagonal) use the
    diagonal-folded basis rows and the origin's own diagonal gap as target.
    """
    origin = basis.origin
    partner = phi.right_partner()
    m = basis.vectors.copy()
    r = np.empty(2 * origin.size)
    for j in range(origin.size):
        l = partner.get(j, DIAGONAL)
        rb, rd = 2 * j, 2 * j + 1
        if l != DIAGONAL:
            r[rb] = b.births[l] - origin.births[j]
            r[rd] = b.deaths[l] - origin.deaths[j]
        else:
            half = (origin.deaths[j] - origin.births[j]) / 2.0
            r[rb], r[rd] = half, -half
            row_mean = (m[rb] + m[rd]) / 2.0
            m[rb] -= row_mean
            m[rd] -= row_mean
    alpha, *_ = np.linalg.lstsq(m, r, rcond=RANK_TOL)
    return alpha


def project(b: BDT, basis: BDTBasis, n_it: int = 2, return_trace: bool = False):
    """Assignment/Update iterations; returns (alpha, squared error).

    The error is evaluated under a fresh optimal assignment of the final
    coefficients, so it always equals the squared tree distance between the
    target and its reconstruction.
    """
    alpha = np.zeros(basis.dim)
    trace = []
    phi = None
    for _ in range(n_it):
        estimate = apply(basis, alpha)
        d, phi = metric.wasserstein_bdt(b, estimate)
        trace.append(d * d)
        alpha = _update_alpha(b, basis, phi)
    d, phi = metric.wasserstein_bdt(b, apply(basis, alpha))
    trace.append(d * d)
    error = d * d
    if return_trace:
        return alpha, error, trace, phi
    return alpha, error


def projection_error(b: BDT, basis: BDTBasis, alpha: np.ndarray) -> float:
    """Squared tree distance between the target and the applied coefficients."""
    d, _ = metric.wasserstein_bdt(b, apply(basis, alpha))
    return d * d
