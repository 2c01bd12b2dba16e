"""Barycenters and k-means clustering in the tree metric space.

The barycenter alternates optimal assignments with closed-form coordinate
updates (arithmetic means, diagonal targets included). Structural edits,
adding a slot for a widely shared feature or dropping one that mostly maps
to the diagonal, are gated on a strict energy check so the dissimilarity
energy never increases from one iteration to the next.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metric
from .metric import DIAGONAL
from .topology import BDT, NONE

__all__ = ["ClusteringVector", "barycenter", "frechet_energy", "wasserstein_kmeans"]


@dataclass
class ClusteringVector:
    n: int
    k: int
    member_of: list[int]

    def __post_init__(self):
        if len(self.member_of) != self.n:
            raise ValueError("member_of must have n entries")
        if any(not 0 <= c < self.k for c in self.member_of):
            raise ValueError("cluster id out of range")

    def one_hot(self) -> np.ndarray:
        """Flat indicator layout: entry i*k + j is 1 iff member i is in cluster j."""
        out = np.zeros(self.n * self.k)
        for i, c in enumerate(self.member_of):
            out[i * self.k + c] = 1.0
        return out

    def canonical(self) -> list[int]:
        """Relabel clusters by order of first appearance."""
        remap: dict[int, int] = {}
        out = []
        for c in self.member_of:
            if c not in remap:
                remap[c] = len(remap)
            out.append(remap[c])
        return out


def frechet_energy(candidate: BDT, ensemble: list[BDT]) -> float:
    return sum(metric.wasserstein_bdt(candidate, m)[0] ** 2 for m in ensemble)


def _mean_update(candidate: BDT, ensemble, assignments) -> BDT:
    births = np.zeros(candidate.size)
    deaths = np.zeros(candidate.size)
    counts = np.zeros(candidate.size)
    for member, phi in zip(ensemble, assignments):
        partner = phi.left_partner()
        for b in range(candidate.size):
            r = partner.get(b, DIAGONAL)
            if r != DIAGONAL:
                births[b] += member.births[r]
                deaths[b] += member.deaths[r]
            else:
                mid = (candidate.births[b] + candidate.deaths[b]) / 2.0
                births[b] += mid
                deaths[b] += mid
            counts[b] += 1
    out = candidate.copy()
    out.births = births / counts
    out.deaths = deaths / counts
    # the root keeps spanning the global interval of the convention in use
    root = candidate.root
    out.births[root] = candidate.births[root]
    out.deaths[root] = candidate.deaths[root]
    return out


def _diag_match_counts(candidate: BDT, assignments) -> np.ndarray:
    counts = np.zeros(candidate.size, dtype=int)
    for phi in assignments:
        partner = phi.left_partner()
        for b in range(candidate.size):
            if partner.get(b, DIAGONAL) == DIAGONAL:
                counts[b] += 1
    return counts


def _drop_branch(bdt: BDT, idx: int) -> BDT:
    keep = [i for i in range(bdt.size) if i != idx]
    remap = {old: new for new, old in enumerate(keep)}
    parent = []
    for i in keep:
        p = int(bdt.parent[i])
        if p == idx:
            p = int(bdt.parent[idx])
        parent.append(NONE if p == NONE else remap[p])
    return BDT(bdt.births[keep], bdt.deaths[keep], np.array(parent, dtype=np.int64),
               bdt.normalized, bdt.scale)


def _most_persistent_destroyed(candidate: BDT, ensemble, assignments):
    """Largest-persistence member branch currently mapped to the diagonal."""
    best = None
    for mi, (member, phi) in enumerate(zip(ensemble, assignments)):
        matched = {r for l, r in phi.matches if l != DIAGONAL and r != DIAGONAL}
        for r in range(member.size):
            if r in matched or r == member.root:
                continue
            pers = float(member.deaths[r] - member.births[r])
            if best is None or pers > best[0]:
                best = (pers, mi, r)
    return best


def _add_branch(candidate: BDT, member: BDT, branch: int, phi) -> BDT:
    """Graft a member branch onto the candidate under its mapped parent."""
    right = phi.right_partner()
    p = int(member.parent[branch])
    while p != NONE and right.get(p, DIAGONAL) == DIAGONAL:
        p = int(member.parent[p])
    anchor = candidate.root if p == NONE else right[p]
    return BDT(
        np.append(candidate.births, member.births[branch]),
        np.append(candidate.deaths, member.deaths[branch]),
        np.append(candidate.parent, anchor),
        candidate.normalized,
        candidate.scale,
    )


def barycenter(ensemble: list[BDT], max_iterations: int = 50,
               rel_tol: float = 0.01) -> BDT:
    """Iterative Fréchet mean seeded at the member closest to all others."""
    if not ensemble:
        raise ValueError("empty ensemble")
    if len(ensemble) == 1:
        return ensemble[0].copy()
    n = len(ensemble)
    totals = np.zeros(n)
    for i in range(n):
        for j in range(i + 1, n):
            d, _ = metric.wasserstein_bdt(ensemble[i], ensemble[j])
            totals[i] += d * d
            totals[j] += d * d
    candidate = ensemble[int(np.argmin(totals))].copy()

    prev_energy = np.inf
    for _ in range(max_iterations):
        assignments = []
        energy = 0.0
        for member in ensemble:
            d, phi = metric.wasserstein_bdt(candidate, member)
            energy += d * d
            assignments.append(phi)
        if prev_energy - energy < rel_tol * prev_energy:
            break
        prev_energy = energy

        candidate = _mean_update(candidate, ensemble, assignments)
        energy = frechet_energy(candidate, ensemble)

        # structural cleanup: drop slots that mostly map to the diagonal
        assignments = [metric.wasserstein_bdt(candidate, m)[1] for m in ensemble]
        diag_counts = _diag_match_counts(candidate, assignments)
        for b in sorted(range(candidate.size), key=lambda b: -diag_counts[b]):
            if b == candidate.root or diag_counts[b] * 2 <= n:
                continue
            tentative = _drop_branch(candidate, b)
            if frechet_energy(tentative, ensemble) <= energy + 1e-12:
                candidate = tentative
                energy = frechet_energy(candidate, ensemble)
                break

        # structural growth: adopt a widely shared feature when it pays off;
        # the gate looks one mean-update ahead so an even split (half the
        # members carrying the feature) still registers as an improvement
        assignments = [metric.wasserstein_bdt(candidate, m)[1] for m in ensemble]
        missing = _most_persistent_destroyed(candidate, ensemble, assignments)
        if missing is not None:
            _, mi, r = missing
            tentative = _add_branch(candidate, ensemble[mi], r, assignments[mi])
            phis = [metric.wasserstein_bdt(tentative, m)[1] for m in ensemble]
            settled = _mean_update(tentative, ensemble, phis)
            if frechet_energy(settled, ensemble) < energy - 1e-12:
                candidate = settled
    return candidate


def wasserstein_kmeans(ensemble: list[BDT], k: int, seed: int,
                       max_rounds: int = 20):
    """k-means in the tree metric space with k-means++ style seeding."""
    n = len(ensemble)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    rng = np.random.Generator(np.random.PCG64(seed))
    dm = metric.distance_matrix(ensemble)

    chosen = [int(rng.integers(n))]
    while len(chosen) < k:
        w = np.min(dm.entries[:, chosen] ** 2, axis=1)
        if w.sum() <= 0:
            pick = next(i for i in range(n) if i not in chosen)
        else:
            pick = int(rng.choice(n, p=w / w.sum()))
        chosen.append(pick)
    centroids = [ensemble[i].copy() for i in chosen]

    member_of = [-1] * n
    for _ in range(max_rounds):
        dists = np.zeros((n, k))
        for i, member in enumerate(ensemble):
            for c, centroid in enumerate(centroids):
                dists[i, c] = metric.wasserstein_bdt(member, centroid)[0]
        new_assign = [int(np.argmin(dists[i])) for i in range(n)]
        for c in range(k):
            if c not in new_assign:  # re-seed an empty cluster
                farthest = int(np.argmax([dists[i, new_assign[i]] for i in range(n)]))
                new_assign[farthest] = c
        if new_assign == member_of:
            break
        member_of = new_assign
        for c in range(k):
            cluster = [ensemble[i] for i in range(n) if member_of[i] == c]
            centroids[c] = barycenter(cluster)
    return ClusteringVector(n, k, member_of), centroids
