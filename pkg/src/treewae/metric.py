"""Wasserstein distances between persistence diagrams and between BDTs.

Diagram distances solve an optimal assignment on diagonally augmented
diagrams: the Hungarian solver handles small instances, an epsilon-scaled
auction takes over beyond 64 points (relative gap <= 1e-6). The BDT distance
restricts the search space to rooted partial isomorphisms via a bottom-up
dynamic program whose child-forest matching is itself solved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .topology import BDT, DiagramPoint, PersistenceDiagram

__all__ = [
    "DIAGONAL",
    "Assignment",
    "DistanceMatrix",
    "augment",
    "ground_distance",
    "wasserstein_diagrams",
    "wasserstein_bdt",
    "distance_matrix",
    "export_distance_csv",
]

DIAGONAL = -1
MUNKRES_LIMIT = 64


@dataclass
class Assignment:
    """Matching between two point sets; DIAGONAL marks creation/destruction."""

    matches: list[tuple[int, int]]

    def left_partner(self) -> dict[int, int]:
        return {l: r for l, r in self.matches if l != DIAGONAL}

    def right_partner(self) -> dict[int, int]:
        return {r: l for l, r in self.matches if r != DIAGONAL}


@dataclass
class DistanceMatrix:
    n: int
    entries: np.ndarray
    names: list[str] | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.shape != (self.n, self.n):
            raise ValueError("entries must be n x n")


def _diag(p: DiagramPoint) -> DiagramPoint:
    m = (p.birth + p.death) / 2.0
    return DiagramPoint(m, m)


def augment(di: PersistenceDiagram, dj: PersistenceDiagram):
    """Append to each diagram the diagonal projections of the other's points."""
    di2 = PersistenceDiagram(list(di.points) + [_diag(p) for p in dj.points])
    dj2 = PersistenceDiagram(list(dj.points) + [_diag(p) for p in di.points])
    return di2, dj2


def _on_diagonal(p: DiagramPoint) -> bool:
    return p.birth == p.death


def ground_distance(p: DiagramPoint, q: DiagramPoint, order: float = 2.0) -> float:
    """L_order distance in the birth/death plane; zero between dummy features."""
    if order <= 0:
        raise ValueError("order must be positive")
    if _on_diagonal(p) and _on_diagonal(q):
        return 0.0
    return float(
        (abs(p.birth - q.birth) ** order + abs(p.death - q.death) ** order)
        ** (1.0 / order)
    )


def _cost_matrix(left, right, order):
    n, m = len(left), len(right)
    cost = np.zeros((n, m))
    for i, p in enumerate(left):
        for j, q in enumerate(right):
            cost[i, j] = ground_distance(p, q, order) ** order
    return cost


def wasserstein_diagrams(di: PersistenceDiagram, dj: PersistenceDiagram,
                         order: float = 2.0):
    """Exact Wasserstein distance and optimal assignment between diagrams."""
    n, m = len(di.points), len(dj.points)
    if n == 0 and m == 0:
        return 0.0, Assignment([])
    left, right = augment(di, dj)
    cost = _cost_matrix(left.points, right.points, order)
    if cost.shape[0] <= MUNKRES_LIMIT:
        rows, cols = linear_sum_assignment(cost)
    else:
        cols = _auction(-cost)
        rows = np.arange(cost.shape[0])
    total = float(cost[rows, cols].sum())
    matches = []
    for i, j in zip(rows, cols):
        li = int(i) if i < n else DIAGONAL
        rj = int(j) if j < m else DIAGONAL
        if li == DIAGONAL and rj == DIAGONAL:
            continue
        matches.append((li, rj))
    return total ** (1.0 / order), Assignment(matches)


def _auction(benefit: np.ndarray, rel_gap: float = 1e-6) -> np.ndarray:
    """Forward auction with epsilon scaling; returns column of each row.

    The final assignment is within n*eps of the optimum, with eps driven
    below rel_gap * max|benefit| / n.
    """
    n = benefit.shape[0]
    scale = float(np.abs(benefit).max()) or 1.0
    eps = scale / 4.0
    eps_min = rel_gap * scale / n
    prices = np.zeros(n)
    owner = np.full(n, -1, dtype=np.int64)
    assigned = np.full(n, -1, dtype=np.int64)
    while True:
        owner[:] = -1
        assigned[:] = -1
        queue = list(range(n))
        while queue:
            i = queue.pop(0)
            values = benefit[i] - prices
            j = int(np.argmax(values))
            best = values[j]
            values[j] = -np.inf
            second = float(values.max()) if n > 1 else best - eps
            prices[j] += best - second + eps
            prev = int(owner[j])
            if prev >= 0:
                assigned[prev] = -1
                queue.append(prev)
            owner[j] = i
            assigned[i] = j
        if eps <= eps_min:
            return assigned
        eps = max(eps / 5.0, eps_min)


# ---------------------------------------------------------------------------
# BDT distance (rooted partial isomorphisms)
# ---------------------------------------------------------------------------


def _subtree_diag_costs(b: BDT) -> np.ndarray:
    """Squared cost of sending each branch's whole subtree to the diagonal."""
    own = (b.deaths - b.births) ** 2 / 2.0
    total = own.copy()
    children = b.children_of()
    order = []
    stack = [b.root] if b.size else []
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(children[i])
    for i in reversed(order):
        for c in children[i]:
            total[i] += total[c]
    return total


INF = float("inf")


def _post_order(b: BDT, children) -> list[int]:
    order, stack = [], [b.root]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(children[i])
    order.reverse()
    return order


def wasserstein_bdt(bi: BDT, bj: BDT):
    """Tree Wasserstein distance: roots match, children match or die.

    Bottom-up over all branch pairs (children before parents), so deep
    nesting chains cannot exhaust the recursion limit.
    """
    if bi.size == 0 or bj.size == 0:
        raise ValueError("BDTs must be non-empty")
    ch_i, ch_j = bi.children_of(), bj.children_of()
    del_i, del_j = _subtree_diag_costs(bi), _subtree_diag_costs(bj)
    cost_tab = np.empty((bi.size, bj.size))
    plans: dict[tuple[int, int], list] = {}

    def forest_cost(ca, cb):
        if not ca and not cb:
            return 0.0, []
        n, m = len(ca), len(cb)
        cost = np.zeros((n + m, n + m))
        for x in range(n):
            for y in range(m):
                cost[x, y] = cost_tab[ca[x], cb[y]]
            cost[x, m:] = INF
            cost[x, m + x] = del_i[ca[x]]
        for y in range(m):
            cost[n:, y] = INF
            cost[n + y, y] = del_j[cb[y]]
        rows, cols = linear_sum_assignment(cost)
        plan = []
        for r, c in zip(rows, cols):
            if r < n and c < m:
                plan.append((ca[r], cb[c]))
            elif r < n:
                plan.append((ca[r], DIAGONAL))
            elif c < m:
                plan.append((DIAGONAL, cb[c]))
        return float(cost[rows, cols].sum()), plan

    # only equal-depth pairs can ever match under a rooted isomorphism
    def depths(b: BDT) -> np.ndarray:
        d = np.zeros(b.size, dtype=int)
        # reversed post-order visits parents before children
        for i in reversed(_post_order(b, b.children_of())):
            p = int(b.parent[i])
            if p != -1:
                d[i] = d[p] + 1
        return d

    depth_i, depth_j = depths(bi), depths(bj)
    for a in _post_order(bi, ch_i):
        for b in _post_order(bj, ch_j):
            if depth_i[a] != depth_j[b]:
                continue
            fcost, plan = forest_cost(ch_i[a], ch_j[b])
            ground2 = ((bi.births[a] - bj.births[b]) ** 2
                       + (bi.deaths[a] - bj.deaths[b]) ** 2)
            cost_tab[a, b] = float(ground2) + fcost
            plans[(a, b)] = plan

    total = float(cost_tab[bi.root, bj.root])

    matches: list[tuple[int, int]] = []

    def collect_subtree(branch, side):
        stack = [branch]
        children = ch_i if side == 0 else ch_j
        while stack:
            x = stack.pop()
            matches.append((x, DIAGONAL) if side == 0 else (DIAGONAL, x))
            stack.extend(children[x])

    stack = [(bi.root, bj.root)]
    while stack:
        a, b = stack.pop()
        matches.append((a, b))
        for pa, pb in plans[(a, b)]:
            if pa != DIAGONAL and pb != DIAGONAL:
                stack.append((pa, pb))
            elif pa != DIAGONAL:
                collect_subtree(pa, 0)
            else:
                collect_subtree(pb, 1)

    return float(np.sqrt(total)), Assignment(matches)


def assignment_cost(bi: BDT, bj: BDT, phi: Assignment) -> float:
    """Re-sum the squared costs realized by an assignment."""
    total = 0.0
    for l, r in phi.matches:
        if l != DIAGONAL and r != DIAGONAL:
            total += (bi.births[l] - bj.births[r]) ** 2 + (bi.deaths[l] - bj.deaths[r]) ** 2
        elif l != DIAGONAL:
            total += (bi.deaths[l] - bi.births[l]) ** 2 / 2.0
        elif r != DIAGONAL:
            total += (bj.deaths[r] - bj.births[r]) ** 2 / 2.0
    return float(total)


def distance_matrix(ensemble: list[BDT], use_diagram_metric: bool = False,
                    names: list[str] | None = None) -> DistanceMatrix:
    """All pairwise distances, each unordered pair computed once."""
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    from .topology import bdt_to_diagram

    n = len(ensemble)
    entries = np.zeros((n, n))
    diagrams = [bdt_to_diagram(b) for b in ensemble] if use_diagram_metric else None
    for i in range(n):
        for j in range(i + 1, n):
            if use_diagram_metric:
                d, _ = wasserstein_diagrams(diagrams[i], diagrams[j])
            else:
                d, _ = wasserstein_bdt(ensemble[i], ensemble[j])
            entries[i, j] = entries[j, i] = d
    return DistanceMatrix(n, entries, names)


def export_distance_csv(dm: DistanceMatrix, path) -> None:
    names = dm.names or [f"member_{i}" for i in range(dm.n)]
    with open(path, "w") as fh:
        fh.write("member," + ",".join(names) + "\n")
        for name, row in zip(names, dm.entries):
            fh.write(name + "," + ",".join(repr(float(v)) for v in row) + "\n")
