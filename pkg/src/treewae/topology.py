"""Merge trees, persistence diagrams and branch decomposition trees.

Extraction uses a union-find sweep over grid vertices with 4-connectivity in
2D and 6-connectivity in 3D. Ties in scalar value are broken by vertex index,
which gives a strict total order (no perturbation constants needed). Split
trees (tracking maxima) are the default descriptor; join trees are available
through the ``kind`` flag.

Saddle merging exists in two forms matching its two uses: on a merge tree it
collapses near-coincident forking nodes; on a BDT it moves branches up the
hierarchy while preserving their birth/death values, which is the form the
distance pipeline uses (at ``eps1 = 1`` the BDT becomes a star and the tree
metric degenerates to the diagram metric).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .fields import ScalarField

__all__ = [
    "MergeTree",
    "TreeNode",
    "PersistenceDiagram",
    "DiagramPoint",
    "BDT",
    "compute_merge_tree",
    "persistence_pairs",
    "simplify",
    "merge_saddles",
    "branch_decomposition",
    "normalize",
    "denormalize",
    "bdt_to_merge_tree",
    "bdt_to_diagram",
    "bdt_to_json",
    "bdt_from_json",
    "save_bdt",
    "load_bdt",
]

NONE = -1


@dataclass
class TreeNode:
    vertex: int
    scalar: float
    kind: str  # leaf | saddle | root


@dataclass
class MergeTree:
    kind: str  # join | split
    nodes: list[TreeNode]
    arcs: list[tuple[int, int]]  # (child node, parent node), toward the root

    def children_of(self) -> dict[int, list[int]]:
        ch: dict[int, list[int]] = {i: [] for i in range(len(self.nodes))}
        for c, p in self.arcs:
            ch[p].append(c)
        return ch

    def root(self) -> int:
        has_parent = {c for c, _ in self.arcs}
        roots = [i for i in range(len(self.nodes)) if i not in has_parent]
        if len(roots) != 1:
            raise ValueError(f"tree has {len(roots)} roots")
        return roots[0]

    def scalar_range(self) -> float:
        vals = [n.scalar for n in self.nodes]
        return max(vals) - min(vals)


@dataclass
class DiagramPoint:
    birth: float
    death: float
    extremum_vertex: int = NONE
    paired_vertex: int = NONE

    @property
    def persistence(self) -> float:
        return self.death - self.birth


@dataclass
class PersistenceDiagram:
    points: list[DiagramPoint]

    def __post_init__(self):
        for p in self.points:
            if p.birth > p.death:
                raise ValueError(f"diagram point with birth {p.birth} > death {p.death}")

    def value_range(self) -> float:
        if not self.points:
            return 0.0
        lo = min(p.birth for p in self.points)
        hi = max(p.death for p in self.points)
        return hi - lo


@dataclass
class BDT:
    """Branch decomposition tree: one (birth, death) branch per node.

    ``parent[i] == NONE`` marks the root branch. ``scale`` keeps the global
    (min, range) pair needed to undo normalization.
    """

    births: np.ndarray
    deaths: np.ndarray
    parent: np.ndarray
    normalized: bool = False
    scale: tuple[float, float] | None = None

    def __post_init__(self):
        self.births = np.asarray(self.births, dtype=np.float64)
        self.deaths = np.asarray(self.deaths, dtype=np.float64)
        self.parent = np.asarray(self.parent, dtype=np.int64)
        roots = np.flatnonzero(self.parent == NONE)
        if self.size and len(roots) != 1:
            raise ValueError(f"BDT must have exactly one root, found {len(roots)}")

    @property
    def size(self) -> int:
        return int(self.births.size)

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parent == NONE)[0])

    def persistence(self) -> np.ndarray:
        return self.deaths - self.births

    def coords(self) -> np.ndarray:
        """Interleaved (birth, death) vector of length 2|B|."""
        out = np.empty(2 * self.size)
        out[0::2] = self.births
        out[1::2] = self.deaths
        return out

    def children_of(self) -> dict[int, list[int]]:
        ch: dict[int, list[int]] = {i: [] for i in range(self.size)}
        for i, p in enumerate(self.parent):
            if p != NONE:
                ch[int(p)].append(i)
        return ch

    def copy(self) -> "BDT":
        return BDT(self.births.copy(), self.deaths.copy(), self.parent.copy(),
                   self.normalized, self.scale)

    def validate_nesting(self) -> None:
        for i, p in enumerate(self.parent):
            if self.births[i] > self.deaths[i]:
                raise ValueError(f"branch {i} has birth > death")
            if p == NONE:
                continue
            if self.births[i] < self.births[p] - 1e-12 or self.deaths[i] > self.deaths[p] + 1e-12:
                raise ValueError(
                    f"nesting violated: branch {i} not inside its parent {int(p)}"
                )


# ---------------------------------------------------------------------------
# Merge tree extraction
# ---------------------------------------------------------------------------


def _neighbors(dims):
    nx, ny, nz = dims
    offsets = [(1, 0, 0), (0, 1, 0)]
    if nz > 1:
        offsets.append((0, 0, 1))

    def it(v):
        z, rem = divmod(v, nx * ny)
        y, x = divmod(rem, nx)
        for dx, dy, dz in offsets:
            for s in (1, -1):
                a, b, c = x + s * dx, y + s * dy, z + s * dz
                if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz:
                    yield (c * ny + b) * nx + a

    return it


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        self.parent[ra] = rb
        return rb


def compute_merge_tree(sf: ScalarField, kind: str = "split") -> MergeTree:
    """Union-find sweep; split follows decreasing values, join increasing."""
    if kind not in ("join", "split"):
        raise ValueError(f"unknown tree kind {kind!r}")
    values = sf.values
    n = values.size
    order = np.lexsort((np.arange(n), values if kind == "join" else -values))
    neighbors = _neighbors(sf.dims)

    uf = _UnionFind(n)
    processed = np.zeros(n, dtype=bool)
    latest_node: dict[int, int] = {}  # uf-root -> most recent tree node
    nodes: list[TreeNode] = []
    arcs: list[tuple[int, int]] = []

    for v in order:
        v = int(v)
        comps = []
        for w in neighbors(v):
            if processed[w]:
                r = uf.find(w)
                if r not in comps:
                    comps.append(r)
        processed[v] = True
        if not comps:
            nodes.append(TreeNode(v, float(values[v]), "leaf"))
            latest_node[uf.find(v)] = len(nodes) - 1
        elif len(comps) == 1:
            r = uf.union(v, comps[0])
            latest_node[r] = latest_node[comps[0]]
        else:
            nodes.append(TreeNode(v, float(values[v]), "saddle"))
            saddle = len(nodes) - 1
            tops = [latest_node[r] for r in comps]
            r = uf.find(v)
            for c in comps:
                r = uf.union(c, r)
            for t in tops:
                arcs.append((t, saddle))
            latest_node[r] = saddle

    last = int(order[-1])
    r = uf.find(last)
    top = latest_node[r]
    if nodes[top].vertex == last:
        nodes[top].kind = "root"
    else:
        nodes.append(TreeNode(last, float(values[last]), "root"))
        arcs.append((top, len(nodes) - 1))
    return MergeTree(kind, nodes, arcs)


def _older(tree: MergeTree, a: int, b: int) -> bool:
    """True when leaf node a is older than leaf node b (survives a merge)."""
    na, nb = tree.nodes[a], tree.nodes[b]
    if na.scalar != nb.scalar:
        if tree.kind == "split":
            return na.scalar > nb.scalar
        return na.scalar < nb.scalar
    return na.vertex < nb.vertex


def _elder_pairing(tree: MergeTree):
    """Per-leaf pairing: (leaf node, dying saddle node or root, survivor leaf).

    Iterative post-order; raw trees from noisy fields can be deep enough to
    blow the interpreter's recursion limit.
    """
    children = tree.children_of()
    root = tree.root()
    pairs = []
    rep: dict[int, int] = {}
    stack = [(root, False)]
    while stack:
        node, visited = stack.pop()
        if not visited:
            stack.append((node, True))
            for c in children[node]:
                stack.append((c, False))
            continue
        kids = children[node]
        if not kids:
            rep[node] = node
            continue
        reps = [rep[c] for c in kids]
        best = reps[0]
        for r in reps[1:]:
            if _older(tree, r, best):
                best = r
        for r in reps:
            if r != best:
                pairs.append((r, node, best))
        rep[node] = best
    pairs.append((rep[root], root, NONE))
    return pairs, root


def persistence_pairs(tree: MergeTree) -> PersistenceDiagram:
    """Pair each leaf with the saddle where its component dies (Elder rule)."""
    pairs, _ = _elder_pairing(tree)
    points = []
    for leaf, other, _ in pairs:
        a, b = tree.nodes[leaf], tree.nodes[other]
        lo, hi = sorted((a.scalar, b.scalar))
        points.append(DiagramPoint(lo, hi, a.vertex, b.vertex))
    return PersistenceDiagram(points)


def branch_decomposition(tree: MergeTree) -> BDT:
    """Persistence-driven branch decomposition of a merge tree."""
    pairs, _ = _elder_pairing(tree)
    leaf_to_branch = {leaf: i for i, (leaf, _, _) in enumerate(pairs)}
    births = np.empty(len(pairs))
    deaths = np.empty(len(pairs))
    parent = np.full(len(pairs), NONE, dtype=np.int64)
    for i, (leaf, other, survivor) in enumerate(pairs):
        a, b = tree.nodes[leaf], tree.nodes[other]
        births[i], deaths[i] = sorted((a.scalar, b.scalar))
        if survivor != NONE:
            parent[i] = leaf_to_branch[survivor]
    return BDT(births, deaths, parent)


def bdt_to_diagram(bdt: BDT) -> PersistenceDiagram:
    return PersistenceDiagram(
        [DiagramPoint(float(b), float(d)) for b, d in zip(bdt.births, bdt.deaths)]
    )


def bdt_to_merge_tree(bdt: BDT) -> MergeTree:
    """Rebuild a split tree: each branch is a leaf-to-saddle monotone path.

    A child attaches to its parent branch at the child's birth value, so the
    nesting invariant must hold on unnormalized coordinates.
    """
    bdt.validate_nesting()
    nodes: list[TreeNode] = []
    arcs: list[tuple[int, int]] = []
    children = bdt.children_of()

    stack: list[tuple[int, int | None]] = [(bdt.root, None)]
    while stack:
        branch, attach_node = stack.pop()
        # order children by decreasing birth: the path descends from the leaf
        kids = sorted(children[branch], key=lambda c: -bdt.births[c])
        leaf = len(nodes)
        nodes.append(TreeNode(NONE, float(bdt.deaths[branch]), "leaf"))
        prev = leaf
        for c in kids:
            saddle = len(nodes)
            nodes.append(TreeNode(NONE, float(bdt.births[c]), "saddle"))
            arcs.append((prev, saddle))
            stack.append((c, saddle))
            prev = saddle
        if attach_node is None:
            end = len(nodes)
            nodes.append(TreeNode(NONE, float(bdt.births[branch]), "root"))
            arcs.append((prev, end))
        else:
            arcs.append((prev, attach_node))
    return MergeTree("split", nodes, arcs)


# ---------------------------------------------------------------------------
# Simplification and saddle merging
# ---------------------------------------------------------------------------


def _drop_branches(bdt: BDT, drop: set[int]) -> BDT:
    """Remove branches, reattaching orphaned children to their grandparent."""
    keep = [i for i in range(bdt.size) if i not in drop]
    remap = {old: new for new, old in enumerate(keep)}

    def surviving_parent(i):
        p = int(bdt.parent[i])
        while p != NONE and p in drop:
            p = int(bdt.parent[p])
        return p

    parent = np.array(
        [NONE if surviving_parent(i) == NONE else remap[surviving_parent(i)] for i in keep],
        dtype=np.int64,
    )
    return BDT(bdt.births[keep], bdt.deaths[keep], parent, bdt.normalized, bdt.scale)


def simplify(obj, threshold_fraction: float):
    """Drop points/branches with persistence below a fraction of the range."""
    if not 0.0 <= threshold_fraction <= 1.0:
        raise ValueError("threshold_fraction must lie in [0, 1]")
    if isinstance(obj, PersistenceDiagram):
        cut = threshold_fraction * obj.value_range()
        return PersistenceDiagram([p for p in obj.points if p.persistence >= cut])
    if isinstance(obj, BDT):
        cut = threshold_fraction * float(obj.persistence()[obj.root])
        drop = {i for i in range(obj.size)
                if obj.persistence()[i] < cut and i != obj.root}
        return _drop_branches(obj, drop)
    raise TypeError(f"cannot simplify {type(obj).__name__}")


def _merge_tree_saddles(tree: MergeTree, eps1: float) -> MergeTree:
    rng = tree.scalar_range() or 1.0
    parent_of = {c: p for c, p in tree.arcs}
    is_saddle = [n.kind == "saddle" for n in tree.nodes]
    target = list(range(len(tree.nodes)))

    def resolve(i):
        while target[i] != i:
            i = target[i]
        return i

    # nearest saddle strictly toward the root
    def parent_saddle(i):
        j = parent_of.get(i)
        while j is not None and not is_saddle[j]:
            j = parent_of.get(j)
        return j

    order = sorted(
        (i for i in range(len(tree.nodes)) if is_saddle[i]),
        key=lambda i: (-tree.nodes[i].scalar if tree.kind == "split" else tree.nodes[i].scalar,
                       tree.nodes[i].vertex),
    )
    for s in order:
        p = parent_saddle(s)
        if p is None:
            continue
        p = resolve(p)
        if abs(tree.nodes[s].scalar - tree.nodes[p].scalar) / rng < eps1:
            target[s] = p

    merged = {i for i in range(len(tree.nodes)) if resolve(i) != i}
    keep = [i for i in range(len(tree.nodes)) if i not in merged]
    remap = {old: new for new, old in enumerate(keep)}
    nodes = [TreeNode(tree.nodes[i].vertex, tree.nodes[i].scalar, tree.nodes[i].kind)
             for i in keep]
    arcs = []
    for c, p in tree.arcs:
        c2, p2 = resolve(c), resolve(p)
        if c2 != p2:
            arcs.append((remap[c2], remap[p2]))
    return MergeTree(tree.kind, nodes, arcs)


def _merge_bdt_saddles(bdt: BDT, eps1: float) -> BDT:
    """Move branches up the BDT when their saddle is too close to the parent's.

    Births and deaths are untouched; only the hierarchy changes. Each branch
    walks up its original ancestor chain while the relative saddle gap stays
    below ``eps1``, so the result is order-independent. ``eps1 = 1`` turns any
    BDT into a star, which makes the tree metric coincide with the diagram
    metric.
    """
    rng = float(bdt.persistence()[bdt.root]) or 1.0
    out = bdt.copy()
    root = out.root
    for i in range(out.size):
        if i == root:
            continue
        p = int(bdt.parent[i])
        while p != root and abs(out.births[i] - out.births[p]) / rng < eps1:
            p = int(bdt.parent[p])
        out.parent[i] = p
    return out


def merge_saddles(obj, eps1: float):
    """Collapse close saddles (merge tree) or move branches up (BDT)."""
    if not 0.0 <= eps1 <= 1.0:
        raise ValueError("eps1 must lie in [0, 1]")
    if eps1 == 0.0:
        return obj if isinstance(obj, MergeTree) else obj.copy()
    if isinstance(obj, MergeTree):
        return _merge_tree_saddles(obj, eps1)
    if isinstance(obj, BDT):
        return _merge_bdt_saddles(obj, eps1)
    raise TypeError(f"cannot merge saddles of {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Local normalization
# ---------------------------------------------------------------------------


def normalize(bdt: BDT, eps2: float = 0.95, eps3: float = 0.9,
              rescale_small: bool = False) -> BDT:
    """Rescale every branch into its parent's unit interval, root to (0, 1).

    With ``rescale_small`` enabled, branches of low global persistence
    (below ``1 - eps3`` of the root's) whose normalized persistence exceeds
    ``eps2`` are shrunk about their midpoint to ``eps2``; disabled by default
    so the map stays exactly invertible.
    """
    if bdt.normalized:
        raise ValueError("BDT is already normalized")
    root = bdt.root
    g_min = float(bdt.births[root])
    g_rng = float(bdt.deaths[root] - bdt.births[root])
    births = np.empty(bdt.size)
    deaths = np.empty(bdt.size)
    order = _top_down_order(bdt)
    for i in order:
        p = int(bdt.parent[i])
        if p == NONE:
            births[i], deaths[i] = 0.0, 1.0
            continue
        px, py = float(bdt.births[p]), float(bdt.deaths[p])
        span = py - px
        if span <= 0:
            raise ValueError(f"zero-persistence parent of branch {i}")
        births[i] = (bdt.births[i] - px) / span
        deaths[i] = (bdt.deaths[i] - px) / span
        if rescale_small:
            pers_global = (bdt.deaths[i] - bdt.births[i]) / (g_rng or 1.0)
            pers_norm = deaths[i] - births[i]
            if pers_global < (1.0 - eps3) and pers_norm > eps2:
                mid = (births[i] + deaths[i]) / 2.0
                births[i] = mid - eps2 / 2.0
                deaths[i] = mid + eps2 / 2.0
    return BDT(births, deaths, bdt.parent.copy(), True, (g_min, g_rng))


def _top_down_order(bdt: BDT):
    children = bdt.children_of()
    order, stack = [], [bdt.root]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(children[i]))
    return order


def denormalize(bdt: BDT) -> BDT:
    """Invert the local normalization using the stored global (min, range)."""
    if not bdt.normalized:
        raise ValueError("BDT is not normalized")
    if bdt.scale is None:
        raise ValueError("normalized BDT missing its (min, range) scale")
    g_min, g_rng = bdt.scale
    births = np.empty(bdt.size)
    deaths = np.empty(bdt.size)
    for i in _top_down_order(bdt):
        p = int(bdt.parent[i])
        if p == NONE:
            births[i], deaths[i] = g_min, g_min + g_rng
            continue
        px, py = births[p], deaths[p]
        births[i] = px + bdt.births[i] * (py - px)
        deaths[i] = px + bdt.deaths[i] * (py - px)
    return BDT(births, deaths, bdt.parent.copy(), False, None)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def bdt_to_json(bdt: BDT) -> dict:
    doc = {
        "branches": [
            {"birth": float(b), "death": float(d), "parent": int(p)}
            for b, d, p in zip(bdt.births, bdt.deaths, bdt.parent)
        ],
        "normalized": bdt.normalized,
    }
    if bdt.scale is not None:
        doc["scale"] = {"min": bdt.scale[0], "range": bdt.scale[1]}
    return doc


def bdt_from_json(doc: dict) -> BDT:
    branches = doc["branches"]
    scale = None
    if doc.get("scale") is not None:
        scale = (float(doc["scale"]["min"]), float(doc["scale"]["range"]))
    return BDT(
        np.array([b["birth"] for b in branches]),
        np.array([b["death"] for b in branches]),
        np.array([b["parent"] for b in branches], dtype=np.int64),
        bool(doc.get("normalized", False)),
        scale,
    )


def save_bdt(bdt: BDT, path) -> None:
    with open(path, "w") as fh:
        json.dump(bdt_to_json(bdt), fh, indent=1)
        fh.write("\n")


def load_bdt(path) -> BDT:
    with open(path) as fh:
        return bdt_from_json(json.load(fh))
