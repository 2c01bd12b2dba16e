"""Applications on a trained model: compression, layouts, feature views, scores.

The compression payload keeps only the final output sub-layer plus each
member's coefficients there; decompression replays the sub-layer and undoes
the normalization. Feature-level views track barycenter branches through
optimal assignments: correlation of per-feature persistence with the latent
axes, and the persistence ratio between the latent-space origin and the
input (zero once a feature is lost to the diagonal).
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import barycenter as bc
from . import metric
from . import wae as wae_mod
from .metric import DIAGONAL, DistanceMatrix
from .topology import BDT, bdt_from_json, bdt_to_json, denormalize
from .wae import TrainedModel

__all__ = [
    "CompressedEnsemble", "PCVPoint", "FLIReport",
    "compress", "decompress", "compression_factor",
    "bdt_binary_size", "compressed_binary_size",
    "save_compressed", "load_compressed",
    "layout2d", "pcv", "fli", "track_features",
    "nmi", "ari", "sim", "scale_aligned_sim", "layout_distance_matrix",
]


# ---------------------------------------------------------------------------
# Data reduction
# ---------------------------------------------------------------------------


@dataclass
class CompressedEnsemble:
    origin: BDT
    basis_vectors: np.ndarray  # (2|origin|, d_out)
    coeffs: np.ndarray  # N x d_out
    member_names: list[str]
    member_scales: list

    def __post_init__(self):
        if self.coeffs.shape[1] != self.basis_vectors.shape[1]:
            raise ValueError("coefficient width must match the basis dimension")


def compress(model: TrainedModel, ensemble: list[BDT]) -> CompressedEnsemble:
    """Keep the last decoding output sub-layer and the final coefficients."""
    last = model.network.layers[-1]
    return CompressedEnsemble(
        origin=last.out_sub.origin.copy(),
        basis_vectors=last.out_sub.basis.vectors.copy(),
        coeffs=model.last_coeffs.copy(),
        member_names=list(model.member_names),
        member_scales=list(model.member_scales),
    )


def decompress(c: CompressedEnsemble) -> list[BDT]:
    """Replay the stored sub-layer per member, then undo the normalization."""
    out = []
    for row, scale in zip(c.coeffs, c.member_scales):
        coords = c.origin.coords() + c.basis_vectors @ row
        raw = BDT(coords[0::2], coords[1::2], c.origin.parent.copy(), True, None)
        tree = wae_mod.gamma(raw)
        tree.scale = tuple(scale) if scale is not None else (0.0, 1.0)
        out.append(denormalize(tree))
    return out


def reconstructions(model: TrainedModel, ensemble: list[BDT]) -> list[BDT]:
    """The model's own (denormalized) reconstructions of its training input."""
    recons, _ = wae_mod.forward(model.network, ensemble, model.config.n_it,
                                model.config.leaky_slope)
    out = []
    for tree, scale in zip(recons, model.member_scales):
        t = tree.copy()
        t.scale = tuple(scale) if scale is not None else (0.0, 1.0)
        out.append(denormalize(t))
    return out


def bdt_binary_size(bdt: BDT) -> int:
    """Canonical binary footprint: float64 coordinates, int32 parents."""
    return 4 + bdt.size * (8 + 8 + 4)


def compressed_binary_size(c: CompressedEnsemble) -> int:
    origin = bdt_binary_size(c.origin)
    basis = 8 + c.basis_vectors.size * 8
    coeffs = 8 + c.coeffs.size * 8
    scales = len(c.member_scales) * 16
    return origin + basis + coeffs + scales


def compression_factor(original_bytes: int, compressed_bytes: int) -> float:
    if original_bytes <= 0 or compressed_bytes <= 0:
        raise ValueError("sizes must be positive")
    return original_bytes / compressed_bytes


def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()


def _unb64(s: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").reshape(shape).copy()


def save_compressed(c: CompressedEnsemble, path) -> None:
    doc = {
        "origin": bdt_to_json(c.origin),
        "basis": {"shape": list(c.basis_vectors.shape), "data": _b64(c.basis_vectors)},
        "coeffs": {"shape": list(c.coeffs.shape), "data": _b64(c.coeffs)},
        "members": c.member_names,
        "scales": [list(s) for s in c.member_scales],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_compressed(path) -> CompressedEnsemble:
    with open(path) as fh:
        doc = json.load(fh)
    return CompressedEnsemble(
        origin=bdt_from_json(doc["origin"]),
        basis_vectors=_unb64(doc["basis"]["data"], doc["basis"]["shape"]),
        coeffs=_unb64(doc["coeffs"]["data"], doc["coeffs"]["shape"]),
        member_names=list(doc["members"]),
        member_scales=[tuple(s) for s in doc["scales"]],
    )


# ---------------------------------------------------------------------------
# Layouts and feature views
# ---------------------------------------------------------------------------


def layout2d(model: TrainedModel) -> np.ndarray:
    if model.config.d_latent != 2:
        raise ValueError("2D layouts need a 2-dimensional latent space")
    return model.latent_coords.copy()


@dataclass
class PCVPoint:
    branch: int
    rho1: float
    rho2: float
    degenerate: bool = False


def _pearson(x: np.ndarray, y: np.ndarray):
    sx, sy = x.std(), y.std()
    if sx <= 1e-15 or sy <= 1e-15:
        return 0.0, True
    return float(np.corrcoef(x, y)[0, 1]), False


def pcv(model: TrainedModel, ensemble: list[BDT], top_k: int = 6,
        reference: BDT | None = None) -> list[PCVPoint]:
    """Correlate per-feature persistence with the two latent coordinates."""
    ref = reference if reference is not None else bc.barycenter(ensemble)
    latent = model.latent_coords
    matched_pers = np.zeros((ref.size, len(ensemble)))
    for mi, member in enumerate(ensemble):
        _, phi = metric.wasserstein_bdt(ref, member)
        partner = phi.left_partner()
        for b in range(ref.size):
            r = partner.get(b, DIAGONAL)
            matched_pers[b, mi] = (
                0.0 if r == DIAGONAL else float(member.deaths[r] - member.births[r])
            )
    pers = ref.persistence()
    order = sorted(range(ref.size), key=lambda b: (-pers[b], b))[:top_k]
    points = []
    for b in order:
        rho1, bad1 = _pearson(matched_pers[b], latent[:, 0])
        rho2, bad2 = _pearson(matched_pers[b], latent[:, 1])
        points.append(PCVPoint(b, rho1, rho2, bad1 or bad2))
    return points


@dataclass
class FLIReport:
    branches: list[int]
    original_persistence: list[float]
    latent_persistence: list[float]
    fli: list[float]


def fli(model: TrainedModel, ensemble: list[BDT],
        reference: BDT | None = None) -> FLIReport:
    """Persistence in the latent-space origin over original persistence.

    Barycenter branches are chained through the optimal assignments between
    consecutive input origins down to the first decoding layer's input
    origin; a branch lost to the diagonal anywhere along the chain scores 0.
    """
    ref = reference if reference is not None else bc.barycenter(ensemble)
    chain_trees = [ref]
    for k in range(model.config.n_e + 1):
        chain_trees.append(model.network.layers[k].in_sub.origin)
    current = {b: b for b in range(ref.size)}
    for a, b_tree in zip(chain_trees, chain_trees[1:]):
        _, phi = metric.wasserstein_bdt(a, b_tree)
        partner = phi.left_partner()
        nxt = {}
        for b0, cur in current.items():
            if cur == DIAGONAL:
                nxt[b0] = DIAGONAL
                continue
            nxt[b0] = partner.get(cur, DIAGONAL)
        current = nxt
    latent_tree = chain_trees[-1]
    branches, orig_p, lat_p, ratios = [], [], [], []
    for b in range(ref.size):
        branches.append(b)
        p0 = float(ref.deaths[b] - ref.births[b])
        target = current[b]
        p1 = (0.0 if target == DIAGONAL
              else float(latent_tree.deaths[target] - latent_tree.births[target]))
        orig_p.append(p0)
        lat_p.append(p1)
        ratios.append(0.0 if p0 <= 0 else p1 / p0)
    return FLIReport(branches, orig_p, lat_p, ratios)


def track_features(sequence: list[BDT], top_k: int = 5) -> list[list[tuple[int, int]]]:
    """Chain the most persistent first-member branches through the sequence."""
    if len(sequence) < 2:
        raise ValueError("tracking needs at least two members")
    first = sequence[0]
    pers = first.persistence()
    seeds = sorted(range(first.size), key=lambda b: (-pers[b], b))[:top_k]
    partners = []
    for a, b in zip(sequence, sequence[1:]):
        _, phi = metric.wasserstein_bdt(a, b)
        partners.append(phi.left_partner())
    chains = []
    for s in seeds:
        chain = [(0, s)]
        cur = s
        for step, partner in enumerate(partners):
            nxt = partner.get(cur, DIAGONAL)
            if nxt == DIAGONAL:
                break
            chain.append((step + 1, nxt))
            cur = nxt
        chains.append(chain)
    return chains


# ---------------------------------------------------------------------------
# Quality indicators
# ---------------------------------------------------------------------------


def _contingency(a, b):
    la = sorted(set(a))
    lb = sorted(set(b))
    table = np.zeros((len(la), len(lb)))
    ia = {v: i for i, v in enumerate(la)}
    ib = {v: i for i, v in enumerate(lb)}
    for x, y in zip(a, b):
        table[ia[x], ib[y]] += 1
    return table


def nmi(a, b) -> float:
    """Normalized mutual information (arithmetic normalization)."""
    if len(a) != len(b):
        raise ValueError("partitions must have equal length")
    n = len(a)
    t = _contingency(a, b)
    pa, pb = t.sum(axis=1) / n, t.sum(axis=0) / n
    h_a = -np.sum(pa * np.log(pa, where=pa > 0, out=np.zeros_like(pa)))
    h_b = -np.sum(pb * np.log(pb, where=pb > 0, out=np.zeros_like(pb)))
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    mi = 0.0
    for i in range(t.shape[0]):
        for j in range(t.shape[1]):
            if t[i, j] > 0:
                p = t[i, j] / n
                mi += p * np.log(p / (pa[i] * pb[j]))
    denom = (h_a + h_b) / 2.0
    return float(mi / denom) if denom > 0 else 0.0


def ari(a, b) -> float:
    """Adjusted Rand index."""
    if len(a) != len(b):
        raise ValueError("partitions must have equal length")
    n = len(a)
    t = _contingency(a, b)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(t).sum()
    sum_a = comb2(t.sum(axis=1)).sum()
    sum_b = comb2(t.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def sim(dm_true: DistanceMatrix, dm_layout: DistanceMatrix) -> float:
    """Metric similarity: one minus the normalized absolute distance error."""
    if dm_true.n != dm_layout.n:
        raise ValueError("matrices must have the same size")
    iu = np.triu_indices(dm_true.n, 1)
    a, b = dm_true.entries[iu], dm_layout.entries[iu]
    denom = np.maximum(a, b).sum()
    if denom <= 0:
        return 1.0
    return float(np.clip(1.0 - np.abs(a - b).sum() / denom, 0.0, 1.0))


def layout_distance_matrix(points: np.ndarray,
                           names: list[str] | None = None) -> DistanceMatrix:
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    return DistanceMatrix(points.shape[0], d, names)


def scale_aligned_sim(dm_true: DistanceMatrix, points: np.ndarray) -> float:
    """Similarity after the least-squares uniform rescale of the layout.

    The latent coordinates carry an arbitrary global scale, so the layout is
    first scaled to best match the reference distances; the similarity then
    measures shape preservation alone.
    """
    dl = layout_distance_matrix(points)
    iu = np.triu_indices(dm_true.n, 1)
    denom = float(dl.entries[iu] @ dl.entries[iu])
    if denom > 0:
        s = float(dm_true.entries[iu] @ dl.entries[iu]) / denom
        dl = DistanceMatrix(dl.n, s * dl.entries)
    return sim(dm_true, dl)
