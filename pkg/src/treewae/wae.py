"""Auto-encoder whose layers transform BDTs natively.

Each layer projects the incoming tree onto a basis anchored at the layer's
input origin (coefficients), applies a leaky rectifier, then rebuilds a
valid tree from the layer's output origin and basis. Training alternates a
full forward pass with a backward pass on a surrogate in which the discrete
decisions of the forward pass (optimal assignments, rectifier signs,
validity clamps, latent k-means centroids) are frozen; the surrogate is then
smooth in every origin coordinate and basis entry, and its gradient is
evaluated in closed form (minimum-norm solves differentiated through the
constant-rank pseudoinverse). Adam drives the parameter updates, stopping
when the energy decreases by less than one percent over a few consecutive
epochs; the returned model carries the best-loss epoch's parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import barycenter as bc
from . import metric
from .metric import DIAGONAL, Assignment, DistanceMatrix
from .geometry import BDTBasis
from .topology import BDT, NONE

__all__ = [
    "SubLayer", "Layer", "Network", "TrainConfig", "TrainedModel",
    "leaky_relu", "gamma", "layer_forward", "forward", "initialize",
    "energy", "penalty_metric", "penalty_cluster", "gradient", "train",
    "encode", "decode",
]


# ---------------------------------------------------------------------------
# Model containers
# ---------------------------------------------------------------------------


@dataclass
class SubLayer:
    origin: BDT
    basis: BDTBasis
    kind: str  # input | output

    def __post_init__(self):
        if self.basis.origin is not self.origin:
            raise ValueError("sub-layer basis must be anchored at its origin")
        if self.kind not in ("input", "output"):
            raise ValueError(f"unknown sub-layer kind {self.kind!r}")


@dataclass
class Layer:
    in_sub: SubLayer
    out_sub: SubLayer
    dim: int

    def __post_init__(self):
        if self.in_sub.basis.dim != self.dim or self.out_sub.basis.dim != self.dim:
            raise ValueError("input and output bases must share the layer dimension")


@dataclass
class Network:
    layers: list[Layer]
    n_e: int
    n_d: int

    def __post_init__(self):
        if len(self.layers) != self.n_e + self.n_d:
            raise ValueError("layer count must equal n_e + n_d")
        dims = self.dims
        for a, b in zip(dims[: self.n_e - 1], dims[1: self.n_e]):
            if not a > b:
                raise ValueError("encoder dimensions must strictly decrease")
        for a, b in zip(dims[self.n_e - 1: -1], dims[self.n_e:]):
            if not a < b:
                raise ValueError("decoder dimensions must strictly increase")

    @property
    def dims(self) -> list[int]:
        return [l.dim for l in self.layers]


@dataclass
class TrainConfig:
    n_it: int = 2
    n_e: int = 1
    n_d: int = 1
    d_latent: int = 2
    d_out: int = 16
    origin_caps: tuple = (0.2, 0.1, 0.1, 0.2)  # in/out of first and last layer
    eps1: float = 1.0
    eps2: float = 0.95
    eps3: float = 0.9
    leaky_slope: float = 0.01
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    penalty_metric: bool = False
    penalty_cluster: bool = False
    lambda_metric: float = 1.0
    lambda_cluster: float = 1.0
    n_clusters: int = 4
    softmax_beta: float = 5.0
    stop_rel_decrease: float = 0.01
    patience: int = 3
    max_epochs: int = 500
    seed: int = 0

    def __post_init__(self):
        if any(not 0 < c <= 1 for c in self.origin_caps):
            raise ValueError("origin caps must lie in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainedModel:
    network: Network
    config: TrainConfig
    energy_trace: list  # per epoch: (E, P_M, P_C)
    latent_coords: np.ndarray  # N x d_latent
    last_coeffs: np.ndarray  # N x d_out
    member_scales: list
    member_names: list
    stopped_early: bool = False
    best_epoch: int = -1  # epoch whose parameters the model carries

    @property
    def n_members(self) -> int:
        return int(self.latent_coords.shape[0])

    @property
    def final_energy(self) -> float:
        return float(self.energy_trace[self.best_epoch][0])


# ---------------------------------------------------------------------------
# Elementary layer operations
# ---------------------------------------------------------------------------


def leaky_relu(alpha: np.ndarray, slope: float) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    return np.where(alpha >= 0, alpha, slope * alpha)


_ROOT, _PASS, _CLAMP0, _CLAMP1 = 0, 1, 2, 3


def _gamma_coords(coords: np.ndarray, root: int, parent: np.ndarray):
    """Clamp to [0,1], snap inverted branches to their midpoint, pin the root.

    Returns the projected coordinates plus the per-coordinate modes and the
    per-branch midpoint flags that freeze this projection for one gradient
    step.
    """
    n = coords.size // 2
    out = coords.copy()
    modes = np.full(2 * n, _PASS, dtype=np.int8)
    midpoint = np.zeros(n, dtype=bool)
    for j in range(n):
        bx, dx = 2 * j, 2 * j + 1
        if j == root:
            out[bx], out[dx] = 0.0, 1.0
            modes[bx] = modes[dx] = _ROOT
            continue
        for c in (bx, dx):
            if out[c] < 0.0:
                out[c] = 0.0
                modes[c] = _CLAMP0
            elif out[c] > 1.0:
                out[c] = 1.0
                modes[c] = _CLAMP1
        if out[bx] > out[dx]:
            mid = (out[bx] + out[dx]) / 2.0
            out[bx] = out[dx] = mid
            midpoint[j] = True
    return out, modes, midpoint


def gamma(raw: BDT) -> BDT:
    """Project a raw tree onto valid normalized BDTs (birth <= death in [0,1])."""
    coords, _, _ = _gamma_coords(raw.coords(), raw.root, raw.parent)
    return BDT(coords[0::2], coords[1::2], raw.parent.copy(), True, raw.scale)


_RANK_RCOND = 1e-10


def _solve_projection(m: np.ndarray, r: np.ndarray):
    """Minimum-norm least squares via SVD; the factors feed the backward pass.

    Diagonal-folded row pairs make the effective matrix rank-deficient by
    construction, so the pseudoinverse route (not plain normal equations) is
    required for a stable solve and gradient.
    """
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size:
        keep = s > _RANK_RCOND * s[0]
    else:
        keep = s > 0
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    alpha = vt.T @ (s_inv * (u.T @ r))
    return alpha, (u, s_inv, vt)


def _pinv_vjp(svd, m, r, alpha, g_alpha):
    """Gradients of alpha = pinv(M) r with respect to M and r.

    Uses the constant-rank differential of the pseudoinverse; at full column
    rank it reduces to the familiar normal-equations expression.
    """
    u, s_inv, vt = svd
    residual = r - m @ alpha
    pinv_t_g = u @ (s_inv * (vt @ g_alpha))  # pinv(M)^T g
    y = vt.T @ (s_inv**2 * (vt @ g_alpha))  # pinv(M) pinv(M)^T g
    kept = s_inv > 0
    proj_g = vt[kept].T @ (vt[kept] @ g_alpha)  # projector onto row space
    pinv_t_alpha = u @ (s_inv * (vt @ alpha))
    g_r = pinv_t_g
    g_m = (
        -np.outer(pinv_t_g, alpha)
        + np.outer(residual, y)
        + np.outer(pinv_t_alpha, g_alpha - proj_g)
    )
    return g_m, g_r


def _projection_system(o: np.ndarray, bvec: np.ndarray, v_prev: np.ndarray,
                       partner: dict[int, int]):
    """Effective matrix and target of the fixed-assignment update."""
    m = bvec.copy()
    r = np.empty(o.size)
    for j in range(o.size // 2):
        bx, dx = 2 * j, 2 * j + 1
        l = partner.get(j, DIAGONAL)
        if l != DIAGONAL:
            r[bx] = v_prev[2 * l] - o[bx]
            r[dx] = v_prev[2 * l + 1] - o[dx]
        else:
            half = (o[dx] - o[bx]) / 2.0
            r[bx], r[dx] = half, -half
            row_mean = (m[bx] + m[dx]) / 2.0
            m[bx] = m[bx] - row_mean
            m[dx] = m[dx] - row_mean
    return m, r


@dataclass
class _LayerCtx:
    partner: dict[int, int]
    sigma_mask: np.ndarray
    gamma_modes: np.ndarray
    gamma_midpoint: np.ndarray
    alpha_raw: np.ndarray
    alpha_act: np.ndarray
    v_out: np.ndarray
    m: np.ndarray
    r: np.ndarray
    svd: tuple


@dataclass
class _MemberCtx:
    v_in: np.ndarray
    layers: list
    energy_matches: list
    energy_const: float


class _Params:
    """Flat parameter store: interleaved origin coordinates and basis matrices."""

    def __init__(self, network: Network):
        self.o_in, self.b_in, self.o_out, self.b_out = [], [], [], []
        self.in_parents, self.out_parents = [], []
        self.in_roots, self.out_roots = [], []
        for layer in network.layers:
            self.o_in.append(layer.in_sub.origin.coords())
            self.b_in.append(layer.in_sub.basis.vectors.copy())
            self.o_out.append(layer.out_sub.origin.coords())
            self.b_out.append(layer.out_sub.basis.vectors.copy())
            self.in_parents.append(layer.in_sub.origin.parent.copy())
            self.out_parents.append(layer.out_sub.origin.parent.copy())
            self.in_roots.append(layer.in_sub.origin.root)
            self.out_roots.append(layer.out_sub.origin.root)
        self.n_layers = len(network.layers)

    def arrays(self):
        for k in range(self.n_layers):
            yield ("o_in", k, self.o_in[k])
            yield ("b_in", k, self.b_in[k])
            yield ("o_out", k, self.o_out[k])
            yield ("b_out", k, self.b_out[k])

    def zeros_like(self):
        g = _Params.__new__(_Params)
        g.o_in = [np.zeros_like(a) for a in self.o_in]
        g.b_in = [np.zeros_like(a) for a in self.b_in]
        g.o_out = [np.zeros_like(a) for a in self.o_out]
        g.b_out = [np.zeros_like(a) for a in self.b_out]
        g.in_parents, g.out_parents = self.in_parents, self.out_parents
        g.in_roots, g.out_roots = self.in_roots, self.out_roots
        g.n_layers = self.n_layers
        return g

    def in_origin_bdt(self, k) -> BDT:
        c = self.o_in[k]
        return BDT(c[0::2], c[1::2], self.in_parents[k], True, None)

    def estimate_bdt(self, k, alpha) -> BDT:
        c = self.o_in[k] + self.b_in[k] @ alpha
        return BDT(c[0::2], c[1::2], self.in_parents[k], True, None)

    def out_bdt(self, k, coords) -> BDT:
        return BDT(coords[0::2], coords[1::2], self.out_parents[k], True, None)

    def to_network(self, template: Network) -> Network:
        layers = []
        for k, old in enumerate(template.layers):
            oin = self.in_origin_bdt(k)
            c = self.o_out[k]
            oout = BDT(c[0::2], c[1::2], self.out_parents[k], True, None)
            layers.append(Layer(
                SubLayer(oin, BDTBasis(oin, self.b_in[k].copy(), checked=False), "input"),
                SubLayer(oout, BDTBasis(oout, self.b_out[k].copy(), checked=False), "output"),
                old.dim,
            ))
        return Network(layers, template.n_e, template.n_d)


def _layer_forward_params(params: _Params, k: int, v_prev: np.ndarray,
                          prev_bdt: BDT, n_it: int, slope: float) -> _LayerCtx:
    alpha = np.zeros(params.b_in[k].shape[1])
    partner = {}
    for _ in range(n_it):
        estimate = params.estimate_bdt(k, alpha)
        _, phi = metric.wasserstein_bdt(prev_bdt, estimate)
        partner = phi.right_partner()
        m, r = _projection_system(params.o_in[k], params.b_in[k], v_prev, partner)
        alpha, svd = _solve_projection(m, r)
    sigma_mask = np.where(alpha >= 0, 1.0, slope)
    alpha_act = alpha * sigma_mask
    raw = params.o_out[k] + params.b_out[k] @ alpha_act
    v_out, modes, midpoint = _gamma_coords(raw, params.out_roots[k], params.out_parents[k])
    return _LayerCtx(partner, sigma_mask, modes, midpoint, alpha, alpha_act,
                     v_out, m, r, svd)


def _forward_member(params: _Params, b: BDT, n_it: int, slope: float) -> _MemberCtx:
    v = b.coords()
    prev = b
    layer_ctxs = []
    for k in range(params.n_layers):
        ctx = _layer_forward_params(params, k, v, prev, n_it, slope)
        layer_ctxs.append(ctx)
        v = ctx.v_out
        prev = params.out_bdt(k, v)
    return _MemberCtx(b.coords(), layer_ctxs, [], 0.0)


# ---------------------------------------------------------------------------
# Public layer/forward API on Network objects
# ---------------------------------------------------------------------------


def layer_forward(layer: Layer, b: BDT, n_it: int = 2, slope: float = 0.01):
    """Coefficients and valid output tree of one transformation layer."""
    net = Network.__new__(Network)
    net.layers = [layer]
    net.n_e, net.n_d = 1, 0
    params = _Params(net)
    ctx = _layer_forward_params(params, 0, b.coords(), b, n_it, slope)
    return ctx.alpha_act, params.out_bdt(0, ctx.v_out)


def forward(network: Network, ensemble: list[BDT], n_it: int = 2,
            slope: float = 0.01):
    """Propagate every member; returns reconstructions and per-layer coefficients."""
    params = _Params(network)
    recons, coeffs = [], []
    for b in ensemble:
        ctx = _forward_member(params, b, n_it, slope)
        recons.append(params.out_bdt(params.n_layers - 1, ctx.layers[-1].v_out))
        coeffs.append([lc.alpha_act.copy() for lc in ctx.layers])
    return recons, coeffs


def energy(ensemble: list[BDT], reconstructed: list[BDT]):
    """Total squared tree distance plus the realizing assignments."""
    if len(ensemble) != len(reconstructed):
        raise ValueError("ensembles must have equal size")
    total = 0.0
    assignments = []
    for b, r in zip(ensemble, reconstructed):
        d, phi = metric.wasserstein_bdt(b, r)
        total += d * d
        assignments.append(phi)
    return total, assignments


# ---------------------------------------------------------------------------
# Penalties
# ---------------------------------------------------------------------------


def penalty_metric(latent: np.ndarray, dm: DistanceMatrix) -> float:
    """Squared mismatch between tree distances and latent Euclidean distances."""
    n = latent.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = float(np.linalg.norm(latent[i] - latent[j]))
            total += (dm.entries[i, j] - d) ** 2
    return total


def _latent_kmeans(latent: np.ndarray, k: int, seed: int, rounds: int = 50):
    """Plain k-means on latent coordinates (seeded, deterministic)."""
    n = latent.shape[0]
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = [int(rng.integers(n))]
    while len(chosen) < k:
        d2 = np.min(
            ((latent[:, None, :] - latent[None, chosen, :]) ** 2).sum(-1), axis=1
        )
        if d2.sum() <= 0:
            pick = next(i for i in range(n) if i not in chosen)
        else:
            pick = int(rng.choice(n, p=d2 / d2.sum()))
        chosen.append(pick)
    centroids = latent[chosen].copy()
    assign = None
    for _round in range(rounds):
        d2 = ((latent[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
        new_assign = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new_assign == c):  # re-seed an empty cluster
                new_assign[int(np.argmax(d2[np.arange(n), new_assign]))] = c
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centroids[c] = latent[assign == c].mean(axis=0)
    return centroids


def _soft_assignments(latent: np.ndarray, centroids: np.ndarray, beta: float):
    d = np.sqrt(((latent[:, None, :] - centroids[None, :, :]) ** 2).sum(-1))
    logits = -beta * d
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True), d


def penalty_cluster(latent: np.ndarray, clustering: bc.ClusteringVector,
                    beta: float, seed: int, centroids: np.ndarray | None = None):
    """KL divergence between given clusters and the latent soft clustering."""
    if centroids is None:
        centroids = _latent_kmeans(latent, clustering.k, seed)
    soft, _ = _soft_assignments(latent, centroids, beta)
    total = 0.0
    for i, g in enumerate(clustering.member_of):
        total += -np.log(max(soft[i, g], 1e-300))
    return float(total), centroids


def _penalty_metric_grad(latent: np.ndarray, dm: DistanceMatrix) -> np.ndarray:
    n = latent.shape[0]
    grad = np.zeros_like(latent)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            diff = latent[i] - latent[j]
            d = float(np.linalg.norm(diff))
            if d <= 0:
                continue
            grad[i] += -4.0 * (dm.entries[i, j] - d) * diff / d
    return grad


def _penalty_cluster_grad(latent: np.ndarray, clustering: bc.ClusteringVector,
                          beta: float, centroids: np.ndarray) -> np.ndarray:
    soft, dist = _soft_assignments(latent, centroids, beta)
    grad = np.zeros_like(latent)
    for i, g in enumerate(clustering.member_of):
        for l in range(clustering.k):
            if dist[i, l] <= 1e-300:
                continue
            direction = (latent[i] - centroids[l]) / dist[i, l]
            coeff = beta * ((1.0 if l == g else 0.0) - soft[i, l])
            grad[i] += coeff * direction
    return grad


# ---------------------------------------------------------------------------
# Frozen-decision surrogate and its gradient
# ---------------------------------------------------------------------------


@dataclass
class _FrozenCtx:
    members: list
    latent_layer: int
    dm: DistanceMatrix | None
    clustering: bc.ClusteringVector | None
    centroids: np.ndarray | None
    lambda_metric: float
    lambda_cluster: float
    softmax_beta: float


def _freeze(params: _Params, ensemble, n_it, slope, n_e,
            dm=None, clustering=None, beta=5.0, seed=0,
            lambda_metric=0.0, lambda_cluster=0.0) -> _FrozenCtx:
    members = []
    for b in ensemble:
        ctx = _forward_member(params, b, n_it, slope)
        recon = params.out_bdt(params.n_layers - 1, ctx.layers[-1].v_out)
        _, phi = metric.wasserstein_bdt(b, recon)
        const = 0.0
        matches = []
        for l, r in phi.matches:
            if r == DIAGONAL:
                const += (b.deaths[l] - b.births[l]) ** 2 / 2.0
            else:
                matches.append((l, r))
        ctx.energy_matches = matches
        ctx.energy_const = const
        members.append(ctx)
    centroids = None
    if clustering is not None:
        latent = np.array([m.layers[n_e - 1].alpha_raw for m in members])
        centroids = _latent_kmeans(latent, clustering.k, seed)
    return _FrozenCtx(members, n_e - 1, dm, clustering, centroids,
                      lambda_metric, lambda_cluster, beta)


def _gamma_apply_frozen(raw, modes, midpoint):
    out = raw.copy()
    out[modes == _CLAMP0] = 0.0
    out[modes == _CLAMP1] = 1.0
    root = np.flatnonzero(modes == _ROOT)
    if root.size:
        out[root[0]], out[root[1]] = 0.0, 1.0
    for j in np.flatnonzero(midpoint):
        mid = (out[2 * j] + out[2 * j + 1]) / 2.0
        out[2 * j] = out[2 * j + 1] = mid
    return out


def surrogate_loss(params: _Params, ensemble, ctx: _FrozenCtx,
                   slope: float) -> float:
    """Loss with all discrete decisions frozen; smooth in every parameter."""
    latent = np.zeros((len(ensemble), params.b_in[ctx.latent_layer].shape[1]))
    total = 0.0
    for i, (b, mem) in enumerate(zip(ensemble, ctx.members)):
        v = b.coords()
        for k, lc in enumerate(mem.layers):
            m, r = _projection_system(params.o_in[k], params.b_in[k], v, lc.partner)
            alpha, _ = _solve_projection(m, r)
            alpha_act = alpha * lc.sigma_mask
            if k == ctx.latent_layer:
                latent[i] = alpha  # basis coordinates, before the activation
            raw = params.o_out[k] + params.b_out[k] @ alpha_act
            v = _gamma_apply_frozen(raw, lc.gamma_modes, lc.gamma_midpoint)
        e = mem.energy_const
        for l, j in mem.energy_matches:
            if l == DIAGONAL:
                e += (v[2 * j + 1] - v[2 * j]) ** 2 / 2.0
            else:
                e += (b.births[l] - v[2 * j]) ** 2 + (b.deaths[l] - v[2 * j + 1]) ** 2
        total += e
    if ctx.dm is not None and ctx.lambda_metric:
        total += ctx.lambda_metric * penalty_metric(latent, ctx.dm)
    if ctx.clustering is not None and ctx.lambda_cluster:
        p, _ = penalty_cluster(latent, ctx.clustering, ctx.softmax_beta,
                               0, centroids=ctx.centroids)
        total += ctx.lambda_cluster * p
    return float(total)


def _gamma_backward(g_out, modes, midpoint):
    g_raw = g_out.copy()
    for j in np.flatnonzero(midpoint):
        s = (g_out[2 * j] + g_out[2 * j + 1]) / 2.0
        g_raw[2 * j] = g_raw[2 * j + 1] = s
    g_raw[modes != _PASS] = 0.0
    return g_raw


def gradient(params: _Params, ensemble, ctx: _FrozenCtx, slope: float) -> _Params:
    """Closed-form gradient of the frozen surrogate for every parameter."""
    grads = params.zeros_like()

    latent = np.array([m.layers[ctx.latent_layer].alpha_raw for m in ctx.members])
    g_latent = np.zeros_like(latent)
    if ctx.dm is not None and ctx.lambda_metric:
        g_latent += ctx.lambda_metric * _penalty_metric_grad(latent, ctx.dm)
    if ctx.clustering is not None and ctx.lambda_cluster:
        g_latent += ctx.lambda_cluster * _penalty_cluster_grad(
            latent, ctx.clustering, ctx.softmax_beta, ctx.centroids)

    for i, (b, mem) in enumerate(zip(ensemble, ctx.members)):
        n_layers = params.n_layers
        v_stack = [b.coords()]
        for lc in mem.layers:
            v_stack.append(lc.v_out)

        # d loss / d reconstruction coordinates
        v_last = v_stack[-1]
        g_v = np.zeros_like(v_last)
        for l, j in mem.energy_matches:
            if l == DIAGONAL:
                gap = v_last[2 * j + 1] - v_last[2 * j]
                g_v[2 * j] += -gap
                g_v[2 * j + 1] += gap
            else:
                g_v[2 * j] += 2.0 * (v_last[2 * j] - b.births[l])
                g_v[2 * j + 1] += 2.0 * (v_last[2 * j + 1] - b.deaths[l])

        for k in range(n_layers - 1, -1, -1):
            lc = mem.layers[k]
            g_raw = _gamma_backward(g_v, lc.gamma_modes, lc.gamma_midpoint)
            grads.o_out[k] += g_raw
            grads.b_out[k] += np.outer(g_raw, lc.alpha_act)
            g_alpha_act = params.b_out[k].T @ g_raw
            g_alpha = g_alpha_act * lc.sigma_mask
            if k == ctx.latent_layer:
                # penalties act on the raw basis coordinates
                g_alpha = g_alpha + g_latent[i]
            g_m, g_r = _pinv_vjp(lc.svd, lc.m, lc.r, lc.alpha_raw, g_alpha)

            g_v_prev = np.zeros_like(v_stack[k])
            for j in range(params.o_in[k].size // 2):
                bx, dx = 2 * j, 2 * j + 1
                l = lc.partner.get(j, DIAGONAL)
                if l != DIAGONAL:
                    g_v_prev[2 * l] += g_r[bx]
                    g_v_prev[2 * l + 1] += g_r[dx]
                    grads.o_in[k][bx] += -g_r[bx]
                    grads.o_in[k][dx] += -g_r[dx]
                    grads.b_in[k][bx] += g_m[bx]
                    grads.b_in[k][dx] += g_m[dx]
                else:
                    grads.o_in[k][bx] += (-g_r[bx] + g_r[dx]) / 2.0
                    grads.o_in[k][dx] += (g_r[bx] - g_r[dx]) / 2.0
                    grads.b_in[k][bx] += (g_m[bx] - g_m[dx]) / 2.0
                    grads.b_in[k][dx] += (g_m[dx] - g_m[bx]) / 2.0
            g_v = g_v_prev
    return grads


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _truncate_to_cap(bdt: BDT, cap: int) -> BDT:
    """Keep the most persistent branches (root always), reattach orphans."""
    if bdt.size <= cap:
        return bdt.copy()
    pers = bdt.persistence()
    order = sorted(range(bdt.size), key=lambda i: (-pers[i], i))
    keep = {bdt.root}
    for i in order:
        if len(keep) >= cap:
            break
        keep.add(i)
    keep_list = sorted(keep)
    remap = {old: new for new, old in enumerate(keep_list)}
    parent = []
    for i in keep_list:
        p = int(bdt.parent[i])
        while p != NONE and p not in keep:
            p = int(bdt.parent[p])
        parent.append(NONE if p == NONE else remap[p])
    return BDT(bdt.births[keep_list], bdt.deaths[keep_list],
               np.array(parent, dtype=np.int64), bdt.normalized, bdt.scale)


def _displacement_vector(origin: BDT, target: BDT, phi: Assignment) -> np.ndarray:
    """Per-origin-branch displacement realized by an optimal assignment."""
    partner = phi.left_partner()
    vec = np.zeros(2 * origin.size)
    for j in range(origin.size):
        l = partner.get(j, DIAGONAL)
        if l != DIAGONAL:
            vec[2 * j] = target.births[l] - origin.births[j]
            vec[2 * j + 1] = target.deaths[l] - origin.deaths[j]
        else:
            half = (origin.deaths[j] - origin.births[j]) / 2.0
            vec[2 * j], vec[2 * j + 1] = half, -half
    return vec


def _orthogonal_residual(cols: list[np.ndarray], cand: np.ndarray) -> np.ndarray:
    """Component of cand orthogonal to span(cols); cols need not be orthogonal."""
    if not cols:
        return cand.copy()
    q, _ = np.linalg.qr(np.column_stack(cols))
    return cand - q @ (q.T @ cand)


def _useful_direction(cols: list[np.ndarray], cand: np.ndarray) -> bool:
    """Reject candidates nearly inside the current span; they would add no
    expressiveness but would make the projection systems ill-conditioned."""
    norm = np.linalg.norm(cand)
    if norm <= 1e-12:
        return False
    return np.linalg.norm(_orthogonal_residual(cols, cand)) >= 0.05 * norm


def _layer_dims(config: TrainConfig) -> list[int]:
    enc = [config.d_latent * (2 ** (config.n_e - k)) for k in range(1, config.n_e + 1)]
    dec = [max(config.d_latent + 1,
               int(np.ceil(config.d_out / (2 ** (config.n_d - k)))))
           for k in range(1, config.n_d + 1)]
    dec[-1] = config.d_out
    return enc + dec


def _output_map(rng, o_in: BDT, o_out: BDT, blend: float = 0.2) -> np.ndarray:
    """Random row-normalized map from input to output origin coordinates.

    A pure uniform map would average all coordinates and start every output
    slot near the diagonal, where the creation cost flattens it for good.
    Blending the noise with a persistence-rank pairing keeps the slots near
    live branches while the map stays random and convex.
    """
    rank_in = sorted(range(o_in.size), key=lambda i: (-(o_in.persistence()[i]), i))
    rank_out = sorted(range(o_out.size), key=lambda i: (-(o_out.persistence()[i]), i))
    pairing = np.zeros((2 * o_out.size, 2 * o_in.size))
    for pos, j in enumerate(rank_out):
        i = rank_in[pos % len(rank_in)]
        pairing[2 * j, 2 * i] = 1.0
        pairing[2 * j + 1, 2 * i + 1] = 1.0
    noise = rng.uniform(0.0, 1.0, (2 * o_out.size, 2 * o_in.size))
    noise /= noise.sum(axis=1, keepdims=True)
    return (1.0 - blend) * pairing + blend * noise


def _cap_fraction(config: TrainConfig, k: int, total: int, side: str) -> float:
    in1, out1, in2, out2 = config.origin_caps
    last = total - 1
    if side == "in":
        return in1 if k == 0 else in2
    return out2 if k == last else out1


def initialize(ensemble: list[BDT], config: TrainConfig) -> Network:
    """Greedy data-driven input bases, random linear maps for the outputs."""
    if not ensemble:
        raise ValueError("empty ensemble")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    total_branches = sum(b.size for b in ensemble)
    dims = _layer_dims(config)
    n_layers = config.n_e + config.n_d
    ensemble_star = bc.barycenter(ensemble)
    # keep origins large enough that the decoder can strictly widen even on
    # tiny ensembles where the fractional caps would collapse the bases
    cap_floor = max(1, -(-(config.d_latent + 1) // 2))

    current = [b.copy() for b in ensemble]
    layers = []
    prev_dim = None
    for k in range(n_layers):
        cap_in = max(cap_floor,
                     int(_cap_fraction(config, k, n_layers, "in") * total_branches))
        cap_out = max(cap_floor,
                      int(_cap_fraction(config, k, n_layers, "out") * total_branches))
        o_in = _truncate_to_cap(bc.barycenter(current), cap_in)
        o_out = _truncate_to_cap(ensemble_star, cap_out)
        d_k = min(dims[k], 2 * o_in.size, 2 * o_out.size)
        if prev_dim is not None:
            if k < config.n_e:
                d_k = min(d_k, prev_dim - 1)
            else:
                d_k = max(d_k, prev_dim + 1)
        if not 1 <= d_k <= min(2 * o_in.size, 2 * o_out.size):
            raise ValueError(
                f"layer {k}: cannot satisfy dimension monotonicity with "
                f"origins of {o_in.size} and {o_out.size} branches"
            )
        prev_dim = d_k

        cols: list[np.ndarray] = []
        errors = np.array([metric.wasserstein_bdt(o_in, b)[0] ** 2 for b in current])
        while len(cols) < d_k:
            worst = int(np.argmax(errors))
            if errors[worst] <= 1e-12:
                break
            _, phi = metric.wasserstein_bdt(o_in, current[worst])
            cand = _displacement_vector(o_in, current[worst], phi)
            if not _useful_direction(cols, cand):
                errors[worst] = 0.0  # redundant direction, try the next member
                continue
            cols.append(cand)
            basis = BDTBasis(o_in, np.column_stack(cols), checked=False)
            from .geometry import project  # deferred to avoid cycle at import

            for i, b in enumerate(current):
                _, errors[i] = project(b, basis, config.n_it)
        mean_norm = (np.mean([np.linalg.norm(c) for c in cols])
                     if cols else 0.05 * np.sqrt(2 * o_in.size))
        while len(cols) < d_k:
            # random fill orthogonal to the span, with controlled norm
            cand = _orthogonal_residual(cols, rng.normal(size=2 * o_in.size))
            if np.linalg.norm(cand) <= 1e-12:
                continue
            cols.append(cand * (mean_norm / np.linalg.norm(cand)))
        basis_in = np.column_stack(cols)

        w = _output_map(rng, o_in, o_out)
        out_coords = w @ o_in.coords()
        out_coords, _, _ = _gamma_coords(out_coords, o_out.root, o_out.parent)
        basis_out = w @ basis_in
        for _attempt in range(8):
            if np.linalg.matrix_rank(basis_out, tol=1e-10) >= d_k:
                break
            w = _output_map(rng, o_in, o_out)
            basis_out = w @ basis_in
        else:
            # no random map can fix a deficient product; complete the column
            # space with small orthogonal directions instead
            kept: list[np.ndarray] = []
            scale = float(np.mean(np.linalg.norm(basis_out, axis=0))) or 1.0
            for j in range(d_k):
                cand = basis_out[:, j]
                resid = _orthogonal_residual(kept, cand)
                if np.linalg.norm(resid) < 1e-8 * scale:
                    extra = _orthogonal_residual(kept, rng.normal(size=cand.size))
                    cand = cand + extra * (0.01 * scale / np.linalg.norm(extra))
                kept.append(cand)
            basis_out = np.column_stack(kept)

        o_in_bdt = BDT(o_in.births.copy(), o_in.deaths.copy(), o_in.parent.copy(),
                       True, None)
        o_out_bdt = BDT(out_coords[0::2], out_coords[1::2], o_out.parent.copy(),
                        True, None)
        layer = Layer(
            SubLayer(o_in_bdt, BDTBasis(o_in_bdt, basis_in, checked=False), "input"),
            SubLayer(o_out_bdt, BDTBasis(o_out_bdt, basis_out, checked=False), "output"),
            d_k,
        )
        layers.append(layer)
        current = [layer_forward(layer, b, config.n_it, config.leaky_slope)[1]
                   for b in current]
    return Network(layers, config.n_e, config.n_d)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _gauge_latent_scale(params: _Params, ensemble, config: TrainConfig,
                        dm: DistanceMatrix) -> None:
    """Match the latent distance scale to the distance matrix at init.

    The latent gauge is free: scaling the latent layer's input basis columns
    scales the coefficients inversely, and the output basis absorbs it (the
    activation is positively homogeneous), leaving every reconstruction
    unchanged. Fixing the gauge lets the metric penalty start from the shape
    mismatch alone instead of a global scale error.
    """
    k = config.n_e - 1
    latent = np.array([
        _forward_member(params, b, config.n_it, config.leaky_slope)
        .layers[k].alpha_raw
        for b in ensemble
    ])
    d = np.sqrt(((latent[:, None, :] - latent[None, :, :]) ** 2).sum(-1))
    iu = np.triu_indices(len(ensemble), 1)
    denom = float(d[iu] @ d[iu])
    if denom <= 0:
        return
    s = float(dm.entries[iu] @ d[iu]) / denom
    if s <= 0:
        return
    params.b_in[k] /= s
    params.b_out[k] /= s


class _Adam:
    def __init__(self, params: _Params, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: _Params, grads: _Params):
        self.t += 1
        for group in ("o_in", "b_in", "o_out", "b_out"):
            ps, gs = getattr(params, group), getattr(grads, group)
            ms, vs = getattr(self.m, group), getattr(self.v, group)
            for p, g, m, v in zip(ps, gs, ms, vs):
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                m_hat = m / (1 - self.beta1**self.t)
                v_hat = v / (1 - self.beta2**self.t)
                p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(ensemble: list[BDT], config: TrainConfig,
          ground_truth_clusters: list[int] | None = None,
          member_names: list[str] | None = None,
          member_scales: list | None = None) -> TrainedModel:
    """Full-batch optimization of the reconstruction energy (plus penalties)."""
    network = initialize(ensemble, config)
    params = _Params(network)

    dm = None
    if config.penalty_metric:
        dm = metric.distance_matrix(ensemble)
        _gauge_latent_scale(params, ensemble, config, dm)
    clustering = None
    if config.penalty_cluster:
        if ground_truth_clusters is not None:
            k = max(ground_truth_clusters) + 1
            clustering = bc.ClusteringVector(len(ensemble), k, list(ground_truth_clusters))
        else:
            clustering, _ = bc.wasserstein_kmeans(ensemble, config.n_clusters,
                                                  config.seed)

    adam = _Adam(params, config.learning_rate, config.beta1, config.beta2,
                 config.epsilon_hat)
    trace = []
    prev_loss = np.inf
    best_loss = np.inf
    best_state = None
    best_epoch = 0
    stall = 0
    stopped_early = False
    for _epoch in range(config.max_epochs):
        ctx = _freeze(params, ensemble, config.n_it, config.leaky_slope,
                      config.n_e, dm=dm, clustering=clustering,
                      beta=config.softmax_beta, seed=config.seed,
                      lambda_metric=config.lambda_metric if config.penalty_metric else 0.0,
                      lambda_cluster=config.lambda_cluster if config.penalty_cluster else 0.0)
        e_val = sum(
            mem.energy_const + _matched_cost(b, mem)
            for b, mem in zip(ensemble, ctx.members)
        )
        latent = np.array([m.layers[config.n_e - 1].alpha_act for m in ctx.members])
        p_m = penalty_metric(latent, dm) if dm is not None else 0.0
        p_c = (penalty_cluster(latent, clustering, config.softmax_beta,
                               config.seed, centroids=ctx.centroids)[0]
               if clustering is not None else 0.0)
        loss = e_val
        if config.penalty_metric:
            loss += config.lambda_metric * p_m
        if config.penalty_cluster:
            loss += config.lambda_cluster * p_c
        trace.append((float(e_val), float(p_m), float(p_c)))

        # remember the best parameters seen; transient energy increases are
        # normal for this optimization but should not poison the result
        if loss < best_loss:
            best_loss = loss
            best_epoch = _epoch
            best_state = ([a.copy() for a in params.o_in],
                          [a.copy() for a in params.b_in],
                          [a.copy() for a in params.o_out],
                          [a.copy() for a in params.b_out])

        if np.isfinite(prev_loss):
            rel = (prev_loss - loss) / prev_loss if prev_loss > 0 else 0.0
            if 0.0 <= rel < config.stop_rel_decrease:
                stall += 1
                if stall >= config.patience:
                    stopped_early = True
                    break
            else:
                stall = 0
        prev_loss = loss

        grads = gradient(params, ensemble, ctx, config.leaky_slope)
        adam.step(params, grads)

    if best_state is not None:
        params.o_in, params.b_in, params.o_out, params.b_out = best_state

    final_network = params.to_network(network)
    final_params = _Params(final_network)
    latent_rows, last_rows = [], []
    for b in ensemble:
        mem = _forward_member(final_params, b, config.n_it, config.leaky_slope)
        latent_rows.append(mem.layers[config.n_e - 1].alpha_raw.copy())
        last_rows.append(mem.layers[-1].alpha_act.copy())
    latent = np.array(latent_rows)
    last = np.array(last_rows)
    return TrainedModel(
        network=final_network,
        config=config,
        energy_trace=trace,
        latent_coords=latent,
        last_coeffs=last,
        member_scales=member_scales or [b.scale for b in ensemble],
        member_names=member_names or [f"member_{i}" for i in range(len(ensemble))],
        stopped_early=stopped_early,
        best_epoch=best_epoch,
    )


def _matched_cost(b: BDT, mem: _MemberCtx) -> float:
    v = mem.layers[-1].v_out
    total = 0.0
    for l, j in mem.energy_matches:
        if l == DIAGONAL:
            total += (v[2 * j + 1] - v[2 * j]) ** 2 / 2.0
        else:
            total += (b.births[l] - v[2 * j]) ** 2 + (b.deaths[l] - v[2 * j + 1]) ** 2
    return total


def encode(model: TrainedModel, b: BDT) -> np.ndarray:
    """Latent coordinates: basis coefficients at the innermost encoding layer."""
    params = _Params(model.network)
    cfg = model.config
    v = b.coords()
    prev = b
    for k in range(cfg.n_e):
        ctx = _layer_forward_params(params, k, v, prev, cfg.n_it, cfg.leaky_slope)
        if k == cfg.n_e - 1:
            return ctx.alpha_raw.copy()
        v = ctx.v_out
        prev = params.out_bdt(k, v)
    raise AssertionError("unreachable")


def decode(model: TrainedModel, latent: np.ndarray) -> BDT:
    """Rebuild a valid tree from latent coordinates via the decoding layers."""
    cfg = model.config
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (cfg.d_latent,):
        raise ValueError(f"latent must have length {cfg.d_latent}")
    params = _Params(model.network)
    alpha_act = leaky_relu(latent, cfg.leaky_slope)
    k = cfg.n_e - 1
    raw = params.o_out[k] + params.b_out[k] @ alpha_act
    v, _, _ = _gamma_coords(raw, params.out_roots[k], params.out_parents[k])
    prev = params.out_bdt(k, v)
    for k in range(cfg.n_e, cfg.n_e + cfg.n_d):
        ctx = _layer_forward_params(params, k, v, prev, cfg.n_it, cfg.leaky_slope)
        v = ctx.v_out
        prev = params.out_bdt(k, v)
    return prev
