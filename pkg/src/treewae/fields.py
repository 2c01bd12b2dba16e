"""Scalar fields on regular grids: I/O, synthesis, noise, ground-truth ensembles.

Fields live on the unit square (2D) or unit cube (3D), sampled on a regular
grid with x varying fastest. All randomness goes through seeded PCG64
generators so that outputs are reproducible across runs and platforms.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScalarField",
    "GaussianSpec",
    "FieldFormatError",
    "load_field",
    "save_field",
    "generate_gaussian_mixture",
    "add_uniform_noise",
    "generate_stability_ensemble",
]

MAGIC = "SFLD1"


class FieldFormatError(ValueError):
    """Raised when a field file violates the SFLD1 format."""


@dataclass
class ScalarField:
    """A scalar field on a regular grid, values row-major (x fastest)."""

    dims: tuple[int, int, int]
    values: np.ndarray
    name: str = "field"

    def __post_init__(self):
        nx, ny, nz = self.dims
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if nx < 2 or ny < 2 or nz < 1:
            raise ValueError(f"invalid dims {self.dims}")
        if self.values.size != nx * ny * nz:
            raise ValueError(
                f"value count {self.values.size} does not match dims {self.dims}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite value in field")

    @property
    def n_vertices(self) -> int:
        return int(np.prod(self.dims))

    def value_range(self) -> float:
        return float(self.values.max() - self.values.min())

    def copy(self, name: str | None = None) -> "ScalarField":
        return ScalarField(self.dims, self.values.copy(), name or self.name)


@dataclass
class GaussianSpec:
    """Isotropic Gaussian mixture: equal-length center/amplitude/width lists."""

    centers: list[tuple[float, float]]
    amplitudes: list[float]
    widths: list[float]

    def __post_init__(self):
        if not (len(self.centers) == len(self.amplitudes) == len(self.widths)):
            raise ValueError("centers, amplitudes and widths must have equal length")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be strictly positive")


def load_field(path) -> ScalarField:
    """Read an SFLD1 field file: ASCII header, then little-endian float64."""
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            parts = header.decode("ascii").split()
        except UnicodeDecodeError:
            raise FieldFormatError(f"{path}: malformed header at byte 0")
        if len(parts) != 4 or parts[0] != MAGIC:
            raise FieldFormatError(f"{path}: malformed header at byte 0")
        try:
            nx, ny, nz = (int(p) for p in parts[1:])
        except ValueError:
            raise FieldFormatError(f"{path}: malformed header at byte 0")
        n = nx * ny * nz
        payload = fh.read()
    if len(payload) != 8 * n:
        raise FieldFormatError(
            f"{path}: value count mismatch at byte {len(header)}: "
            f"expected {n} float64 ({8 * n} bytes), found {len(payload)} bytes"
        )
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        offset = len(header) + 8 * int(bad[0])
        raise FieldFormatError(f"{path}: non-finite value at byte {offset}")
    try:
        return ScalarField((nx, ny, nz), values, name=str(path))
    except ValueError as exc:
        raise FieldFormatError(f"{path}: {exc}")


def save_field(sf: ScalarField, path) -> None:
    nx, ny, nz = sf.dims
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {nx} {ny} {nz}\n".encode("ascii"))
        fh.write(struct.pack(f"<{sf.values.size}d", *sf.values))


def _grid_xy(dims):
    nx, ny, _ = dims
    xs = np.linspace(0.0, 1.0, nx)
    ys = np.linspace(0.0, 1.0, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")  # row-major, x fastest
    return gx.ravel(), gy.ravel()


def generate_gaussian_mixture(spec: GaussianSpec, dims, name: str = "mixture") -> ScalarField:
    """Sample a sum of isotropic Gaussians on the unit-square grid."""
    if len(spec.centers) == 0:
        raise ValueError("empty Gaussian spec")
    if dims[2] != 1:
        raise ValueError("Gaussian mixtures are 2D (nz must be 1)")
    gx, gy = _grid_xy(dims)
    values = np.zeros(gx.size)
    for (cx, cy), amp, w in zip(spec.centers, spec.amplitudes, spec.widths):
        values += amp * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2.0 * w * w))
    return ScalarField(tuple(dims), values, name)


def add_uniform_noise(sf: ScalarField, eps: float, seed: int) -> ScalarField:
    """Perturb each value by a uniform draw in [-eps*R/2, +eps*R/2], R = range."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0:
        return sf.copy()
    rng = np.random.Generator(np.random.PCG64(seed))
    half = eps * sf.value_range() / 2.0
    noise = rng.uniform(-half, half, size=sf.values.size)
    return ScalarField(sf.dims, sf.values + noise, sf.name)


# ---------------------------------------------------------------------------
# Ground-truth stability ensemble
# ---------------------------------------------------------------------------
#
# Sixteen 2D fields arranged as a square of squares in the diagram metric
# space. A tall central hill carries the global pair; a secondary summit is
# shared by all members. Four optional spikes toggle per member, each placed
# on the central hill's slope: the spike's radius fixes the saddle where its
# component merges (the birth of its diagram point) and its amplitude fixes
# the peak (the death). Persistences are tuned so that destroying a big spike
# costs exactly 1 and a small one exactly 0.15, realizing the outer square
# (side 1, diagonal sqrt(2)) and the four inner squares (side 0.15). Distinct
# saddle heights keep every cross-slot match strictly worse than destruction,
# so all 120 pairwise distances have closed forms.

_GRID = (96, 96, 1)
_HILL_AMP = 4.0
_HILL_W = 0.12
_HILL2_POINT = (0.6, 3.1)
_BIG_PERS = np.sqrt(2.0)  # diagonal cost 1
_SMALL_PERS = 0.15 * np.sqrt(2.0)  # diagonal cost 0.15
_SPIKE_W = 0.035
_RIDGE_W = 0.05
_RIDGE_STEP = 0.02

# slot -> (spoke angle in degrees, saddle height, persistence, spike radius);
# low-saddle slots sit farther out so the central hill's tail stays below
# their saddle target
_SLOTS = {
    "hill2": (180.0, _HILL2_POINT[0], _HILL2_POINT[1] - _HILL2_POINT[0], 0.36),
    "A": (0.0, 0.25, _BIG_PERS, 0.36),
    "B": (90.0, 1.45, _BIG_PERS, 0.36),
    "a": (270.0, 0.10, _SMALL_PERS, 0.44),
    "b": (135.0, 0.28, _SMALL_PERS, 0.36),
}

# member order follows the four corner classes, bottom-left first
_MEMBER_GRID = [
    (0.00, 0.00), (0.15, 0.00), (0.15, 0.15), (0.00, 0.15),
    (0.85, 0.00), (1.00, 0.00), (1.00, 0.15), (0.85, 0.15),
    (0.85, 0.85), (1.00, 0.85), (1.00, 1.00), (0.85, 1.00),
    (0.00, 0.85), (0.15, 0.85), (0.15, 1.00), (0.00, 1.00),
]


def _member_slots(u: float, v: float) -> list[str]:
    slots = ["hill2"]
    if u >= 0.5:
        slots.append("A")
    if v >= 0.5:
        slots.append("B")
    if u in (0.15, 0.85):
        slots.append("a")
    if v in (0.15, 0.85):
        slots.append("b")
    return slots


def _hill_radius(height: float) -> float:
    return _HILL_W * np.sqrt(2.0 * np.log(_HILL_AMP / height))


def _slot_geometry(name):
    """Spike center and ridge bump centers for a slot's spoke."""
    angle, saddle, _pers, spike_r = _SLOTS[name]
    th = np.radians(angle)
    direction = (np.cos(th), np.sin(th))
    spike = (0.5 + spike_r * direction[0], 0.5 + spike_r * direction[1])
    # start the ridge where the hill has dropped to half the saddle height so
    # the ridge always has to push the pass up (amplitudes stay positive)
    r0 = _hill_radius(saddle / 2.0)
    radii = np.arange(r0, spike_r + _RIDGE_STEP / 2, _RIDGE_STEP)
    ridge = [(0.5 + r * direction[0], 0.5 + r * direction[1]) for r in radii]
    return spike, ridge


def _assemble_field(spike_amps, ridge_amps, active, hill_amp=_HILL_AMP) -> ScalarField:
    centers = [(0.5, 0.5)]
    amps = [hill_amp]
    widths = [_HILL_W]
    for name in _SLOTS:
        if name not in active:
            continue
        spike, ridge = _slot_geometry(name)
        for c in ridge:
            centers.append(c)
            amps.append(ridge_amps[name])
            widths.append(_RIDGE_W)
        centers.append(spike)
        amps.append(spike_amps[name])
        widths.append(_SPIKE_W)
    sf = generate_gaussian_mixture(GaussianSpec(centers, amps, widths), _GRID)
    sf.values -= sf.values.min()  # pin the global birth at exactly zero
    return sf


def _measured_points(sf: ScalarField):
    """Simplified split-tree diagram with the (x, y) position of each maximum."""
    from . import topology  # local import, fields is lower in the stack

    tree = topology.compute_merge_tree(sf, kind="split")
    diag = topology.persistence_pairs(tree)
    diag = topology.simplify(diag, 0.0025)
    nx, ny, _ = sf.dims
    rows = []
    for p in diag.points:
        y, x = divmod(p.extremum_vertex, nx)
        rows.append((p.birth, p.death, x / (nx - 1), y / (ny - 1)))
    return np.array(rows)


def _slot_point(pts, name):
    """The measured point whose maximum sits at the slot's spike location."""
    spike, _ = _slot_geometry(name)
    d2 = (pts[:, 2] - spike[0]) ** 2 + (pts[:, 3] - spike[1]) ** 2
    return pts[int(np.argmin(d2))]


def _ridge_overlap_factor() -> float:
    # height of a unit-amplitude ridge: sum of evenly spaced Gaussian tails
    ks = np.arange(-30, 31)
    return float(np.exp(-((ks * _RIDGE_STEP) ** 2) / (2 * _RIDGE_W**2)).sum())


def _solve_amplitudes():
    """Adjust amplitudes until the realized diagram points hit their targets.

    A slot's birth tracks its ridge height and its death the spike amplitude;
    around the working point the map is close to additive, so a damped
    fixed-point update converges quickly.
    """
    overlap = _ridge_overlap_factor()
    spike_amps = {n: _SLOTS[n][2] for n in _SLOTS}
    ridge_amps = {n: _SLOTS[n][1] / (2.0 * overlap) for n in _SLOTS}
    hill_amp = _HILL_AMP
    for _ in range(120):
        sf = _assemble_field(spike_amps, ridge_amps, set(_SLOTS), hill_amp)
        pts = _measured_points(sf)
        worst = 0.0
        top = pts[np.argmax(pts[:, 1] - pts[:, 0])]
        d_top = _HILL_AMP - top[1]
        hill_amp += 0.6 * d_top
        worst = max(worst, abs(d_top))
        for name, (_, saddle, pers, _r) in _SLOTS.items():
            got = _slot_point(pts, name)
            db, dd = saddle - got[0], (saddle + pers) - got[1]
            ridge_amps[name] += 0.6 * db / overlap
            spike_amps[name] += 0.6 * (dd - db)
            worst = max(worst, abs(db), abs(dd))
        if worst < 1e-9:
            break
    if worst > 1e-6:
        raise RuntimeError(f"ensemble amplitude solve did not converge ({worst:.2e})")
    return spike_amps, ridge_amps, hill_amp


_amp_cache: dict = {}


def _solved_amplitudes():
    if "amps" not in _amp_cache:
        _amp_cache["amps"] = _solve_amplitudes()
    return _amp_cache["amps"]


def _intended_diagram(u, v):
    pts = [(0.0, _HILL_AMP), _HILL2_POINT]
    for name in _member_slots(u, v)[1:]:
        _, saddle, pers, _r = _SLOTS[name]
        pts.append((saddle, saddle + pers))
    return np.array(pts)


def _analytic_matrix():
    from . import metric
    from .topology import PersistenceDiagram, DiagramPoint

    diagrams = []
    for u, v in _MEMBER_GRID:
        pts = [DiagramPoint(b, d) for b, d in _intended_diagram(u, v)]
        diagrams.append(PersistenceDiagram(pts))
    n = len(diagrams)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d, _ = metric.wasserstein_diagrams(diagrams[i], diagrams[j])
            m[i, j] = m[j, i] = d
    return m


def generate_stability_ensemble(noise_eps: float, seed: int):
    """Sixteen-member ground-truth ensemble.

    Returns (fields, labels, target_matrix): the scalar fields, the four-class
    ground-truth labels (one class per outer corner), and the analytic
    pairwise diagram-distance matrix of the noise-free design.
    """
    if not 0.0 <= noise_eps <= 1.0:
        raise ValueError("noise_eps must lie in [0, 1]")
    spike_amps, ridge_amps, hill_amp = _solved_amplitudes()
    fields = []
    labels = []
    for i, (u, v) in enumerate(_MEMBER_GRID):
        sf = _assemble_field(spike_amps, ridge_amps, set(_member_slots(u, v)), hill_amp)
        sf.name = f"f_({u:g},{v:g})"
        if noise_eps > 0:
            sf = add_uniform_noise(sf, noise_eps, seed + i)
        fields.append(sf)
        labels.append(i // 4)
    return fields, labels, _analytic_matrix()
