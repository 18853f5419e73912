"""Synthetic instance generation, per-generation statistics, and all-pairs
distance matrices.

Randomness comes from numpy's Philox counter-based generator (Philox-4x64-10,
documented constants), so a seed fully determines an instance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .correspondence import eval_F_bi
from .geometry import PointCloud, RigidMotion, rotation_dim
from .search import SearchConfig, SearchResult, _resolve_threads, register_bijective


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic registration instance."""

    n: int
    sigma: float
    seed: int
    dim: int = 3
    mode: str = "cp"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.n < self.dim + 1:
            raise ValueError(f"need at least dim+1={self.dim + 1} points, got n={self.n}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.mode not in ("cp", "bijective"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class SynthTruth:
    """Ground-truth transform in the raw frame, plus the normalization that
    produced the emitted clouds (both centered, then scaled by the shared
    factor ``scale`` so the rigid relation survives)."""

    motion: RigidMotion
    shift_p: np.ndarray
    shift_q: np.ndarray
    scale: float

    @property
    def normalized_motion(self) -> RigidMotion:
        """Equivalent transform between the normalized clouds."""
        R = self.motion.matrix()
        t = self.scale * (R @ self.shift_p + self.motion.trans - self.shift_q)
        return RigidMotion(self.motion.rot, t)


def _draw_rotation(gen: np.random.Generator, dim: int) -> np.ndarray:
    if dim == 2:
        return np.array([gen.uniform(-math.pi, math.pi)])
    quat = gen.normal(size=4)
    quat /= np.linalg.norm(quat)
    w = _ScipyRotation.from_quat(quat).as_rotvec()
    return np.array([w[2], -w[1], w[0]])


def random_rigid(seed: int, dim: int) -> RigidMotion:
    """Rotation uniform on the rotation group (2D: uniform angle, 3D: uniform
    unit quaternion, rotation-vector norm at most pi); translation uniform in
    [-0.5, 0.5]^d."""
    gen = _rng(seed)
    rot = _draw_rotation(gen, dim)
    trans = gen.uniform(-0.5, 0.5, size=dim)
    return RigidMotion(rot, trans)


def gen_synthetic(spec: SynthSpec) -> tuple[PointCloud, PointCloud, SynthTruth]:
    """Sample a source cloud uniformly on the unit cube [0, 1]^d, apply a
    random rigid transform plus Gaussian noise to get the target, then center
    both clouds and scale them by one shared factor into [-1, 1]^d.

    The shared scale keeps sigma=0 instances exactly rigid after
    normalization; per-cloud scaling would not.
    """
    gen = _rng(spec.seed)
    p_raw = gen.uniform(0.0, 1.0, size=(spec.n, spec.dim))
    rot = _draw_rotation(gen, spec.dim)
    trans = gen.uniform(-0.5, 0.5, size=spec.dim)
    motion = RigidMotion(rot, trans)
    q_raw = p_raw @ motion.matrix().T + trans
    if spec.sigma > 0:
        q_raw = q_raw + gen.normal(0.0, spec.sigma, size=(spec.n, spec.dim))
    shift_p = p_raw.mean(axis=0)
    shift_q = q_raw.mean(axis=0)
    p_centered = p_raw - shift_p
    q_centered = q_raw - shift_q
    maxabs = max(float(np.abs(p_centered).max()), float(np.abs(q_centered).max()))
    P = PointCloud(p_centered / maxabs)
    Q = PointCloud(q_centered / maxabs)
    truth = SynthTruth(motion=motion, shift_p=shift_p, shift_q=shift_q, scale=1.0 / maxabs)
    return P, Q, truth


@dataclass
class GenStats:
    """Per-generation table of a finished run plus the fitted tail growth.

    ``growth_ratio`` is the geometric mean of evals(g+1)/evals(g) over the
    last third of generations; it needs at least 6 generations and is None
    otherwise.
    """

    rows: list
    growth_ratio: float | None


def per_generation_stats(result: SearchResult) -> GenStats:
    rows = list(result.generations)
    n = len(rows)
    if n < 6:
        return GenStats(rows=rows, growth_ratio=None)
    tail = rows[n - max(2, n // 3):]
    ratios = [tail[i + 1].evals / tail[i].evals for i in range(len(tail) - 1)]
    ratio = math.exp(sum(math.log(r) for r in ratios) / len(ratios))
    return GenStats(rows=rows, growth_ratio=ratio)


def farthest_point_subsample(cloud: PointCloud, k: int) -> PointCloud:
    """Deterministic farthest-point subsample of size k, seeded at the point
    nearest the centroid; returned points keep their original order."""
    pts = cloud.points
    n = pts.shape[0]
    if k >= n:
        return cloud
    if k < 1:
        raise ValueError("subsample size must be positive")
    centroid = pts.mean(axis=0)
    start = int(np.argmin(np.sum((pts - centroid) ** 2, axis=1)))
    chosen = [start]
    dist = np.sum((pts - pts[start]) ** 2, axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return PointCloud(pts[np.sort(np.array(chosen))])


@dataclass
class PairwiseCell:
    source: int
    target: int
    result: SearchResult | None
    error: str | None = None


@dataclass
class PairwiseResult:
    matrix: np.ndarray
    cells: list[PairwiseCell]


def pairwise_matrix(clouds: list[PointCloud], config: SearchConfig) -> PairwiseResult:
    """All ordered-pair bijective registration energies.

    Clouds of unequal sizes are farthest-point subsampled to the smallest
    count in the list so every cell compares equally sized clouds.  Cell
    failures are recorded and the remaining cells still run; failed entries
    are NaN in the matrix.
    """
    if len(clouds) < 2:
        raise ValueError("need at least two clouds")
    dims = {c.dim for c in clouds}
    if len(dims) != 1:
        raise ValueError("all clouds must have the same dimension")
    n_min = min(len(c) for c in clouds)
    prepared = [farthest_point_subsample(c, n_min) for c in clouds]
    k = len(prepared)
    jobs = [(i, j) for i in range(k) for j in range(k) if i != j]

    def run_cell(pair):
        i, j = pair
        try:
            return PairwiseCell(i, j, register_bijective(prepared[i], prepared[j], config))
        except Exception as exc:  # noqa: BLE001 - cell failures must not kill the matrix
            return PairwiseCell(i, j, None, error=f"{type(exc).__name__}: {exc}")

    threads = _resolve_threads(config.threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(run_cell, jobs))
    else:
        cells = [run_cell(pair) for pair in jobs]
    matrix = np.zeros((k, k))
    for cell in cells:
        matrix[cell.source, cell.target] = cell.result.ub if cell.result else math.nan
    return PairwiseResult(matrix=matrix, cells=cells)
