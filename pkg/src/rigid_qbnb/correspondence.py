"""Conditional minimization over correspondences, plus local refinement.

For a fixed rigid motion the closest-point energy is minimized by sending
each transformed source point to its nearest target point (kd-tree, or a
precomputed distance grid for speed), and the bijective energy by solving a
linear assignment problem.  ``procrustes`` and ``icp_refine`` provide the
standard alternating local refinement used to improve incumbents.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .geometry import PointCloud, RigidMotion, log_rotation

_GRID_MARGIN = 0.25
_COST_RESOLUTION = 1e-9


@dataclass
class Correspondence:
    """Map from source indices to target indices; a permutation if bijective."""

    mapping: np.ndarray
    bijective: bool = False

    def __post_init__(self):
        self.mapping = np.asarray(self.mapping, dtype=np.int64)
        if self.bijective:
            n = self.mapping.shape[0]
            if not np.array_equal(np.sort(self.mapping), np.arange(n)):
                raise ValueError("bijective correspondence must be a permutation")


@dataclass
class EnergyEval:
    """Energy value together with the minimizing correspondence.

    ``approximate`` is set when the value came from a distance-grid index and
    is therefore only accurate to the grid resolution.  ``residuals`` holds
    the per-point distances used by the per-point linear bounds.
    """

    value: float
    corr: Correspondence
    approximate: bool = False
    residuals: np.ndarray | None = field(default=None, repr=False)


class CPIndex:
    """Nearest-target query structure over a fixed cloud.

    ``exact`` mode wraps a kd-tree and resolves distance ties to the lowest
    target index.  ``dt-grid`` mode precomputes, for every cell center of an
    N^d lattice over [-1-margin, 1+margin]^d, the distance to (and index of)
    the nearest target point; queries then cost a table lookup and are
    accurate to within one grid diagonal.  Instances are immutable after
    construction and safe for concurrent queries.
    """

    def __init__(self, target: PointCloud, mode: str = "exact", grid_n: int | None = None):
        if mode not in ("exact", "dt-grid"):
            raise ValueError(f"unknown closest-point index mode {mode!r}")
        if len(target) < 1:
            raise ValueError("target cloud must be non-empty")
        self.target = target
        self.mode = mode
        self._tree = cKDTree(target.points)
        if mode == "dt-grid":
            if grid_n is None or grid_n < 2:
                raise ValueError("dt-grid mode requires grid_n >= 2")
            self.grid_n = int(grid_n)
            self._lo = -1.0 - _GRID_MARGIN
            self._hi = 1.0 + _GRID_MARGIN
            self._step = (self._hi - self._lo) / self.grid_n
            self._fill_grid()

    @property
    def approximate(self) -> bool:
        return self.mode == "dt-grid"

    def _fill_grid(self):
        # Distance transform of the target points sampled at cell centers:
        # exact nearest distance and site index per cell, filled in chunks to
        # keep peak memory at one chunk of query points.
        n, d = self.grid_n, self.target.dim
        axis = self._lo + (np.arange(n) + 0.5) * self._step
        dist = np.empty(n**d, dtype=np.float64)
        idx = np.empty(n**d, dtype=np.int64)
        chunk = max(1, 2_000_000 // max(d, 1))
        grids = np.meshgrid(*([axis] * d), indexing="ij")
        centers = np.stack([g.ravel() for g in grids], axis=1)
        for start in range(0, centers.shape[0], chunk):
            stop = min(start + chunk, centers.shape[0])
            dd, ii = self._tree.query(centers[start:stop], k=1, workers=-1)
            dist[start:stop] = dd
            idx[start:stop] = ii
        self._grid_dist = dist.reshape((n,) * d)
        self._grid_idx = idx.reshape((n,) * d)
        self._grid_dist.setflags(write=False)
        self._grid_idx.setflags(write=False)

    def query(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest-target distances and indices for a (k, d) batch."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.target.dim:
            raise ValueError("query points must be (k, d) matching the target dimension")
        if self.mode == "exact":
            return self._query_exact(points)
        return self._query_grid(points)

    def _query_exact(self, points):
        k = min(2, len(self.target))
        # Thread fan-out only pays off for very large batches.
        workers = -1 if points.shape[0] >= 20000 else 1
        dist, idx = self._tree.query(points, k=k, workers=workers)
        if k == 1:
            return dist.astype(float), idx.astype(np.int64)
        # Lowest-index tie-breaking: exact ties between the two nearest
        # reported sites are re-resolved by a full scan.
        d0, d1 = dist[:, 0], dist[:, 1]
        out_d = d0.astype(float)
        out_i = idx[:, 0].astype(np.int64)
        ties = np.nonzero(d0 == d1)[0]
        for row in ties:
            diffs = self.target.points - points[row]
            sq = np.sum(diffs * diffs, axis=1)
            out_i[row] = int(np.argmin(sq))
            out_d[row] = math.sqrt(float(sq[out_i[row]]))
        return out_d, out_i

    def _query_grid(self, points):
        clamped = np.clip(points, self._lo, self._hi - 1e-12)
        cells = ((clamped - self._lo) / self._step).astype(np.int64)
        np.clip(cells, 0, self.grid_n - 1, out=cells)
        cell_idx = tuple(cells[:, a] for a in range(points.shape[1]))
        dist = self._grid_dist[cell_idx].astype(float)
        idx = self._grid_idx[cell_idx]
        # Out-of-grid queries: clamped-cell distance plus the exact residual
        # to the clamped location is a conservative nearest-distance estimate.
        overflow = np.any((points < self._lo) | (points > self._hi), axis=1)
        if np.any(overflow):
            extra = np.linalg.norm((points - clamped)[overflow], axis=1)
            dist[overflow] += extra
        return dist, idx.astype(np.int64)


def build_cp_index(Q: PointCloud, mode: str = "exact", grid_n: int | None = None) -> CPIndex:
    return CPIndex(Q, mode=mode, grid_n=grid_n)


def eval_F_cp(P: PointCloud, index: CPIndex, motion: RigidMotion) -> EnergyEval:
    """Closest-point energy (1/n) sum_i min_j ||R p_i + t - q_j||^2."""
    if P.dim != index.target.dim:
        raise ValueError("source and target dimensions differ")
    moved = motion.apply(P.points)
    dist, idx = index.query(moved)
    value = float(np.sum(dist * dist) / len(P))
    return EnergyEval(
        value=value,
        corr=Correspondence(idx, bijective=False),
        approximate=index.approximate,
        residuals=dist,
    )


@njit(cache=True, nogil=True)
def _auction_min(costs):  # pragma: no cover - exercised through solve_assignment
    n = costs.shape[0]
    prices = np.zeros(n, dtype=np.float64)
    owner = np.full(n, -1, dtype=np.int64)
    assigned = np.full(n, -1, dtype=np.int64)
    cmax = costs[0, 0]
    cmin = costs[0, 0]
    for i in range(n):
        for j in range(n):
            c = costs[i, j]
            if c > cmax:
                cmax = c
            if c < cmin:
                cmin = c
    final_eps = 1.0 / (n + 1.0)
    eps = float(cmax - cmin) / 5.0
    if eps < final_eps:
        eps = final_eps
    while True:
        for j in range(n):
            owner[j] = -1
        for i in range(n):
            assigned[i] = -1
        n_unassigned = n
        while n_unassigned > 0:
            i = 0
            while assigned[i] != -1:
                i += 1
            best_j = 0
            best_v = -1e300
            second_v = -1e300
            for j in range(n):
                v = -float(costs[i, j]) - prices[j]
                if v > best_v:
                    second_v = best_v
                    best_v = v
                    best_j = j
                elif v > second_v:
                    second_v = v
            if second_v <= -1e300:
                second_v = best_v  # n == 1
            prices[best_j] += best_v - second_v + eps
            prev = owner[best_j]
            if prev != -1:
                assigned[prev] = -1
                n_unassigned += 1
            owner[best_j] = i
            assigned[i] = best_j
            n_unassigned -= 1
        if eps <= final_eps:
            break
        eps /= 5.0
        if eps < final_eps:
            eps = final_eps
    return assigned


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimize sum_i cost[i, perm[i]] over permutations.

    Forward auction with geometric epsilon scaling on costs rounded to
    integers at 1e-9 resolution; the final epsilon is below 1/(n+1), so the
    returned permutation is exactly optimal for the rounded costs.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("cost must be a square matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    scale = np.abs(cost).max() / _COST_RESOLUTION
    if scale > 2.0**52:
        raise ValueError("cost magnitudes too large for the 1e-9 integer scaling")
    scaled = np.round(cost / _COST_RESOLUTION).astype(np.int64)
    perm = _auction_min(scaled)
    perm = np.asarray(perm, dtype=np.int64)
    total = float(np.sum(cost[np.arange(cost.shape[0]), perm]))
    return perm, total


def eval_F_bi(P: PointCloud, Q: PointCloud, r: np.ndarray) -> EnergyEval:
    """Bijective energy min over permutations of (1/n) sum ||R p_i - q_pi(i)||^2."""
    if len(P) != len(Q):
        raise ValueError("bijective mode requires equally sized clouds")
    if P.dim != Q.dim:
        raise ValueError("source and target dimensions differ")
    from .geometry import exp_rotation

    moved = P.points @ exp_rotation(np.asarray(r, dtype=float)).T
    diff = moved[:, None, :] - Q.points[None, :, :]
    cost = np.sum(diff * diff, axis=2)
    perm, total = solve_assignment(cost)
    return EnergyEval(
        value=total / len(P),
        corr=Correspondence(perm, bijective=True),
        residuals=np.sqrt(cost[np.arange(len(P)), perm]),
    )


def procrustes(P: PointCloud, Q: PointCloud, corr: Correspondence,
               solve_translation: bool = True) -> RigidMotion:
    """Best rigid motion for a fixed correspondence, via SVD of the
    cross-covariance with determinant correction.

    With ``solve_translation`` off the translation is pinned to zero.  A
    rank-deficient cross-covariance leaves the optimal rotation ambiguous;
    the SVD's sign convention then picks one and a warning is emitted.
    """
    mapping = np.asarray(corr.mapping, dtype=np.int64)
    if mapping.shape[0] != len(P):
        raise ValueError("correspondence must map every source point")
    if len(P) < P.dim:
        raise ValueError("need at least d correspondences")
    src = P.points
    dst = Q.points[mapping]
    if solve_translation:
        src_c = src - src.mean(axis=0)
        dst_c = dst - dst.mean(axis=0)
    else:
        src_c, dst_c = src, dst
    cov = src_c.T @ dst_c
    u, s, vt = np.linalg.svd(cov)
    if s[-1] <= 1e-9 * max(1.0, s[0]):
        warnings.warn(
            "cross-covariance is rank deficient; the optimal rotation is not unique",
            RuntimeWarning,
            stacklevel=2,
        )
    d = P.dim
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    if sign == 0:
        sign = 1.0
    correction = np.ones(d)
    correction[-1] = sign
    rot_matrix = vt.T @ np.diag(correction) @ u.T
    r = log_rotation(rot_matrix)
    if solve_translation:
        t = dst.mean(axis=0) - rot_matrix @ src.mean(axis=0)
    else:
        t = np.zeros(d)
    return RigidMotion(r, t)


def icp_refine(P: PointCloud, target, start: RigidMotion, mode: str = "cp",
               tol: float = 1e-12, max_iters: int = 200) -> tuple[RigidMotion, EnergyEval]:
    """Alternate exact correspondence and Procrustes steps from ``start``.

    Stops when the energy decrease drops below ``tol`` or after ``max_iters``
    iterations; the returned energy never exceeds the energy at the start.
    ``target`` is a CPIndex in cp mode and a PointCloud in bijective mode.
    """
    motion, ev, _ = _icp_loop(P, target, start, mode, tol, max_iters)
    return motion, ev


def _icp_loop(P, target, start, mode, tol, max_iters):
    if mode not in ("cp", "bijective"):
        raise ValueError(f"unknown icp mode {mode!r}")
    evaluate = (
        (lambda m: eval_F_cp(P, target, m))
        if mode == "cp"
        else (lambda m: eval_F_bi(P, target, m.rot))
    )
    solve_translation = mode == "cp"
    Q = target.target if mode == "cp" else target
    best_motion = start
    best = evaluate(start)
    evals = 1
    prev = best.value
    corr = best.corr
    for _ in range(max_iters):
        motion = procrustes(P, Q, corr, solve_translation=solve_translation)
        ev = evaluate(motion)
        evals += 1
        if ev.value < best.value:
            best, best_motion = ev, motion
        if not ev.value < prev - tol:
            break
        prev = ev.value
        corr = ev.corr
    return best_motion, best, evals
