"""Global optimizers: breadth-first and best-first cube searches with
quadratic quasi-lower bounds (default) or linear Lipschitz bounds (baseline).

All engines emit an epsilon-certificate: on normal termination
``ub - lb <= epsilon`` with ``lb`` a true lower bound on the global minimum
and ``ub`` the energy of the reported minimizer.  Per-generation evaluation
counts are recorded for the convergence-scaling benchmarks.

Evaluation within a batch (one generation, or the children of one popped
cube) is merged by a min-reduction after the batch, so results are
independent of evaluation order and thread count.
"""

from __future__ import annotations

import heapq
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import (
    BoundParams,
    linear_lb_bijective,
    linear_lb_cp,
    psi,
    quasi_lb_bijective,
    quasi_lb_cp,
    quasi_lb_cp_rotation,
    quasi_lb_cp_translation,
)
from .correspondence import (
    Correspondence,
    CPIndex,
    EnergyEval,
    _icp_loop,
    build_cp_index,
    eval_F_bi,
    eval_F_cp,
)
from .geometry import Cube, PointCloud, RigidMotion, exp_rotation, rotation_dim


class SearchAborted(RuntimeError):
    """Raised when an energy evaluation returns a non-finite value."""


class _BudgetExceeded(Exception):
    pass


@dataclass
class SearchConfig:
    """Knobs for a registration run.

    ``bound_kind`` selects quadratic quasi-lower bounds ('quasi') or the
    linear Lipschitz baseline ('linear').  ``strategy`` picks breadth-first
    subdivision or best-first (lowest lower bound first); in closest-point
    mode 'best-first' selects the nested rotation/translation search.
    ``dt_grid`` enables the approximate distance-grid index (cp mode only),
    which voids the certificate flag on the result.
    """

    epsilon: float
    bound_kind: str = "quasi"
    strategy: str = "bfs"
    max_evals: int = 10**8
    allow_reflections: bool = False
    refine_with_icp: bool = True
    dt_grid: int | None = None
    threads: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_evals < 1:
            raise ValueError("max_evals must be at least 1")
        if self.bound_kind not in ("quasi", "linear"):
            raise ValueError(f"unknown bound kind {self.bound_kind!r}")
        if self.strategy not in ("bfs", "best-first"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass
class GenerationRecord:
    g: int
    evals: int
    live: int
    ub: float
    lb: float


@dataclass
class SearchResult:
    """Epsilon-certificate and bookkeeping of a finished (or capped) run."""

    minimizer: RigidMotion
    ub: float
    lb: float
    corr: Correspondence | None
    evals_per_generation: list[int]
    total_evals: int
    certificate_valid: bool
    completed: bool
    generations: list[GenerationRecord]
    reflected: bool = False


@dataclass
class InnerResult:
    """Outcome of a translation-only search at a fixed rotation."""

    t: np.ndarray
    value: float
    corr: Correspondence
    lb: float
    evals: int
    aborted: bool = False
    outer_lb: float = math.inf
    approximate: bool = False


class _Budget:
    __slots__ = ("used", "cap")

    def __init__(self, cap):
        self.used = 0
        self.cap = cap

    def charge(self, k):
        self.used += k
        if self.used > self.cap:
            raise _BudgetExceeded


class _Stats:
    def __init__(self):
        self.rows: dict[int, GenerationRecord] = {}

    def add(self, g, evals, live, ub, lb):
        row = self.rows.get(g)
        if row is None:
            self.rows[g] = GenerationRecord(g, evals, live, ub, lb)
        else:
            row.evals += evals
            row.live += live
            row.ub = ub
            row.lb = lb

    def records(self):
        return [self.rows[g] for g in sorted(self.rows)]


def _resolve_threads(threads):
    if threads == 0:
        return os.cpu_count() or 1
    return max(1, int(threads))


def _eval_batch(evaluate, centers, pool):
    if pool is None:
        evs = [evaluate(c) for c in centers]
    else:
        evs = list(pool.map(evaluate, centers))
    for ev in evs:
        if not math.isfinite(ev.value):
            raise SearchAborted(f"energy evaluation returned non-finite value {ev.value}")
    return evs


def _make_result(make_motion, best_center, best_ev, ub, lb, stats, budget,
                 completed, epsilon, approx):
    records = stats.records()
    certified = completed and (ub - lb <= epsilon) and not approx
    return SearchResult(
        minimizer=make_motion(best_center),
        ub=ub,
        lb=lb,
        corr=best_ev.corr if best_ev is not None else None,
        evals_per_generation=[r.evals for r in records],
        total_evals=budget.used,
        certificate_valid=certified,
        completed=completed,
        generations=records,
        reflected=False,
    )


def bfs_qbnb(evaluate, root: Cube, bound_fn, config: SearchConfig,
             make_motion=None, observer=None) -> SearchResult:
    """Breadth-first search over cube generations.

    Per generation: evaluate the energy at every live cube center, merge the
    best value into the global upper bound, compute each cube's lower bound
    ``bound_fn(ev, cube, ub)``, set the global lower bound to the minimum over
    the generation, drop cubes whose lower bound exceeds ``ub``, subdivide
    the survivors, and stop once ``ub - lb <= epsilon``.

    ``observer(g, cubes, evs, lbs, ub, keep)``, when given, is called once per
    generation after elimination, for instrumentation.
    """
    if make_motion is None:
        raise ValueError("bfs_qbnb needs a make_motion mapping from cube centers to motions")
    budget = _Budget(config.max_evals)
    stats = _Stats()
    threads = _resolve_threads(config.threads)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    cubes = [root]
    ub = math.inf
    lb = -math.inf
    best_center = root.center
    best_ev = None
    completed = True
    approx = False
    try:
        while cubes and ub - lb > config.epsilon:
            try:
                budget.charge(len(cubes))
            except _BudgetExceeded:
                completed = False
                break
            evs = _eval_batch(evaluate, [c.center for c in cubes], pool)
            values = np.array([ev.value for ev in evs])
            i = int(np.argmin(values))
            if values[i] < ub:
                ub = float(values[i])
                best_center = cubes[i].center
                best_ev = evs[i]
            approx = approx or any(ev.approximate for ev in evs)
            lbs = [bound_fn(ev, cube, ub) for ev, cube in zip(evs, cubes)]
            lb = min(lbs)
            keep = [l <= ub for l in lbs]
            g = cubes[0].generation
            stats.add(g, evals=len(cubes), live=sum(keep), ub=ub, lb=lb)
            if observer is not None:
                observer(g, cubes, evs, lbs, ub, keep)
            if ub - lb <= config.epsilon:
                break
            cubes = [child for cube, k in zip(cubes, keep) if k for child in cube.subdivide()]
    finally:
        if pool is not None:
            pool.shutdown()
    return _make_result(make_motion, best_center, best_ev, ub, lb, stats,
                        budget, completed, config.epsilon, approx)


def best_first_qbnb(evaluate, root: Cube, bound_fn, config: SearchConfig,
                    make_motion=None) -> SearchResult:
    """Best-first variant: the cube with the lowest lower bound is expanded
    first; children of a popped cube are evaluated as one batch."""
    if make_motion is None:
        raise ValueError("best_first_qbnb needs a make_motion mapping from cube centers to motions")
    budget = _Budget(config.max_evals)
    stats = _Stats()
    threads = _resolve_threads(config.threads)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    completed = True
    approx = False
    lb_final = 0.0
    best_ev = None
    best_center = root.center
    ub = math.inf
    try:
        budget.charge(1)
        evs = _eval_batch(evaluate, [root.center], pool)
        ev0 = evs[0]
        ub = ev0.value
        best_ev = ev0
        approx = ev0.approximate
        lb0 = bound_fn(ev0, root, ub)
        stats.add(root.generation, evals=1, live=1, ub=ub, lb=lb0)
        heap = [(lb0, root.generation, 0, root)]
        counter = 1
        lb_final = lb0
        while heap:
            while heap and heap[0][0] > ub:
                heapq.heappop(heap)
            if not heap:
                lb_final = ub
                break
            lb_now = heap[0][0]
            lb_final = lb_now
            if ub - lb_now <= config.epsilon:
                break
            _, _, _, cube = heapq.heappop(heap)
            children = cube.subdivide()
            budget.charge(len(children))
            evs = _eval_batch(evaluate, [c.center for c in children], pool)
            for child, ev in zip(children, evs):
                if ev.value < ub:
                    ub = ev.value
                    best_center = child.center
                    best_ev = ev
                approx = approx or ev.approximate
            pushed = 0
            lbs = []
            for child, ev in zip(children, evs):
                l = bound_fn(ev, child, ub)
                lbs.append(l)
                if l <= ub:
                    heapq.heappush(heap, (l, child.generation, counter, child))
                    counter += 1
                    pushed += 1
            snapshot_lb = min(heap[0][0], ub) if heap else ub
            stats.add(children[0].generation, evals=len(children), live=pushed,
                      ub=ub, lb=snapshot_lb)
    except _BudgetExceeded:
        completed = False
    finally:
        if pool is not None:
            pool.shutdown()
    return _make_result(make_motion, best_center, best_ev, ub, lb_final, stats,
                        budget, completed, config.epsilon, approx)


# ---------------------------------------------------------------------------
# Bijective registration


def _register_bijective_one(P: PointCloud, Q: PointCloud, config: SearchConfig) -> SearchResult:
    if len(P) != len(Q):
        raise ValueError("bijective mode requires equally sized clouds")
    if P.dim != Q.dim:
        raise ValueError("source and target dimensions differ")
    d = P.dim
    s = rotation_dim(d)
    params = BoundParams.from_clouds(P, Q, dim_D=s)
    sqrt_D = math.sqrt(s)
    if config.bound_kind == "quasi":
        bound_fn = lambda ev, cube, ub: quasi_lb_bijective(ev.value, sqrt_D * cube.half_edge, params)
    else:
        bound_fn = lambda ev, cube, ub: linear_lb_bijective(ev.value, sqrt_D * cube.half_edge, params)
    evaluate = lambda x: eval_F_bi(P, Q, x)
    root = Cube(np.zeros(s), math.pi, 0)
    make_motion = lambda x: RigidMotion(x, np.zeros(d))
    engine = bfs_qbnb if config.strategy == "bfs" else best_first_qbnb
    return engine(evaluate, root, bound_fn, config, make_motion=make_motion)


def register_bijective(P: PointCloud, Q: PointCloud, config: SearchConfig) -> SearchResult:
    """Globally optimal bijective registration over rotations (translation
    is identically zero for zero-mean clouds)."""
    if config.allow_reflections:
        return _run_with_reflections(_register_bijective_one, P, Q, config)
    return _register_bijective_one(P, Q, config)


# ---------------------------------------------------------------------------
# Closest-point registration

def _translation_scale() -> float:
    # The joint search cube has half-edge pi; translation coordinates are
    # scaled by pi so that [-pi, pi]^D maps onto the rotation cube times the
    # unit translation cube.
    return math.pi


def _register_cp_joint(P: PointCloud, Q: PointCloud, config: SearchConfig) -> SearchResult:
    d = P.dim
    s = rotation_dim(d)
    D = s + d
    scale = _translation_scale()
    index = build_cp_index(Q, mode="dt-grid" if config.dt_grid else "exact",
                           grid_n=config.dt_grid)
    params = BoundParams.from_clouds(P, Q, dim_D=D)
    sqrt_s = math.sqrt(s)
    sqrt_d = math.sqrt(d)

    def evaluate(x):
        return eval_F_cp(P, index, RigidMotion(x[:s], x[s:] / scale))

    if config.bound_kind == "quasi":
        def bound_fn(ev, cube, ub):
            h = cube.half_edge
            return quasi_lb_cp(ev.value, sqrt_s * h, sqrt_d * h / scale,
                               params.with_f_star(ub))
    else:
        def bound_fn(ev, cube, ub):
            h = cube.half_edge
            return linear_lb_cp(P, ev.residuals, sqrt_s * h, sqrt_d * h / scale)

    root = Cube(np.zeros(D), math.pi, 0)
    make_motion = lambda x: RigidMotion(x[:s], x[s:] / scale)
    engine = bfs_qbnb if config.strategy == "bfs" else best_first_qbnb
    return engine(evaluate, root, bound_fn, config, make_motion=make_motion)


_CHILD_SIGNS: dict[int, np.ndarray] = {}


def _child_signs(d: int) -> np.ndarray:
    signs = _CHILD_SIGNS.get(d)
    if signs is None:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
        _CHILD_SIGNS[d] = signs
    return signs


def _inner_search(P: PointCloud, rotated: np.ndarray, index: CPIndex,
                  eps_inner: float, budget: _Budget, bound_kind: str,
                  threshold: float = math.inf, outer_delta1: float = 0.0,
                  warm_t: np.ndarray | None = None) -> InnerResult:
    """Best-first search over the translation cube [-1, 1]^d at a fixed rotation.

    In quasi mode the search aborts once the running lower bound exceeds
    ``threshold`` (the caller's upper bound plus the rotation-bound drop),
    which certifies that the enclosing rotation cube can be eliminated.  In
    linear mode each node also records a bound inflated by the rotation
    uncertainty ``outer_delta1``; the minimum of these over the node cover is
    a true lower bound over the whole rotation cube, returned as ``outer_lb``.
    ``warm_t`` seeds the upper bound with one extra evaluation, typically the
    best translation found for the parent rotation cube.

    Cubes are carried as raw (center, half_edge, generation) data; this loop
    dominates the run time of the nested search.
    """
    n, d = rotated.shape
    sqrt_d = math.sqrt(d)
    quasi = bound_kind == "quasi"
    signs = _child_signs(d)
    norms = P.point_norms

    def evaluate_batch(ts):
        k = ts.shape[0]
        pts = (rotated[None, :, :] + ts[:, None, :]).reshape(k * n, d)
        dist, idx = index.query(pts)
        dist = dist.reshape(k, n)
        idx = idx.reshape(k, n)
        values = np.sum(dist * dist, axis=1) / n
        if not np.all(np.isfinite(values)):
            raise SearchAborted("translation search hit a non-finite energy")
        return values, dist, idx

    def node_bounds(values, dists, h):
        # Vectorized over one batch of sibling cubes of half-edge h.
        if quasi:
            return np.maximum(0.0, values - d * h * h), None
        slack = np.maximum(dists - sqrt_d * h, 0.0)
        lbs = np.sum(slack * slack, axis=1) / n
        infl = np.maximum(dists - outer_delta1 * norms[None, :] - sqrt_d * h, 0.0)
        infls = np.sum(infl * infl, axis=1) / n
        return lbs, infls

    root_center = np.zeros(d)
    if warm_t is None:
        budget.charge(1)
        values, dists, idxs = evaluate_batch(root_center[None, :])
        evals = 1
    else:
        budget.charge(2)
        values, dists, idxs = evaluate_batch(np.stack([root_center, warm_t]))
        evals = 2
    j0 = int(np.argmin(values))
    ub = float(values[j0])
    t_best = root_center if j0 == 0 else np.array(warm_t, dtype=float)
    corr_best = idxs[j0]

    lbs0, infls0 = node_bounds(values[:1], dists[:1], 1.0)
    lb0 = float(lbs0[0])
    infl0 = float(infls0[0]) if infls0 is not None else math.inf
    heap = [(lb0, 0, 0, root_center, 1.0, infl0)]
    counter = 1
    leaf_min = math.inf
    lb_final = lb0
    aborted = False
    pops = 0
    while heap:
        while heap and heap[0][0] > ub:
            stale = heapq.heappop(heap)
            leaf_min = min(leaf_min, stale[5])
        if not heap:
            lb_final = ub
            break
        lb_now = heap[0][0]
        lb_final = lb_now
        if ub - lb_now <= eps_inner:
            break
        if quasi and lb_now > threshold:
            aborted = True
            break
        if not quasi and threshold < math.inf:
            pops += 1
            if pops % 32 == 0:
                cand = min(leaf_min, min(entry[5] for entry in heap))
                if cand > threshold:
                    aborted = True
                    leaf_min = cand
                    break
        _, gen, _, center, h, _ = heapq.heappop(heap)
        h2 = h / 2.0
        centers = center + signs * h2
        budget.charge(centers.shape[0])
        values, dists, idxs = evaluate_batch(centers)
        evals += centers.shape[0]
        j = int(np.argmin(values))
        if values[j] < ub:
            ub = float(values[j])
            t_best = centers[j]
            corr_best = idxs[j]
        lbs, infls = node_bounds(values, dists, h2)
        for j in range(centers.shape[0]):
            lb_j = float(lbs[j])
            infl_j = float(infls[j]) if infls is not None else math.inf
            if lb_j <= ub:
                heapq.heappush(heap, (lb_j, gen + 1, counter, centers[j], h2, infl_j))
                counter += 1
            else:
                leaf_min = min(leaf_min, infl_j)
    if quasi:
        outer_lb = math.inf
    elif aborted:
        outer_lb = leaf_min
    else:
        frontier = min((entry[5] for entry in heap), default=math.inf)
        outer_lb = min(leaf_min, frontier)
    return InnerResult(
        t=t_best,
        value=ub,
        corr=Correspondence(corr_best, bijective=False),
        lb=lb_final,
        evals=evals,
        aborted=aborted,
        outer_lb=outer_lb,
        approximate=index.approximate,
    )


def inner_translation_search(P: PointCloud, index: CPIndex, r_fixed: np.ndarray,
                             config: SearchConfig) -> InnerResult:
    """Translation-only search to half the configured accuracy: the nested
    search's outer certificates absorb the inner slack."""
    rotated = P.points @ exp_rotation(np.asarray(r_fixed, dtype=float)).T
    budget = _Budget(config.max_evals)
    outer_delta1 = math.sqrt(rotation_dim(P.dim)) * math.pi
    return _inner_search(P, rotated, index, config.epsilon / 2.0, budget,
                         config.bound_kind, outer_delta1=outer_delta1)


def _rotation_drop(h: float, params: BoundParams, f_star: float) -> float:
    s = rotation_dim(params.dim_d)
    return (2.0 / params.n) * psi(2, math.sqrt(s) * h) * (
        params.sigma_p**2 + params.sigma_p * math.sqrt(params.n * f_star)
    )


def _nested_cp_one(P: PointCloud, Q: PointCloud, config: SearchConfig) -> SearchResult:
    if P.dim != Q.dim:
        raise ValueError("source and target dimensions differ")
    d = P.dim
    s = rotation_dim(d)
    index = build_cp_index(Q, mode="dt-grid" if config.dt_grid else "exact",
                           grid_n=config.dt_grid)
    params = BoundParams.from_clouds(P, Q, dim_D=s + d)
    quasi = config.bound_kind == "quasi"
    eps = config.epsilon
    eps_inner = eps / 2.0
    budget = _Budget(config.max_evals)
    stats = _Stats()
    sqrt_s = math.sqrt(s)

    def run_inner(r, h_outer, threshold, warm_t=None):
        rotated = P.points @ exp_rotation(r).T
        return _inner_search(P, rotated, index, eps_inner, budget, config.bound_kind,
                             threshold=threshold, outer_delta1=sqrt_s * h_outer,
                             warm_t=warm_t)

    def rot_lb(inner, h, ub_now):
        if quasi:
            return quasi_lb_cp_rotation(inner.lb, h, params.with_f_star(ub_now))
        return max(0.0, inner.outer_lb)

    completed = True
    approx = index.approximate
    lb_final = 0.0
    ub = math.inf
    best_motion = RigidMotion.identity(d)
    best_corr = None
    heap: list = []
    try:
        root = Cube(np.zeros(s), math.pi, 0)
        res0 = run_inner(root.center, root.half_edge, math.inf)
        ub = res0.value
        best_motion = RigidMotion(root.center, res0.t)
        best_corr = res0.corr
        gen_evals = res0.evals
        if config.refine_with_icp:
            motion2, ev2, k = _icp_loop(P, index, best_motion, "cp", 1e-12, 200)
            budget.charge(k)
            gen_evals += k
            if ev2.value < ub:
                ub = ev2.value
                best_motion = motion2
                best_corr = ev2.corr
        lb0 = rot_lb(res0, root.half_edge, ub)
        lb_final = lb0
        stats.add(0, evals=gen_evals, live=1, ub=ub, lb=lb0)
        heap = [(lb0, 0, 0, root, res0.t)]
        counter = 1
        while heap:
            while heap and heap[0][0] > ub:
                heapq.heappop(heap)
            if not heap:
                lb_final = ub
                break
            lb_now = heap[0][0]
            lb_final = lb_now
            if ub - lb_now <= eps:
                break
            _, _, _, cube, warm_t = heapq.heappop(heap)
            children = cube.subdivide()
            ub_frozen = ub
            results = []
            for child in children:
                if quasi:
                    threshold = ub_frozen + _rotation_drop(child.half_edge, params, ub_frozen)
                else:
                    threshold = ub_frozen
                results.append(run_inner(child.center, child.half_edge, threshold,
                                         warm_t=warm_t))
            gen_evals = sum(r.evals for r in results)
            for child, res in zip(children, results):
                if not res.aborted and res.value < ub:
                    ub = res.value
                    best_motion = RigidMotion(child.center, res.t)
                    best_corr = res.corr
                    if config.refine_with_icp:
                        motion2, ev2, k = _icp_loop(P, index, best_motion, "cp", 1e-12, 200)
                        budget.charge(k)
                        gen_evals += k
                        if ev2.value < ub:
                            ub = ev2.value
                            best_motion = motion2
                            best_corr = ev2.corr
            pushed = 0
            lbs = []
            for child, res in zip(children, results):
                l = rot_lb(res, child.half_edge, ub)
                lbs.append(l)
                if l <= ub:
                    heapq.heappush(heap, (l, child.generation, counter, child, res.t))
                    counter += 1
                    pushed += 1
            snapshot = min(heap[0][0], ub) if heap else min(lbs)
            stats.add(children[0].generation, evals=gen_evals, live=pushed,
                      ub=ub, lb=snapshot)
    except _BudgetExceeded:
        completed = False
        pending = [entry[0] for entry in heap]
        pending.append(lb_final)
        lb_final = min(pending)
    records = stats.records()
    certified = completed and (ub - lb_final <= eps) and not approx
    return SearchResult(
        minimizer=best_motion,
        ub=ub,
        lb=lb_final,
        corr=best_corr,
        evals_per_generation=[r.evals for r in records],
        total_evals=budget.used,
        certificate_valid=certified,
        completed=completed,
        generations=records,
        reflected=False,
    )


def nested_cp_search(P: PointCloud, Q: PointCloud, config: SearchConfig) -> SearchResult:
    """Nested closest-point search: best-first over rotation cubes, with the
    translation-minimized energy at each rotation center computed by an
    inner translation search, and an ICP refinement on every upper-bound
    improvement."""
    if config.allow_reflections:
        return _run_with_reflections(_nested_cp_one, P, Q, config)
    return _nested_cp_one(P, Q, config)


def register_cp(P: PointCloud, Q: PointCloud, config: SearchConfig) -> SearchResult:
    """Closest-point registration over rotations and translations.

    'best-first' strategy runs the nested rotation/translation search;
    'bfs' runs the breadth-first search on the joint cube.
    """
    if config.allow_reflections:
        return _run_with_reflections(register_cp, P, Q, config)
    if config.strategy == "best-first":
        return _nested_cp_one(P, Q, config)
    return _register_cp_joint(P, Q, config)


def register(P: PointCloud, Q: PointCloud, mode: str, config: SearchConfig) -> SearchResult:
    if mode == "bijective":
        return register_bijective(P, Q, config)
    if mode == "cp":
        return register_cp(P, Q, config)
    raise ValueError(f"unknown registration mode {mode!r}")


def _flip_first_axis(P: PointCloud) -> PointCloud:
    pts = P.points.copy()
    pts[:, 0] = -pts[:, 0]
    return PointCloud(pts)


def _merge_generations(a: list[GenerationRecord], b: list[GenerationRecord]):
    rows: dict[int, GenerationRecord] = {}
    for rec in list(a) + list(b):
        row = rows.get(rec.g)
        if row is None:
            rows[rec.g] = GenerationRecord(rec.g, rec.evals, rec.live, rec.ub, rec.lb)
        else:
            row.evals += rec.evals
            row.live += rec.live
            row.ub = min(row.ub, rec.ub)
            row.lb = min(row.lb, rec.lb)
    return [rows[g] for g in sorted(rows)]


def _run_with_reflections(run_one, P, Q, config: SearchConfig) -> SearchResult:
    """Search over the full orthogonal group by running once on P and once on
    P with its first coordinate negated, keeping the better certificate."""
    base = replace(config, allow_reflections=False)
    direct = run_one(P, Q, base)
    mirrored = run_one(_flip_first_axis(P), Q, base)
    if direct.ub <= mirrored.ub:
        winner, reflected = direct, False
    else:
        winner, reflected = mirrored, True
    records = _merge_generations(direct.generations, mirrored.generations)
    return SearchResult(
        minimizer=winner.minimizer,
        ub=winner.ub,
        lb=min(direct.lb, mirrored.lb),
        corr=winner.corr,
        evals_per_generation=[r.evals for r in records],
        total_evals=direct.total_evals + mirrored.total_evals,
        certificate_valid=direct.certificate_valid and mirrored.certificate_valid,
        completed=direct.completed and mirrored.completed,
        generations=records,
        reflected=reflected,
    )
