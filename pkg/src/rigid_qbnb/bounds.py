"""Bound functionals for the branch-and-bound engines.

Two families are provided.  The quadratic *quasi-lower* bounds are valid
lower bounds on the global minimum only under the assumption that the
queried cube contains a global minimizer; they shrink like delta^2 and are
what gives the search its log(1/eps) convergence.  The linear bounds are
classical Lipschitz lower bounds, valid on every cube, and serve as the
baseline comparator.

All bounds are clamped at zero, which is always valid because the energies
are non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import PointCloud, rotation_dim


def psi(k: int, x: float) -> float:
    """Remainder of the Taylor series of e^x after the first k terms.

    psi_1(x) = e^x - 1 and psi_2(x) = e^x - 1 - x.  For k=2 and x < 0.5 the
    series sum_{j>=2} x^j/j! is summed directly; subtracting x from expm1(x)
    would cancel catastrophically exactly where bound tightness matters.
    """
    if k not in (1, 2):
        raise ValueError(f"only psi_1 and psi_2 are defined, got k={k}")
    if x < 0:
        raise ValueError(f"psi is only evaluated on x >= 0, got {x}")
    if k == 1:
        return math.expm1(x)
    if x < 0.5:
        term = 0.5 * x * x
        total = term
        j = 3
        while True:
            term *= x / j
            updated = total + term
            if updated == total:
                return total
            total = updated
            j += 1
    return math.expm1(x) - x


@dataclass(frozen=True)
class BoundParams:
    """Instance quantities consumed by the bound formulas.

    ``f_star`` is any upper bound on the global minimum; the search wires in
    its running upper bound.  A stale (larger) f_star only loosens the
    bounds, so updates may lag safely.
    """

    n: int
    sigma_p: float
    sigma_q: float
    sum_norms_p: float
    f_star: float
    dim_d: int
    dim_D: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if min(self.sigma_p, self.sigma_q, self.sum_norms_p) < 0:
            raise ValueError("norm quantities must be non-negative")
        if self.f_star < 0:
            raise ValueError("f_star must be non-negative")

    @classmethod
    def from_clouds(cls, source: PointCloud, target: PointCloud | None = None,
                    f_star: float = math.inf, dim_D: int | None = None) -> "BoundParams":
        sigma_q = target.frob_norm if target is not None else 0.0
        d = source.dim
        return cls(
            n=len(source),
            sigma_p=source.frob_norm,
            sigma_q=sigma_q,
            sum_norms_p=source.sum_norms,
            f_star=f_star,
            dim_d=d,
            dim_D=dim_D if dim_D is not None else rotation_dim(d),
        )

    def with_f_star(self, f_star: float) -> "BoundParams":
        return replace(self, f_star=f_star)


def quasi_lb_bijective(f_at_center: float, delta: float, p: BoundParams) -> float:
    """Quadratic quasi-lower bound for the bijective energy.

    Valid lower bound on the global minimum whenever the cube (of corner
    radius ``delta``) contains a global minimizer:
    F(center) - (2/n) * sigma_p * sigma_q * psi_2(delta).
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    drop = (2.0 / p.n) * p.sigma_p * p.sigma_q * psi(2, delta)
    return max(0.0, f_at_center - drop)


def quasi_lb_cp(f_at_center: float, delta1: float, delta2: float, p: BoundParams) -> float:
    """Joint rotation/translation quasi-lower bound for the closest-point energy.

    The drop term is
    (1/n) [ 2 psi_2(d1) (sigma_p^2 + sigma_p sqrt(n f_star))
            + 2 d2 psi_1(d1) sum_i ||p_i|| + n d2^2 ].
    """
    if delta1 < 0 or delta2 < 0:
        raise ValueError("deltas must be non-negative")
    rot_term = 2.0 * psi(2, delta1) * (p.sigma_p**2 + p.sigma_p * math.sqrt(p.n * p.f_star))
    cross_term = 2.0 * delta2 * psi(1, delta1) * p.sum_norms_p
    drop = (rot_term + cross_term) / p.n + delta2**2
    return max(0.0, f_at_center - drop)


def quasi_lb_cp_rotation(ebar_at_center: float, h: float, p: BoundParams) -> float:
    """Rotation-only quasi-lower bound for the nested search's outer level.

    ``ebar_at_center`` is the translation-minimized closest-point energy at
    the rotation-cube center; the drop is the joint bound specialized to a
    zero translation radius, with delta1 = sqrt(s) * h the rotation-cube
    corner distance.
    """
    if h < 0:
        raise ValueError("h must be non-negative")
    s = rotation_dim(p.dim_d)
    drop = (2.0 / p.n) * psi(2, math.sqrt(s) * h) * (
        p.sigma_p**2 + p.sigma_p * math.sqrt(p.n * p.f_star)
    )
    return max(0.0, ebar_at_center - drop)


def quasi_lb_cp_translation(e_at_center: float, h: float, dim_d: int) -> float:
    """Translation-only quasi-lower bound: e - d * h^2.

    This is the joint bound at zero rotation radius with delta2 = sqrt(d) * h,
    using that for a fixed correspondence the energy is exactly quadratic in t.
    """
    if h < 0:
        raise ValueError("h must be non-negative")
    return max(0.0, e_at_center - dim_d * h * h)


def linear_lb_bijective(f_at_center: float, delta: float, p: BoundParams) -> float:
    """Classical Lipschitz lower bound, valid on every cube:
    F(center) - (2/n) * sigma_p * sigma_q * delta."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return max(0.0, f_at_center - (2.0 / p.n) * p.sigma_p * p.sigma_q * delta)


def linear_lb_cp(P: PointCloud, per_point_errors, delta1: float, delta2: float) -> float:
    """Per-point Lipschitz lower bound for the closest-point energy.

    ``per_point_errors[i]`` is the residual ||R_c p_i + t_c - q|| to the
    nearest target point at the cube center.  Rotating within the cube moves
    point i by at most delta1 * ||p_i||, translating by at most delta2, and
    the distance-to-set function is 1-Lipschitz, hence
    (1/n) sum_i max(e_i - delta1 ||p_i|| - delta2, 0)^2 bounds F from below
    everywhere in the cube.
    """
    if delta1 < 0 or delta2 < 0:
        raise ValueError("deltas must be non-negative")
    e = np.asarray(per_point_errors, dtype=float)
    if e.shape != (len(P),):
        raise ValueError("per_point_errors must have one entry per source point")
    slack = np.maximum(e - delta1 * P.point_norms - delta2, 0.0)
    return float(np.sum(slack * slack) / len(P))
