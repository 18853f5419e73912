"""Rotation parameterization, point-cloud containers, and search-cube arithmetic.

Rotations are parameterized by a vector ``r`` of length ``s = d(d-1)/2``
through the matrix exponential of the skew-symmetric matrix ``skew(r)``.
Every rotation of R^d is reached by some ``r`` with ``||r|| <= pi``, so the
cube ``[-pi, pi]^s`` is a valid initial search domain.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation


class DegenerateCloudError(ValueError):
    """Raised when a cloud cannot be normalized because all points coincide."""


class XYZFormatError(ValueError):
    """Raised on malformed point-cloud text input; carries the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


def rotation_dim(dim: int) -> int:
    """Intrinsic dimension s of the rotation group acting on R^dim."""
    if dim not in (2, 3):
        raise ValueError(f"only 2D and 3D point clouds are supported, got dim={dim}")
    return dim * (dim - 1) // 2


def dim_from_rotation(s: int) -> int:
    """Ambient dimension d for a rotation vector of length s."""
    if s == 1:
        return 2
    if s == 3:
        return 3
    raise ValueError(f"rotation vector must have length 1 or 3, got {s}")


def skew(r) -> np.ndarray:
    """Skew-symmetric matrix whose strictly-below-diagonal entries are r.

    The below-diagonal entries are filled column-major, i.e. in the order
    (2,1), (3,1), (3,2).  For d=2 this is ``[[0, -r1], [r1, 0]]``.
    """
    r = np.asarray(r, dtype=float)
    if r.shape == (1,):
        return np.array([[0.0, -r[0]], [r[0], 0.0]])
    if r.shape == (3,):
        r1, r2, r3 = r
        return np.array([[0.0, -r1, -r2], [r1, 0.0, -r3], [r2, r3, 0.0]])
    raise ValueError(f"rotation vector must have length 1 or 3, got shape {r.shape}")


def exp_rotation(r) -> np.ndarray:
    """Rotation matrix exp(skew(r)), orthogonal with determinant +1.

    Uses the planar closed form for d=2 and a Rodrigues-type closed form
    for d=3.  For d=3 with ||r|| < 1e-8 the second-order Taylor polynomial
    of the exponential is used to avoid the 0/0 in the closed form.
    """
    r = np.asarray(r, dtype=float)
    if r.shape == (1,):
        c, s = math.cos(r[0]), math.sin(r[0])
        return np.array([[c, -s], [s, c]])
    if r.shape != (3,):
        raise ValueError(f"rotation vector must have length 1 or 3, got shape {r.shape}")
    k = skew(r)
    theta = math.sqrt(float(r @ r))
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * (k @ k)
    k2 = k @ k
    return np.eye(3) + (math.sin(theta) / theta) * k + ((1.0 - math.cos(theta)) / theta**2) * k2


def log_rotation(R) -> np.ndarray:
    """Rotation vector of minimal norm (angle in [0, pi]) with exp_rotation(r) = R."""
    R = np.asarray(R, dtype=float)
    if R.shape == (2, 2):
        return np.array([math.atan2(R[1, 0], R[0, 0])])
    if R.shape != (3, 3):
        raise ValueError(f"expected a 2x2 or 3x3 rotation matrix, got shape {R.shape}")
    # scipy's rotvec uses the cross-product convention [w]x; our below-diagonal
    # column-major convention relates to it by r = (w3, -w2, w1).
    w = _ScipyRotation.from_matrix(R).as_rotvec()
    return np.array([w[2], -w[1], w[0]])


@dataclass(frozen=True)
class PointCloud:
    """Ordered d-dimensional point set with cached norm quantities.

    ``frob_norm`` is the Frobenius norm of the d x n matrix whose columns are
    the points, ``sum_norms`` is the sum of the point norms.  The points array
    is made read-only so instances are safe to share across threads.
    """

    points: np.ndarray
    dim: int = field(init=False)
    frob_norm: float = field(init=False)
    sum_norms: float = field(init=False)
    point_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True, order="C")
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty (n, d) array")
        if pts.shape[1] not in (2, 3):
            raise ValueError(f"points must live in R^2 or R^3, got d={pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        norms = np.sqrt(np.sum(pts * pts, axis=1))
        norms.setflags(write=False)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dim", int(pts.shape[1]))
        object.__setattr__(self, "frob_norm", float(math.sqrt(np.sum(pts * pts))))
        object.__setattr__(self, "sum_norms", float(np.sum(norms)))
        object.__setattr__(self, "point_norms", norms)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RigidMotion:
    """Rotation vector plus translation; ``trans`` is zero in bijective mode."""

    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rot, dtype=float, copy=True)
        trans = np.array(self.trans, dtype=float, copy=True)
        d = dim_from_rotation(rot.shape[0]) if rot.ndim == 1 else -1
        if trans.shape != (d,):
            raise ValueError(
                f"translation length {trans.shape} does not match rotation vector of length {rot.shape}"
            )
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "trans", trans)

    @property
    def dim(self) -> int:
        return self.trans.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "RigidMotion":
        return cls(np.zeros(rotation_dim(dim)), np.zeros(dim))

    def matrix(self) -> np.ndarray:
        return exp_rotation(self.rot)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.matrix().T + self.trans


@dataclass(frozen=True)
class Cube:
    """Axis-aligned search cell: center, half-edge and subdivision generation.

    Membership is half-open on the upper faces so that subdivision is an
    exact partition; bound formulas use the closed-cube corner distance
    sqrt(D) * half_edge regardless.
    """

    center: np.ndarray
    half_edge: float
    generation: int = 0

    def __post_init__(self):
        center = np.array(self.center, dtype=float, copy=True)
        if center.ndim != 1:
            raise ValueError("cube center must be a vector")
        if not self.half_edge > 0:
            raise ValueError("half_edge must be positive")
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_edge", float(self.half_edge))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def subdivide(self) -> list["Cube"]:
        """The 2^D children with half-edge h/2 tiling this cube."""
        h2 = self.half_edge / 2.0
        children = []
        for signs in itertools.product((-1.0, 1.0), repeat=self.dim):
            offset = np.array(signs) * h2
            children.append(Cube(self.center + offset, h2, self.generation + 1))
        return children

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        lo = self.center - self.half_edge
        hi = self.center + self.half_edge
        return bool(np.all(x >= lo) and np.all(x < hi))


def subdivide(cube: Cube) -> list[Cube]:
    return cube.subdivide()


def cloud_norms(cloud: PointCloud) -> tuple[float, float]:
    """(Frobenius norm of the point matrix, sum of point norms)."""
    return cloud.frob_norm, cloud.sum_norms


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, np.ndarray, float]:
    """Center a cloud to zero mean and scale it uniformly into [-1, 1]^d.

    Returns ``(normalized, shift, scale)`` with ``normalized = scale * (p - shift)``;
    the scale is a single scalar, so rigid structure is preserved up to a
    global factor.  The largest output coordinate magnitude is exactly 1.
    """
    pts = cloud.points
    shift = pts.mean(axis=0)
    centered = pts - shift
    maxabs = float(np.abs(centered).max())
    if maxabs <= 0.0:
        raise DegenerateCloudError("all points coincide; cloud cannot be normalized")
    return PointCloud(centered / maxabs), shift, 1.0 / maxabs


def parse_xyz(text: str) -> PointCloud:
    """Parse plain-text points: one point per line, whitespace-separated
    coordinates, ``#`` comment lines ignored, dimension inferred from the
    first data line."""
    rows = []
    dim = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if dim is None:
            if any(tok.isalpha() or tok.lower() in ("ply", "off") for tok in tokens):
                raise XYZFormatError(
                    f"line {lineno}: mesh-style headers are not supported; "
                    "provide plain coordinate lines",
                    line=lineno,
                )
            if len(tokens) not in (2, 3):
                raise XYZFormatError(
                    f"line {lineno}: expected 2 or 3 coordinates, got {len(tokens)}",
                    line=lineno,
                )
            dim = len(tokens)
        if len(tokens) != dim:
            raise XYZFormatError(
                f"line {lineno}: expected {dim} coordinates, got {len(tokens)}",
                line=lineno,
            )
        try:
            rows.append([float(tok) for tok in tokens])
        except ValueError:
            raise XYZFormatError(
                f"line {lineno}: could not parse coordinates from {line!r}",
                line=lineno,
            ) from None
    if not rows:
        raise XYZFormatError("no points found in input")
    return PointCloud(np.array(rows))


def format_xyz(cloud: PointCloud) -> str:
    lines = [" ".join(format(v, ".17g") for v in p) for p in cloud.points]
    return "\n".join(lines) + "\n"
