"""Rigid-body math, pinhole backprojection and least-squares pose fitting."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, DegenerateCorrespondenceError, ValidationError

ORTHO_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Pose in SE(3): ``x -> R @ x + t`` (t in meters)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValidationError("pose contains non-finite values")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValidationError("R is not a proper rotation")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> RigidTransform:
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def random(cls, rng: np.random.Generator, translation_scale: float = 1.0) -> RigidTransform:
        """Uniformly random rotation, translation uniform in a cube."""
        R = Rotation.random(random_state=rng).as_matrix()
        # as_matrix can leave ~1e-16 drift; project back onto SO(3)
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
        t = rng.uniform(-translation_scale, translation_scale, 3)
        return cls(R, t)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def to_row(self) -> list[float]:
        """12 values: R row-major followed by t."""
        return [float(v) for v in self.R.ravel()] + [float(v) for v in self.t]

    @classmethod
    def from_row(cls, values) -> RigidTransform:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (12,):
            raise ValidationError("a pose row needs exactly 12 values")
        # 17 significant digits round-trip exactly, so no re-projection is needed
        return cls(values[:9].reshape(3, 3).copy(), values[9:].copy())

    def __call__(self, pts) -> np.ndarray:
        return transform_points(self, pts)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def __repr__(self):
        rotvec = Rotation.from_matrix(self.R).as_rotvec()
        return f"RigidTransform(rotvec={np.round(rotvec, 6).tolist()}, t={np.round(self.t, 6).tolist()})"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigurationError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    source_pixel: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.source_pixel is not None:
            px = np.asarray(self.source_pixel, dtype=np.int64).reshape(-1, 2)
            if len(px) != len(pts):
                raise ValidationError("source_pixel length differs from points")
            object.__setattr__(self, "source_pixel", px)

    def __len__(self):
        return len(self.points)


def backproject(depth, intr: CameraIntrinsics, mask=None) -> PointCloud:
    """Lift every valid depth pixel (meters) to a camera-frame 3D point.

    Pixels with zero depth, or False in ``mask``, are skipped. Points are emitted
    in row-major pixel order and ``source_pixel`` holds their ``(u, v)``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise ConfigurationError(
            f"depth is {depth.shape}, intrinsics expect {(intr.height, intr.width)}"
        )
    if np.any(depth < 0):
        raise ValidationError("negative depth values")
    valid = depth > 0
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != depth.shape:
            raise ConfigurationError("mask shape differs from depth shape")
        valid &= mask
    v, u = np.nonzero(valid)
    d = depth[v, u]
    x = (u - intr.cx) * d / intr.fx
    y = (v - intr.cy) * d / intr.fy
    return PointCloud(np.column_stack([x, y, d]), np.column_stack([u, v]))


def project(points, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection to continuous pixel coordinates ``(u, v)``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    return np.column_stack([intr.fx * pts[:, 0] / z + intr.cx, intr.fy * pts[:, 1] / z + intr.cy])


def transform_points(pose: RigidTransform, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ pose.R.T + pose.t


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Pose that applies ``b`` first, then ``a``."""
    return RigidTransform(a.R @ b.R, a.R @ b.t + a.t)


def invert(a: RigidTransform) -> RigidTransform:
    return RigidTransform(a.R.T, -a.R.T @ a.t)


def rotation_error(R_a, R_b) -> float:
    """Geodesic angle (radians) between two rotation matrices."""
    R = np.asarray(R_a).T @ np.asarray(R_b)
    # arccos loses precision near 0; use the axis-angle norm instead
    return float(np.linalg.norm(Rotation.from_matrix(R).as_rotvec()))


def fit_rigid(src, dst, weights=None) -> RigidTransform:
    """Weighted least-squares rigid alignment ``dst ~ R @ src + t``.

    SVD solution of Arun, Huang & Blostein (1987): center both sets at their
    weighted centroids, take the SVD of the weighted cross-covariance and flip
    the last singular direction if the product would be a reflection.

    Raises DegenerateCorrespondenceError for fewer than three pairs, all-zero
    weights, or (weighted) source points that are collinear.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ConfigurationError("src and dst must have the same number of points")
    if len(src) < 3:
        raise DegenerateCorrespondenceError(f"need at least 3 correspondences, got {len(src)}")
    if weights is None:
        w = np.ones(len(src))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if len(w) != len(src):
            raise ConfigurationError("weights length differs from point count")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateCorrespondenceError("all weights are zero")
    w = w / total

    mu_src = w @ src
    mu_dst = w @ dst
    A = src - mu_src
    B = dst - mu_dst
    sw = np.sqrt(w)[:, None]
    s = np.linalg.svd(A * sw, compute_uv=False)
    if s[0] == 0.0 or s[1] <= 1e-12 * s[0]:
        raise DegenerateCorrespondenceError("source points are collinear or coincident")

    H = (A * w[:, None]).T @ B
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = mu_dst - R @ mu_src
    return RigidTransform(R, t)


D16_HEADER = struct.Struct("<II")


def write_d16(path, depth_m) -> None:
    """Write a depth map (meters) as ``.d16``: width/height header + uint16 mm."""
    depth_m = np.asarray(depth_m, dtype=np.float64)
    h, w = depth_m.shape
    mm = np.clip(np.rint(depth_m * 1000.0), 0, 65535).astype("<u2")
    with open(path, "wb") as fh:
        fh.write(D16_HEADER.pack(w, h))
        fh.write(mm.tobytes(order="C"))


def read_d16(path) -> np.ndarray:
    """Read a ``.d16`` depth file, returning an H x W array in meters."""
    raw = Path(path).read_bytes()
    if len(raw) < D16_HEADER.size:
        raise ValidationError(f"{path}: truncated .d16 header")
    w, h = D16_HEADER.unpack_from(raw)
    body = raw[D16_HEADER.size:]
    if len(body) != 2 * w * h:
        raise ValidationError(f"{path}: expected {2 * w * h} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<u2").reshape(h, w).astype(np.float64) / 1000.0
