"""SE(3) algebra, pinhole projection, and pose/disparity-induced optical flow.

Conventions used throughout the package:

* ``Pose`` maps camera coordinates to world coordinates, so the point of
  frame i seen in frame j is ``relative(pose_i, pose_j)`` applied to the
  frame-i camera point.
* Quaternions are stored xyzw and kept unit-norm.
* Twist perturbations are left-multiplicative: ``pose <- se3_exp(delta) * pose``.
  Under this convention the Jacobian of a reprojected pixel with respect to
  the source pose equals minus the Jacobian with respect to the target pose,
  because both perturbations act through the same world-frame increment.
* Intrinsics passed to flow functions are already scaled to the 1/8 grid;
  pixel centers sit at integer coordinates of that grid.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    InvalidPixel,
    NearPiRotation,
    NonPositiveDisparity,
)

Z_MIN = 1e-4  # projection validity floor, scene units


# ---------------------------------------------------------------------------
# quaternion helpers (xyzw order)
# ---------------------------------------------------------------------------

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns xyzw with nonnegative w."""
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


# ---------------------------------------------------------------------------
# core types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Twist:
    """Element of se(3): rho is the translation part, phi the rotation part."""

    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float).reshape(3))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, v) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-to-world transform: x_world = R x_cam + t."""

    rotation: np.ndarray  # unit quaternion, xyzw
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0:
            raise ValueError("quaternion norm must be finite and nonzero")
        object.__setattr__(self, "rotation", q / n)
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3)
        )

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(quat_from_matrix(m[:3, :3]), m[:3, 3])

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map camera-frame points (..., 3) into the world frame."""
        r = self.rotation_matrix()
        return np.asarray(points) @ r.T + self.translation


@dataclass(frozen=True, eq=False)
class Sim3Transform:
    """Similarity transform: x -> scale * R x + t."""

    scale: float
    rotation: np.ndarray  # unit quaternion, xyzw
    translation: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("scale must be positive")
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        object.__setattr__(self, "rotation", q / np.linalg.norm(q))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3)
        )

    @classmethod
    def identity(cls) -> "Sim3Transform":
        return cls(1.0, np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        r = quat_to_matrix(self.rotation)
        return self.scale * (np.asarray(points) @ r.T) + self.translation

    def apply_pose(self, pose: Pose) -> Pose:
        """Transform a camera-to-world pose; translations scale, rotations compose."""
        r = quat_to_matrix(self.rotation)
        return Pose(
            quat_multiply(self.rotation, pose.rotation),
            self.scale * (r @ pose.translation) + self.translation,
        )

    def inverse(self) -> "Sim3Transform":
        r = quat_to_matrix(self.rotation)
        return Sim3Transform(
            1.0 / self.scale,
            quat_conjugate(self.rotation),
            -(r.T @ self.translation) / self.scale,
        )


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics over a width x height pixel grid."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the grid")

    def downsample(self, factor: int = 8) -> "Intrinsics":
        if self.width % factor or self.height % factor:
            raise ValueError("grid dimensions must be multiples of the factor")
        return Intrinsics(
            self.fx / factor,
            self.fy / factor,
            self.cx / factor,
            self.cy / factor,
            self.width // factor,
            self.height // factor,
        )


@dataclass(frozen=True, eq=False)
class DisparityMap:
    """Per-pixel inverse depth on the 1/8 grid."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.ndim != 2:
            raise ValueError("disparity grid must be 2-D")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel 2-vector flow plus validity; invalid vectors are zeroed."""

    vectors: np.ndarray  # (h, w, 2)
    valid: np.ndarray  # (h, w) bool

    def __post_init__(self):
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=float))
        object.__setattr__(self, "valid", np.asarray(self.valid, dtype=bool))

    @property
    def shape(self):
        return self.valid.shape

    def magnitudes(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=-1)


# ---------------------------------------------------------------------------
# exponential / logarithm maps
# ---------------------------------------------------------------------------

_SMALL_ANGLE = 1e-8


def _so3_exp_quat(phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi)
    if theta < _SMALL_ANGLE:
        half_sinc = 0.5 - theta * theta / 48.0
    else:
        half_sinc = np.sin(0.5 * theta) / theta
    q = np.empty(4)
    q[:3] = half_sinc * phi
    q[3] = np.cos(0.5 * theta)
    return q / np.linalg.norm(q)


def _left_jacobian(phi: np.ndarray) -> np.ndarray:
    """V such that t = V rho for the SE(3) exponential."""
    theta2 = float(phi @ phi)
    k = skew(phi)
    k2 = k @ k
    if theta2 < _SMALL_ANGLE ** 2:
        a = 0.5 - theta2 / 24.0
        b = 1.0 / 6.0 - theta2 / 120.0
    else:
        theta = np.sqrt(theta2)
        a = (1.0 - np.cos(theta)) / theta2
        b = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) + a * k + b * k2


def _left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta2 = float(phi @ phi)
    k = skew(phi)
    k2 = k @ k
    if theta2 < _SMALL_ANGLE ** 2:
        c = 1.0 / 12.0 + theta2 / 720.0
    else:
        theta = np.sqrt(theta2)
        c = (1.0 - 0.5 * theta * np.cos(0.5 * theta) / np.sin(0.5 * theta)) / theta2
    return np.eye(3) - 0.5 * k + c * k2


def se3_exp(xi: Twist) -> Pose:
    """Closed-form exponential map from se(3) to SE(3)."""
    q = _so3_exp_quat(xi.phi)
    t = _left_jacobian(xi.phi) @ xi.rho
    return Pose(q, t)


def se3_log(p: Pose) -> Twist:
    """Inverse of se3_exp; raises NearPiRotation within 1e-6 of angle pi."""
    q = p.rotation if p.rotation[3] >= 0 else -p.rotation
    s = np.linalg.norm(q[:3])
    w = q[3]
    angle = 2.0 * np.arctan2(s, w)
    if angle > np.pi - 1e-6:
        raise NearPiRotation(f"rotation angle {angle:.9f} within 1e-6 of pi")
    if s < _SMALL_ANGLE:
        # series for angle/sin(angle/2) around zero
        phi = q[:3] * (2.0 / w) * (1.0 - (s * s) / (3.0 * w * w))
    else:
        phi = q[:3] * (angle / s)
    rho = _left_jacobian_inv(phi) @ p.translation
    return Twist(rho, phi)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose product a * b (apply b first, then a)."""
    ra = a.rotation_matrix()
    return Pose(quat_multiply(a.rotation, b.rotation), ra @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    r = p.rotation_matrix()
    return Pose(quat_conjugate(p.rotation), -(r.T @ p.translation))


def relative(pose_i: Pose, pose_j: Pose) -> Pose:
    """Transform taking frame-i camera points to frame-j camera points."""
    return compose(inverse(pose_j), pose_i)


# ---------------------------------------------------------------------------
# pinhole model
# ---------------------------------------------------------------------------

def backproject(pixel, disparity: float, k: Intrinsics) -> np.ndarray:
    """Lift a pixel with inverse depth d to a camera-frame point at depth 1/d."""
    if disparity <= 0:
        raise NonPositiveDisparity(f"disparity {disparity} must be > 0")
    u, v = float(pixel[0]), float(pixel[1])
    z = 1.0 / disparity
    return np.array([(u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z])


def project(point, k: Intrinsics):
    """Pinhole projection; returns (pixel, depth, valid)."""
    x, y, z = float(point[0]), float(point[1]), float(point[2])
    if z <= Z_MIN:
        return np.array([np.nan, np.nan]), z, False
    u = k.fx * x / z + k.cx
    v = k.fy * y / z + k.cy
    valid = (0.0 <= u < k.width) and (0.0 <= v < k.height)
    return np.array([u, v]), z, valid


@lru_cache(maxsize=32)
def _grid_rays(k: Intrinsics) -> np.ndarray:
    """Unit-depth rays ((v,u) grid, 3) for every pixel center of the grid."""
    u = np.arange(k.width, dtype=float)
    v = np.arange(k.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    rays = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)
    return rays


def _grid_pixels(k: Intrinsics) -> np.ndarray:
    u = np.arange(k.width, dtype=float)
    v = np.arange(k.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def _project_grid(points: np.ndarray, k: Intrinsics):
    """Vectorized projection of (h, w, 3) points; invalid entries zeroed."""
    z = points[..., 2]
    safe_z = np.where(z > Z_MIN, z, 1.0)
    u = k.fx * points[..., 0] / safe_z + k.cx
    v = k.fy * points[..., 1] / safe_z + k.cy
    valid = (z > Z_MIN) & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    pix = np.stack([u, v], axis=-1)
    pix[~valid] = 0.0
    return pix, valid


def induced_flow(pose_i: Pose, pose_j: Pose, disp_i: DisparityMap, k: Intrinsics) -> FlowField:
    """Optical flow implied by rigid geometry: reproject frame-i pixels into frame j."""
    return induced_flow_dynamic(pose_i, pose_j, disp_i, None, k)


def induced_flow_dynamic(
    pose_i: Pose,
    pose_j: Pose,
    disp_i: DisparityMap,
    displacement,
    k: Intrinsics,
) -> FlowField:
    """Composite flow: rigid reprojection plus per-pixel 3-D displacement.

    ``displacement`` is an (h, w, 3) field expressed in frame-j camera
    coordinates, added after the rigid transform; None means all zeros.
    """
    d = disp_i.values
    if d.shape != (k.height, k.width):
        raise ValueError(
            f"disparity shape {d.shape} does not match grid {(k.height, k.width)}"
        )
    rays = _grid_rays(k)
    src_valid = d > 0
    safe_d = np.where(src_valid, d, 1.0)
    pts_i = rays / safe_d[..., None]

    rel = relative(pose_i, pose_j)
    r = rel.rotation_matrix()
    pts_j = pts_i @ r.T + rel.translation
    if displacement is not None:
        disp_field = np.asarray(displacement, dtype=float)
        if disp_field.shape != pts_j.shape:
            raise ValueError(
                f"displacement shape {disp_field.shape} does not match {pts_j.shape}"
            )
        pts_j = pts_j + disp_field

    pix, valid = _project_grid(pts_j, k)
    valid &= src_valid
    vectors = pix - _grid_pixels(k)
    vectors[~valid] = 0.0
    return FlowField(vectors, valid)


# ---------------------------------------------------------------------------
# analytic Jacobians
# ---------------------------------------------------------------------------

def _flow_jacobians_flat(rays, disp, pose_i, pose_j, k):
    """Reprojection, validity and Jacobians for flat (n, 3) rays, (n,) disparity.

    Returns (pix (n,2), valid (n,), j_pose_i (n,2,6), j_disp (n,2)).
    The target-pose Jacobian is the negation of j_pose_i under the
    left-multiplicative convention, so it is not materialized here.
    """
    n = rays.shape[0]
    src_valid = disp > 0
    safe_d = np.where(src_valid, disp, 1.0)
    pts_i = rays / safe_d[:, None]

    ri = pose_i.rotation_matrix()
    rj = pose_j.rotation_matrix()
    world = pts_i @ ri.T + pose_i.translation
    pts_j = (world - pose_j.translation) @ rj

    z = pts_j[:, 2]
    valid = src_valid & (z > Z_MIN)
    safe_z = np.where(valid, z, 1.0)
    u = k.fx * pts_j[:, 0] / safe_z + k.cx
    v = k.fy * pts_j[:, 1] / safe_z + k.cy
    valid &= (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    pix = np.stack([u, v], axis=-1)

    # dpi/dX at X_j: rows (fx/z, 0, -fx x/z^2), (0, fy/z, -fy y/z^2)
    dpi = np.zeros((n, 2, 3))
    inv_z = 1.0 / safe_z
    dpi[:, 0, 0] = k.fx * inv_z
    dpi[:, 0, 2] = -k.fx * pts_j[:, 0] * inv_z * inv_z
    dpi[:, 1, 1] = k.fy * inv_z
    dpi[:, 1, 2] = -k.fy * pts_j[:, 1] * inv_z * inv_z

    # X_j = R_j^T (W - t_j); left perturbation of pose_i moves W by (I, -[W]x)
    a = dpi @ rj.T  # (n, 2, 3)
    skew_w = np.zeros((n, 3, 3))
    skew_w[:, 0, 1] = -world[:, 2]
    skew_w[:, 0, 2] = world[:, 1]
    skew_w[:, 1, 0] = world[:, 2]
    skew_w[:, 1, 2] = -world[:, 0]
    skew_w[:, 2, 0] = -world[:, 1]
    skew_w[:, 2, 1] = world[:, 0]
    j_pose_i = np.concatenate([a, -np.matmul(a, skew_w)], axis=2)  # (n, 2, 6)

    # dX_i/dd = -ray / d^2, mapped through the relative rotation
    r_rel = rj.T @ ri
    d_pts = (rays @ r_rel.T) * (-1.0 / (safe_d * safe_d))[:, None]
    j_disp = np.einsum("nij,nj->ni", dpi, d_pts)

    j_pose_i[~valid] = 0.0
    j_disp[~valid] = 0.0
    pix[~valid] = 0.0
    return pix, valid, j_pose_i, j_disp


def induced_flow_with_jacobians(pose_i, pose_j, disp_i: DisparityMap, k: Intrinsics):
    """Grid flow plus analytic Jacobians, for normal-equation assembly.

    Returns (flow: FlowField, j_pose_i (h,w,2,6), j_disp (h,w,2)); the
    Jacobian w.r.t. pose_j is -j_pose_i. Entries at invalid pixels are zero.
    """
    rays = _grid_rays(k).reshape(-1, 3)
    disp = disp_i.values.reshape(-1)
    pix, valid, j_pose_i, j_disp = _flow_jacobians_flat(rays, disp, pose_i, pose_j, k)
    h, w = disp_i.values.shape
    vectors = pix.reshape(h, w, 2) - _grid_pixels(k)
    vectors[~valid.reshape(h, w)] = 0.0
    flow = FlowField(vectors, valid.reshape(h, w))
    return flow, j_pose_i.reshape(h, w, 2, 6), j_disp.reshape(h, w, 2)


def reprojection_jacobians(pose_i, pose_j, disp_i: DisparityMap, k: Intrinsics, pixel):
    """Derivatives of the reprojected pixel at one source pixel.

    Returns (j_pose_i (2,6), j_pose_j (2,6), j_disp (2,1)) with respect to
    left-multiplicative twists of each pose and the source disparity.
    """
    u, v = int(round(pixel[0])), int(round(pixel[1]))
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise InvalidPixel(f"pixel ({u}, {v}) outside grid")
    ray = _grid_rays(k)[v, u][None, :]
    d = np.array([disp_i.values[v, u]])
    _, valid, j_pose_i, j_disp = _flow_jacobians_flat(ray, d, pose_i, pose_j, k)
    if not valid[0]:
        raise InvalidPixel(f"reprojection invalid at pixel ({u}, {v})")
    return j_pose_i[0], -j_pose_i[0], j_disp[0].reshape(2, 1)
