"""3D math primitives: vectors as plain tuples, rotations as quaternions.

Tuple-based math keeps the event reducer allocation-light; numpy enters only
in the rendering layer where work is batched per frame.  Quaternions are
stored (w, x, y, z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

IDENTITY_QUAT: Quat = (1.0, 0.0, 0.0, 0.0)


def vadd(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def vsub(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def vscale(a: Vec3, s: float) -> Vec3:
    return (a[0] * s, a[1] * s, a[2] * s)


def vdot(a: Vec3, b: Vec3) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def vcross(a: Vec3, b: Vec3) -> Vec3:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def vlength(a: Vec3) -> float:
    return math.sqrt(vdot(a, a))


def vdist(a: Vec3, b: Vec3) -> float:
    return vlength(vsub(a, b))


def vnormalize(a: Vec3) -> Vec3:
    n = vlength(a)
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return (a[0] / n, a[1] / n, a[2] / n)


def vfinite(a: Vec3) -> bool:
    return math.isfinite(a[0]) and math.isfinite(a[1]) and math.isfinite(a[2])


def qmul(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def qconj(a: Quat) -> Quat:
    return (a[0], -a[1], -a[2], -a[3])


def qnorm(a: Quat) -> float:
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3])


def qnormalize(a: Quat) -> Quat:
    n = qnorm(a)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return (a[0] / n, a[1] / n, a[2] / n, a[3] / n)


def qrotate(q: Quat, v: Vec3) -> Vec3:
    # q v q* expanded; q must be unit.
    w, x, y, z = q
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    return (
        v[0] + w * tx + (y * tz - z * ty),
        v[1] + w * ty + (z * tx - x * tz),
        v[2] + w * tz + (x * ty - y * tx),
    )


def quat_from_axis_angle(axis: Vec3, angle_rad: float) -> Quat:
    ax = vnormalize(axis)
    h = 0.5 * angle_rad
    s = math.sin(h)
    return (math.cos(h), ax[0] * s, ax[1] * s, ax[2] * s)


def quat_angle(a: Quat, b: Quat) -> float:
    """Smallest rotation angle (radians) taking orientation a to b."""
    d = abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3])
    return 2.0 * math.acos(min(1.0, d))


def axis_angle_between(a: Vec3, b: Vec3) -> float:
    """Unsigned angle (radians) between two directions, sign-insensitive use
    is up to the caller."""
    d = vdot(vnormalize(a), vnormalize(b))
    return math.acos(max(-1.0, min(1.0, d)))


@dataclass(frozen=True, slots=True)
class Pose:
    """Rigid placement: position in meters plus a unit orientation quaternion.

    The quaternion is renormalized on construction; anything further than
    1e-6 from unit length before normalization is rejected as corrupt input.
    """

    position: Vec3 = (0.0, 0.0, 0.0)
    orientation: Quat = IDENTITY_QUAT

    def __post_init__(self):
        p = (float(self.position[0]), float(self.position[1]), float(self.position[2]))
        q = (
            float(self.orientation[0]),
            float(self.orientation[1]),
            float(self.orientation[2]),
            float(self.orientation[3]),
        )
        if not vfinite(p) or not all(math.isfinite(c) for c in q):
            raise ValueError("pose components must be finite")
        n = qnorm(q)
        if n < 1e-12:
            raise ValueError("orientation quaternion has near-zero norm")
        # only renormalize when actually off-unit, so re-wrapping an already
        # normalized quaternion is bit-stable
        if abs(n - 1.0) > 1e-9:
            q = (q[0] / n, q[1] / n, q[2] / n, q[3] / n)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    def compose(self, local: "Pose") -> "Pose":
        """World pose of `local` expressed in this pose's frame."""
        return Pose(
            vadd(self.position, qrotate(self.orientation, local.position)),
            qmul(self.orientation, local.orientation),
        )

    def inverse(self) -> "Pose":
        qi = qconj(self.orientation)
        return Pose(qrotate(qi, vscale(self.position, -1.0)), qi)

    def transform_point(self, p: Vec3) -> Vec3:
        return vadd(self.position, qrotate(self.orientation, p))

    def x_axis(self) -> Vec3:
        return qrotate(self.orientation, (1.0, 0.0, 0.0))

    def y_axis(self) -> Vec3:
        return qrotate(self.orientation, (0.0, 1.0, 0.0))

    def z_axis(self) -> Vec3:
        return qrotate(self.orientation, (0.0, 0.0, 1.0))


IDENTITY_POSE = Pose()


@dataclass(frozen=True, slots=True)
class Ray:
    """Origin plus unit direction; direction is normalized on construction."""

    origin: Vec3
    direction: Vec3

    def __post_init__(self):
        o = (float(self.origin[0]), float(self.origin[1]), float(self.origin[2]))
        d = (float(self.direction[0]), float(self.direction[1]), float(self.direction[2]))
        if not vfinite(o) or not vfinite(d):
            raise ValueError("ray components must be finite")
        n = vlength(d)
        if n < 1e-12:
            raise ValueError("ray direction has near-zero norm")
        if abs(n - 1.0) > 1e-9:
            d = (d[0] / n, d[1] / n, d[2] / n)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> Vec3:
        return vadd(self.origin, vscale(self.direction, t))


def look_at_pose(eye: Vec3, target: Vec3, up: Vec3 = (0.0, 1.0, 0.0)) -> Pose:
    """Pose whose local -Z views `target` from `eye` with `up` as the
    vertical hint (camera / head convention)."""
    fwd = vnormalize(vsub(target, eye))  # viewing direction = local -Z
    z = vscale(fwd, -1.0)
    x = vcross(up, z)
    if vlength(x) < 1e-9:
        x = vcross((1.0, 0.0, 0.0), z)
        if vlength(x) < 1e-9:
            x = vcross((0.0, 0.0, 1.0), z)
    x = vnormalize(x)
    y = vcross(z, x)
    return Pose(eye, quat_from_matrix_cols(x, y, z))


def quat_from_matrix_cols(x: Vec3, y: Vec3, z: Vec3) -> Quat:
    """Quaternion from an orthonormal rotation matrix given by columns."""
    m00, m01, m02 = x[0], y[0], z[0]
    m10, m11, m12 = x[1], y[1], z[1]
    m20, m21, m22 = x[2], y[2], z[2]
    tr = m00 + m11 + m22
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        return qnormalize(((0.25 * s), (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s))
    if m00 > m11 and m00 > m22:
        s = math.sqrt(1.0 + m00 - m11 - m22) * 2.0
        return qnormalize(((m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s))
    if m11 > m22:
        s = math.sqrt(1.0 + m11 - m00 - m22) * 2.0
        return qnormalize(((m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s))
    s = math.sqrt(1.0 + m22 - m00 - m11) * 2.0
    return qnormalize(((m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s))
