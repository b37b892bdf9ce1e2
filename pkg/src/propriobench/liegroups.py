"""Matrix Lie group primitives for SO(3) and the extended poses SE_k(3).

An extended pose bundles orientation, velocity, position and up to four
contact-foot positions into one block-upper-triangular matrix

    [ R  v  p  d_1 .. d_k ]
    [ 0          I_{2+k}  ]

so that the right-invariant error of the contact-aided filters and the
fixed-lag smoother lives in a single tangent space.  Tangent vectors are
ordered (xi_R, xi_v, xi_p, xi_d1..xi_dk) for the group part, optionally
followed by the 6 additive bias components (zeta_w, zeta_a).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_CONTACTS = 4
_SMALL_ANGLE = 1e-8


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    return v


def skew(v) -> np.ndarray:
    """so(3) wedge: maps a 3-vector to the matrix of the cross product."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors (np.cross has heavy overhead)."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def unskew(W) -> np.ndarray:
    """so(3) vee, inverse of :func:`skew`."""
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def rot_exp(omega) -> np.ndarray:
    """SO(3) exponential (Rodrigues), with a Taylor fallback for tiny angles."""
    w = _as_vec3(omega)
    t2 = float(w @ w)
    if not math.isfinite(t2):
        raise ValueError("rot_exp: non-finite axis-angle input")
    theta = math.sqrt(t2)
    W = skew(w)
    if theta < _SMALL_ANGLE:
        # second-order series, exact to O(theta^3)
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def _check_rotation(R: np.ndarray, tol: float = 1e-6) -> None:
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > tol or np.linalg.det(R) < 0.0:
        raise ValueError(f"matrix is not a rotation (orthonormality error {err:.2e})")


def rot_log(R) -> np.ndarray:
    """Principal SO(3) logarithm with angle in [0, pi].

    Near pi the axis is recovered from the symmetric part; the sign is fixed
    so the first nonzero axis component is positive.
    """
    R = np.asarray(R, dtype=float)
    _check_rotation(R)
    trace = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(trace)
    if theta < _SMALL_ANGLE:
        # R ~ I + w^ : antisymmetric part carries the angle
        return unskew(R - R.T) * 0.5
    if np.pi - theta > 1e-6:
        return unskew(R - R.T) * (0.5 * theta / np.sin(theta))
    # near pi the antisymmetric part vanishes; recover aa^T from the
    # symmetric part instead:  (R + R^T)/2 = cos(t) I + (1 - cos(t)) aa^T
    c = np.cos(theta)
    aaT = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
    axis = np.sqrt(np.clip(np.diag(aaT), 0.0, None))
    i = int(np.argmax(axis))
    for j in range(3):
        if j != i:
            axis[j] = aaT[i, j] / axis[i]
    axis /= np.linalg.norm(axis)
    s = unskew(R - R.T) * 0.5  # = sin(theta) * axis, may be tiny but signed
    if np.linalg.norm(s) > 1e-10:
        if s @ axis < 0.0:
            axis = -axis
    else:
        # angle is pi to machine precision: fix sign by convention
        for comp in axis:
            if abs(comp) > 1e-12:
                if comp < 0.0:
                    axis = -axis
                break
    return axis * theta


def so3_left_jacobian(omega) -> np.ndarray:
    """Left Jacobian of SO(3), J_l(w) = sum w^n / (n+1)!."""
    w = _as_vec3(omega)
    theta = math.sqrt(float(w @ w))
    W = skew(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    t2 = theta * theta
    a = (1.0 - np.cos(theta)) / t2
    b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * W + b * (W @ W)


def so3_left_jacobian_inv(omega) -> np.ndarray:
    """Inverse left Jacobian of SO(3); valid for ||w|| < 2*pi."""
    w = _as_vec3(omega)
    theta = math.sqrt(float(w @ w))
    W = skew(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    half = 0.5 * theta
    cot = half / np.tan(half)
    coeff = (1.0 - cot) / (theta * theta)
    return np.eye(3) - 0.5 * W + coeff * (W @ W)


# ---------------------------------------------------------------------------
# quaternions (scalar-last, Hamilton, body-to-world)

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("cannot normalize zero/non-finite quaternion")
    return q / n


def quat_to_rot(q) -> np.ndarray:
    """Rotation matrix of a scalar-last unit quaternion (qx, qy, qz, qw)."""
    x, y, z, w = quat_normalize(q)
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R) -> np.ndarray:
    """Scalar-last quaternion of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    m = R
    t = np.trace(m)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    return quat_normalize((x, y, z, w))


def quat_mul(q1, q2) -> np.ndarray:
    """Hamilton product, scalar-last: rotation q1 followed-in-body by q2."""
    x1, y1, z1, w1 = q1
    x2, y2, z2, w2 = q2
    return np.array(
        [
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        ]
    )


def quat_from_axis_angle(omega) -> np.ndarray:
    w = _as_vec3(omega)
    theta = math.sqrt(float(w @ w))
    if theta < _SMALL_ANGLE:
        q = np.array([0.5 * w[0], 0.5 * w[1], 0.5 * w[2], 1.0])
        return quat_normalize(q)
    axis = w / theta
    s = np.sin(0.5 * theta)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(0.5 * theta)])


def rot_to_rpy(R) -> np.ndarray:
    """(roll, pitch, yaw) of R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    R = np.asarray(R, dtype=float)
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        roll = np.arctan2(R[2, 1], R[2, 2])
        yaw = np.arctan2(R[1, 0], R[0, 0])
    else:
        roll = np.arctan2(-R[1, 2], R[1, 1])
        yaw = 0.0
    return np.array([roll, pitch, yaw])


# ---------------------------------------------------------------------------
# extended poses

@dataclass
class ExtendedPose:
    """Group element of SE_k(3): orientation, velocity, position, k contact points."""

    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    d: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.v = _as_vec3(self.v)
        self.p = _as_vec3(self.p)
        self.d = np.asarray(self.d, dtype=float).reshape(-1, 3)
        if self.d.shape[0] > MAX_CONTACTS:
            raise ValueError(f"at most {MAX_CONTACTS} contact points supported")

    @property
    def k(self) -> int:
        return self.d.shape[0]

    @staticmethod
    def identity(k: int = 0) -> "ExtendedPose":
        return ExtendedPose(np.eye(3), np.zeros(3), np.zeros(3), np.zeros((k, 3)))

    def copy(self) -> "ExtendedPose":
        return ExtendedPose(self.R.copy(), self.v.copy(), self.p.copy(), self.d.copy())

    def compose(self, other: "ExtendedPose") -> "ExtendedPose":
        if other.k != self.k:
            raise ValueError("contact counts differ")
        return ExtendedPose(
            self.R @ other.R,
            self.R @ other.v + self.v,
            self.R @ other.p + self.p,
            other.d @ self.R.T + self.d,
        )

    def __matmul__(self, other: "ExtendedPose") -> "ExtendedPose":
        return self.compose(other)

    def inverse(self) -> "ExtendedPose":
        Rt = self.R.T
        return ExtendedPose(Rt, -(Rt @ self.v), -(Rt @ self.p), -(self.d @ self.R))

    def as_matrix(self) -> np.ndarray:
        n = 5 + self.k
        M = np.eye(n)
        M[:3, :3] = self.R
        M[:3, 3] = self.v
        M[:3, 4] = self.p
        for j in range(self.k):
            M[:3, 5 + j] = self.d[j]
        return M

    @staticmethod
    def from_matrix(M) -> "ExtendedPose":
        M = np.asarray(M, dtype=float)
        n = M.shape[0]
        if M.shape != (n, n) or n < 5:
            raise ValueError(f"expected (5+k)x(5+k) matrix, got {M.shape}")
        k = n - 5
        return ExtendedPose(M[:3, :3], M[:3, 3], M[:3, 4], M[:3, 5:].T.copy())

    def act(self, b) -> np.ndarray:
        """Apply the group matrix to a homogeneous observation vector."""
        b = np.asarray(b, dtype=float)
        if b.shape != (5 + self.k,):
            raise ValueError(f"expected length {5 + self.k}, got {b.shape}")
        out = b.copy()
        out[:3] = self.R @ b[:3] + b[3] * self.v + b[4] * self.p
        for j in range(self.k):
            out[:3] += b[5 + j] * self.d[j]
        return out


def group_dim(k: int) -> int:
    return 9 + 3 * k


def tangent_dim(k: int) -> int:
    """Full error dimension: group part plus the 6 IMU-bias components."""
    return 15 + 3 * k


def group_exp(xi, k: int) -> ExtendedPose:
    """SE_k(3) exponential; one shared SO(3) left Jacobian acts on all columns."""
    xi = np.asarray(xi, dtype=float).reshape(group_dim(k))
    R = rot_exp(xi[:3])
    J = so3_left_jacobian(xi[:3])
    d = np.zeros((k, 3))
    for j in range(k):
        d[j] = J @ xi[9 + 3 * j : 12 + 3 * j]
    return ExtendedPose(R, J @ xi[3:6], J @ xi[6:9], d)


def group_log(X: ExtendedPose) -> np.ndarray:
    """SE_k(3) logarithm, inverse of :func:`group_exp`."""
    xi = np.zeros(group_dim(X.k))
    xi[:3] = rot_log(X.R)
    Jinv = so3_left_jacobian_inv(xi[:3])
    xi[3:6] = Jinv @ X.v
    xi[6:9] = Jinv @ X.p
    for j in range(X.k):
        xi[9 + 3 * j : 12 + 3 * j] = Jinv @ X.d[j]
    return xi


def state_exp(xi_zeta, k: int) -> tuple[ExtendedPose, np.ndarray]:
    """Full retraction: SE_k(3) exponential plus additive bias increment."""
    xi_zeta = np.asarray(xi_zeta, dtype=float)
    if xi_zeta.shape != (tangent_dim(k),):
        raise ValueError(
            f"tangent dimension {xi_zeta.shape} inconsistent with k={k}"
        )
    g = group_dim(k)
    return group_exp(xi_zeta[:g], k), xi_zeta[g:].copy()


def state_log(X: ExtendedPose, bias_increment) -> np.ndarray:
    out = np.zeros(tangent_dim(X.k))
    out[: group_dim(X.k)] = group_log(X)
    out[group_dim(X.k):] = np.asarray(bias_increment, dtype=float).reshape(6)
    return out


def adjoint(X: ExtendedPose) -> np.ndarray:
    """Adjoint of SE_k(3) in the right-invariant convention.

    Block-diagonal copies of R with (v)^ R, (p)^ R, (d_j)^ R down the first
    block column.
    """
    n = group_dim(X.k)
    A = np.zeros((n, n))
    A[:3, :3] = X.R
    A[3:6, 3:6] = X.R
    A[6:9, 6:9] = X.R
    A[3:6, :3] = skew(X.v) @ X.R
    A[6:9, :3] = skew(X.p) @ X.R
    for j in range(X.k):
        s = 9 + 3 * j
        A[s : s + 3, s : s + 3] = X.R
        A[s : s + 3, :3] = skew(X.d[j]) @ X.R
    return A


def group_ad(xi, k: int) -> np.ndarray:
    """Little adjoint of se_k(3): ad(xi) eta = vee([xi^, eta^])."""
    xi = np.asarray(xi, dtype=float).reshape(group_dim(k))
    n = group_dim(k)
    A = np.zeros((n, n))
    W = skew(xi[:3])
    for blk in range(3 + k):
        A[3 * blk : 3 * blk + 3, 3 * blk : 3 * blk + 3] = W
    A[3:6, :3] = skew(xi[3:6])
    A[6:9, :3] = skew(xi[6:9])
    for j in range(k):
        A[9 + 3 * j : 12 + 3 * j, :3] = skew(xi[9 + 3 * j : 12 + 3 * j])
    return A


def group_left_jacobian(xi, k: int) -> np.ndarray:
    """Left Jacobian of SE_k(3) via the (always convergent) series in ad(xi)."""
    A = group_ad(xi, k)
    n = A.shape[0]
    J = np.eye(n)
    term = np.eye(n)
    for m in range(1, 40):
        term = term @ A / (m + 1.0)
        J = J + term
        if np.abs(term).max() < 1e-16:
            break
    return J


# B_{2k}/(2k)! for the inverse-left-Jacobian series; all other odd Bernoulli
# numbers vanish, so J_l^-1(m) and J_l^-1(-m) share every even-power term
_BERNOULLI_EVEN = (
    1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0, -1.0 / 1209600.0,
    1.0 / 47900160.0, -691.0 / 1307674368000.0, 1.0 / 74724249600.0,
)


def _left_jacobian_inv_pair(xi, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(J_l^-1(m), J_l^-1(-m)) sharing one even-power Bernoulli series.

    For rotation angles above ~1 rad the truncated series loses accuracy,
    so the exact factorial-series-plus-solve route takes over.
    """
    xi = np.asarray(xi, dtype=float)
    n = group_dim(k)
    if np.linalg.norm(xi[:3]) > 1.0:
        I = np.eye(n)
        return (np.linalg.solve(group_left_jacobian(xi, k), I),
                np.linalg.solve(group_left_jacobian(-xi, k), I))
    A = group_ad(xi, k)
    even = np.eye(n)
    if np.abs(A).max() > 1e-9:
        A2 = A @ A
        term = A2
        for c in _BERNOULLI_EVEN:
            even = even + c * term
            if np.abs(term).max() * abs(c) < 1e-17:
                break
            term = term @ A2
    half = 0.5 * A
    return even - half, even + half


def group_left_jacobian_inv(xi, k: int) -> np.ndarray:
    return _left_jacobian_inv_pair(xi, k)[0]


def odot(b) -> np.ndarray:
    """Matrix of the linear map xi -> xi^ b for a homogeneous observation vector.

    For b = (b_pos, s_v, s_p, s_d1..s_dk) the position rows are
    [-(b_pos)^, s_v I, s_p I, s_d1 I, ...]; the scalar rows are zero.
    """
    b = np.asarray(b, dtype=float)
    k = b.shape[0] - 5
    if k < 0:
        raise ValueError("observation vector must have length >= 5")
    M = np.zeros((5 + k, group_dim(k)))
    M[:3, :3] = -skew(b[:3])
    M[:3, 3:6] = b[3] * np.eye(3)
    M[:3, 6:9] = b[4] * np.eye(3)
    for j in range(k):
        M[:3, 9 + 3 * j : 12 + 3 * j] = b[5 + j] * np.eye(3)
    return M


def kinematic_obs_vector(fk, k: int, slot: int) -> np.ndarray:
    """Stacked right-invariant kinematic observation [fk, 0, 1, -1_at_slot]."""
    y = np.zeros(5 + k)
    y[:3] = _as_vec3(fk)
    y[4] = 1.0
    y[5 + slot] = -1.0
    return y


def kinematic_target_vector(k: int, slot: int) -> np.ndarray:
    """Constant right-hand side [0, 0, 1, -1_at_slot] of the kinematic model."""
    b = np.zeros(5 + k)
    b[4] = 1.0
    b[5 + slot] = -1.0
    return b
