"""Fixed-lag invariant smoother: windowed MAP with invariant residuals.

Each window node holds an extended-pose/bias operating point with four
fixed contact slots (swing feet carry inflated process noise instead of
being removed, so every node shares one 27-dimensional tangent space).
Factors: a Gaussian prior on the oldest node, propagation factors built
from the discrete IMU model via the log-linear property, and per-stance
kinematic observation factors.  Gauss-Newton with step halving solves the
window; Schur-complement marginalization keeps its size fixed.

Conventions: the state retraction is X <- Exp(xi) X_bar, x <- x_bar + zeta;
factors store J = dr/de so a linearized residual is r + J e.  The printed
first-order Jacobians (I + A dt for propagation, the odot form for
observations) are recovered at consistent operating points; away from them
the exact inverse-left-Jacobian corrections keep finite-difference checks
valid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .base import TrajectoryEstimator
from .datamodel import FOOT_ORDER, EstimateRecord, SensorFrame
from .iekf import noise_covariance, propagate_mean
from .liegroups import (
    ExtendedPose,
    _left_jacobian_inv_pair,
    adjoint,
    group_dim,
    quat_to_rot,
    rot_exp,
    rot_log,
    rot_to_quat,
    skew,
    so3_left_jacobian,
    so3_left_jacobian_inv,
    tangent_dim,
)
from .synthgen import GRAVITY, NoiseSpec
from .validation import check_positive

K_SLOTS = 4
GDIM = group_dim(K_SLOTS)      # 21
NDIM = tangent_dim(K_SLOTS)    # 27


class SingularNormalEquations(RuntimeError):
    """Gauss-Newton normal matrix (or a marginal block) is not invertible."""

    def __init__(self, what: str, cond: float):
        super().__init__(f"{what} is singular or ill-conditioned "
                         f"(cond ~ {cond:.3e})")
        self.cond = cond


def scaled_spd_solve(H: np.ndarray, B: np.ndarray, what: str) -> np.ndarray:
    """Solve H X = B with Jacobi scaling; H is SPD up to unit disparities.

    The factor weights span many orders of magnitude (stiff bias random
    walks vs. loose priors), so the raw normal matrix is ill-scaled even
    though the underlying problem is fine.
    """
    d = np.sqrt(np.clip(np.diag(H), 1e-300, None))
    Hs = H / np.outer(d, d)
    vec = B.ndim == 1
    Bs = B / d if vec else B / d[:, None]
    try:
        Xs = np.linalg.solve(Hs, Bs)
        scale = max(np.abs(Bs).max(), np.abs(Xs).max(), 1e-30)
        for _ in range(2):  # iterative refinement for stiff weight spreads
            resid = Bs - Hs @ Xs
            if np.abs(resid).max() <= 1e-8 * scale:
                break
            Xs = Xs + np.linalg.solve(Hs, resid)
            scale = max(np.abs(Bs).max(), np.abs(Xs).max(), 1e-30)
    except np.linalg.LinAlgError:
        raise SingularNormalEquations(what, float(np.linalg.cond(Hs)))
    worst = np.abs(Hs @ Xs - Bs).max()
    if not np.isfinite(worst) or worst > 1e-6 * scale:
        raise SingularNormalEquations(what, float(np.linalg.cond(Hs)))
    return Xs / d if vec else Xs / d[:, None]


class PriorFactor:
    """Gaussian prior on one node: residual model r + J e, covariance sigma.

    Either the covariance or the information weight may be supplied; the
    missing one is derived (lazily for the covariance, which only tests and
    diagnostics read).
    """

    def __init__(self, r, J, sigma=None, W=None):
        self.r = np.asarray(r, dtype=float)
        self.J = np.asarray(J, dtype=float)
        self._sigma = None if sigma is None else np.asarray(sigma, dtype=float)
        if W is None:
            W = scaled_spd_solve(self._sigma, np.eye(self._sigma.shape[0]),
                                 "prior covariance")
        self.W = W

    @property
    def sigma(self) -> np.ndarray:
        if self._sigma is None:
            self._sigma = scaled_spd_solve(self.W, np.eye(self.W.shape[0]),
                                           "prior information")
        return self._sigma

    def shift(self, delta: np.ndarray) -> None:
        """Re-express the factor after its node retracts by delta.

        With X = Exp(e_old) X_bar = Exp(e_new) Exp(delta) X_bar the old
        coordinates are e_old = delta + Jl_inv(delta) e_new to first order
        in e_new (exact in delta), so both r and J transform.
        """
        self.r = self.r + self.J @ delta
        if np.abs(delta[:GDIM]).max() > 1e-12:
            Jl_inv, _ = _left_jacobian_inv_pair(delta[:GDIM], K_SLOTS)
            T = np.eye(NDIM)
            T[:GDIM, :GDIM] = Jl_inv
            self.J = self.J @ T
            self._sigma = None


class WindowNode:
    """Operating point and cached factor data for one window state.

    The pose is stored as plain arrays (R, v, p, d) for speed; `pose`
    materializes the equivalent ExtendedPose.
    """

    __slots__ = ("t", "R", "v", "p", "d", "bias", "stance", "imu",
                 "prop_sigma", "prop_W", "meas", "prop_cache", "obs_cache")

    def __init__(self, t, pose: ExtendedPose, bias, stance):
        self.t = t
        self.R = pose.R.copy()
        self.v = pose.v.copy()
        self.p = pose.p.copy()
        self.d = pose.d.copy()
        self.bias = np.asarray(bias, dtype=float).copy()
        self.stance = np.asarray(stance, dtype=bool).copy()
        self.imu = None           # (gyro, accel, dt) to the next node
        self.prop_sigma = None    # covariance of that factor
        self.prop_W = None
        self.meas = []            # (slot, fk, obs_W, obs_sigma)
        # linearization caches, invalidated whenever an operating point moves
        self.prop_cache = None
        self.obs_cache = None

    def invalidate(self) -> None:
        self.prop_cache = None
        self.obs_cache = None

    @classmethod
    def from_arrays(cls, t, R, v, p, d, bias, stance) -> "WindowNode":
        node = cls.__new__(cls)
        node.t = t
        node.R, node.v, node.p, node.d = R, v, p, d
        node.bias = bias
        node.stance = np.asarray(stance, dtype=bool)
        node.imu = None
        node.prop_sigma = None
        node.prop_W = None
        node.meas = []
        node.prop_cache = None
        node.obs_cache = None
        return node

    @property
    def pose(self) -> ExtendedPose:
        return ExtendedPose(self.R.copy(), self.v.copy(), self.p.copy(),
                            self.d.copy())

    def state_arrays(self):
        return self.R, self.v, self.p, self.d


_I3 = np.eye(3)
_I6 = np.eye(6)


_LIFT_CACHE: dict = {}


def _lift_matrix(dt: float) -> np.ndarray:
    """State-independent part of the node-t propagation Jacobian."""
    L = _LIFT_CACHE.get(dt)
    if L is None:
        L = np.eye(GDIM)
        gx = skew(GRAVITY)
        L[3:6, 0:3] = gx * dt
        L[6:9, 0:3] = 0.5 * gx * dt * dt
        L[6:9, 3:6] = _I3 * dt
        if len(_LIFT_CACHE) < 64:
            _LIFT_CACHE[dt] = L
    return L


def _propagate_arrays(R, v, p, bias, gyro, accel, dt):
    """Discrete mean propagation on raw arrays; d is constant."""
    w = gyro - bias[:3]
    a = accel - bias[3:]
    acc_w = R @ a + GRAVITY
    R2 = R @ rot_exp(w * dt)
    v2 = v + acc_w * dt
    p2 = p + v * dt + 0.5 * acc_w * dt * dt
    return R2, v2, p2


def propagation_error(node_t: WindowNode, node_t1: WindowNode):
    """Residual of the discrete-dynamics factor (no Jacobians)."""
    gyro, accel, dt = node_t.imu
    b_t = node_t.bias
    FR, Fv, Fp = _propagate_arrays(node_t.R, node_t.v, node_t.p, b_t,
                                   gyro, accel, dt)
    Fd = node_t.d
    # M = F X_{t+1}^-1 without intermediate group objects
    MR = FR @ node_t1.R.T
    m = np.empty(GDIM)
    m[:3] = rot_log(MR)
    Jinv = so3_left_jacobian_inv(m[:3])
    m[3:6] = Jinv @ (Fv - MR @ node_t1.v)
    m[6:9] = Jinv @ (Fp - MR @ node_t1.p)
    m[9:] = ((Fd - node_t1.d @ MR.T) @ Jinv.T).ravel()
    r = np.empty(NDIM)
    r[:GDIM] = m
    r[GDIM:] = b_t - node_t1.bias
    return r, (FR, Fv, Fp, Fd), m


def _propagation_factor(node_t: WindowNode, node_t1: WindowNode):
    """(r, J_t, J_t1_or_None): J_t1 is None when it equals -I exactly
    (consistent operating points), letting the assembly skip products."""
    gyro, accel, dt = node_t.imu
    b_t = node_t.bias
    r, (FR, Fv, Fp, Fd), m = propagation_error(node_t, node_t1)

    L = _lift_matrix(dt)
    u = gyro - b_t[:3]
    W_col = node_t.R @ so3_left_jacobian(u * dt) * dt
    N = np.zeros((GDIM, 6))
    N[0:3, 0:3] = -W_col
    N[3:6, 0:3] = -skew(Fv) @ W_col
    N[3:6, 3:6] = -node_t.R * dt
    N[6:9, 0:3] = -skew(Fp) @ W_col
    N[6:9, 3:6] = -0.5 * node_t.R * dt * dt
    for j in range(K_SLOTS):
        N[9 + 3 * j: 12 + 3 * j, 0:3] = -skew(node_t.d[j]) @ W_col

    J_t = np.zeros((NDIM, NDIM))
    if np.abs(m).max() < 1e-9:
        # consistent window: the inverse left Jacobians are identities
        J_t[:GDIM, :GDIM] = L
        J_t[:GDIM, GDIM:] = N
        J_t[GDIM:, GDIM:] = _I6
        return r, J_t, None
    Jl_inv, Jr_inv = _left_jacobian_inv_pair(m, K_SLOTS)
    J_t[:GDIM, :GDIM] = Jl_inv @ L
    J_t[:GDIM, GDIM:] = Jl_inv @ N
    J_t[GDIM:, GDIM:] = _I6
    J_t1 = np.zeros((NDIM, NDIM))
    J_t1[:GDIM, :GDIM] = -Jr_inv
    J_t1[GDIM:, GDIM:] = -_I6
    return r, J_t, J_t1


def propagation_residual(node_t: WindowNode, node_t1: WindowNode):
    """Residual and exact Jacobians of the discrete-dynamics factor.

    Returns (r, J_t, J_t1) with r = [Log(f(X_t) X_{t+1}^-1); b_t - b_{t+1}]
    and J = dr/de for the retraction X <- Exp(e) X_bar.
    """
    check_positive(node_t.imu[2], "dt")
    r, J_t, J_t1 = _propagation_factor(node_t, node_t1)
    if J_t1 is None:
        J_t1 = -np.eye(NDIM)
    return r, J_t, J_t1


def propagation_covariance(node_t: WindowNode, noise: NoiseSpec,
                           sigma_contact_swing: float,
                           sigma_pos_floor: float) -> np.ndarray:
    """Sigma_pro = B Cov(w) B^T at the node-t operating point.

    Swing slots get the inflated contact walk; a small independent position
    density keeps the (otherwise accel-correlated, rank-deficient) position
    rows invertible.
    """
    _, _, dt = node_t.imu
    contact_sigmas = [noise.sigma_contact if node_t.stance[j]
                      else sigma_contact_swing for j in range(K_SLOTS)]
    Q = noise_covariance(noise, K_SLOTS, dt, contact_sigmas)
    Q[6:9, 6:9] += sigma_pos_floor**2 / dt * np.eye(3)
    B = np.zeros((NDIM, NDIM))
    B[:GDIM, :GDIM] = adjoint(node_t.pose) * dt
    B[GDIM:, GDIM:] = _I6 * dt
    return B @ Q @ B.T


def observation_error(node: WindowNode, slot: int, fk) -> np.ndarray:
    """Position rows of X Y - b, i.e. R fk + p - d_slot."""
    return node.R @ fk + node.p - node.d[slot]


def observation_residual(node: WindowNode, slot: int, fk):
    """Kinematic factor restricted to its informative position rows.

    r = Pi (X Y - b), J = Pi odot(X Y); at a consistent operating point the
    position rows of dr/de carry +I on xi_p and -I on the contact slot (the
    stacked observation keeps its (0, 1, -1) scalar tail under the group
    action, so only the -(X Y)^ rotation columns vary with the state).
    """
    if not node.stance[slot]:
        raise ValueError(f"observation for inactive contact slot {slot}")
    r = observation_error(node, slot, fk)
    J = np.zeros((3, NDIM))
    J[:, 0:3] = -skew(r)  # = -skew(position rows of X Y), b is zero there
    J[:, 6:9] = _I3
    J[:, 9 + 3 * slot: 12 + 3 * slot] = -_I3
    return r, J


def observation_covariance(node: WindowNode, cov: np.ndarray) -> np.ndarray:
    """Congruence transform of the lifted kinematic covariance: R N R^T."""
    return node.R @ cov @ node.R.T


def _adjoint_inverse_arrays(R, v, p, d) -> np.ndarray:
    """Adjoint of the inverse pose, assembled from raw arrays."""
    A = np.zeros((GDIM, GDIM))
    Rt = R.T
    A[0:3, 0:3] = Rt
    A[3:6, 3:6] = Rt
    A[6:9, 6:9] = Rt
    A[3:6, 0:3] = -Rt @ skew(v)
    A[6:9, 0:3] = -Rt @ skew(p)
    for j in range(K_SLOTS):
        s = 9 + 3 * j
        A[s:s + 3, s:s + 3] = Rt
        A[s:s + 3, 0:3] = -Rt @ skew(d[j])
    return A


class _PropagationNoise:
    """Per-factor information weight W = B^-T Q^-1 B^-1.

    Q^-1 is cached per (dt, stance pattern); only the pose-dependent inverse
    adjoint is rebuilt per factor.
    """

    def __init__(self, noise: NoiseSpec, sigma_contact_swing: float,
                 sigma_pos_floor: float):
        self.noise = noise
        self.swing = sigma_contact_swing
        self.pos_floor = sigma_pos_floor
        self._qinv = {}

    def _q_inverse(self, dt: float, stance) -> np.ndarray:
        key = (dt, tuple(bool(s) for s in stance))
        Qi = self._qinv.get(key)
        if Qi is None:
            contact = [self.noise.sigma_contact if s else self.swing
                       for s in stance]
            Q = noise_covariance(self.noise, K_SLOTS, dt, contact)
            Q[6:9, 6:9] += self.pos_floor**2 / dt * _I3
            Qi = scaled_spd_solve(Q, np.eye(NDIM), "propagation noise")
            if len(self._qinv) < 256:
                self._qinv[key] = Qi
        return Qi

    def weight(self, node: WindowNode) -> np.ndarray:
        dt = node.imu[2]
        Qi = self._q_inverse(dt, node.stance)
        Binv = np.zeros((NDIM, NDIM))
        Binv[:GDIM, :GDIM] = _adjoint_inverse_arrays(node.R, node.v, node.p,
                                                     node.d) / dt
        Binv[GDIM:, GDIM:] = _I6 / dt
        return Binv.T @ Qi @ Binv


def _prop_blocks(node_t: WindowNode, node_t1: WindowNode):
    """Weighted normal-equation blocks of one propagation factor.

    Asymmetric Hab/Hba collapse to a transpose pair because the weight is
    symmetric; J_t1 = -I in the consistent case avoids three products.
    """
    r, J_t, J_t1 = _propagation_factor(node_t, node_t1)
    W = node_t.prop_W
    Wr = W @ r
    cost = float(r @ Wr)
    JtW = J_t.T @ W
    Haa = JtW @ J_t
    ga = JtW @ r
    if J_t1 is None:
        return Haa, -JtW, W, ga, -Wr, cost
    Jt1W = J_t1.T @ W
    return Haa, JtW @ J_t1, Jt1W @ J_t1, ga, Jt1W @ r, cost


def _obs_blocks(node: WindowNode):
    """Weighted normal-equation blocks of all kinematic factors on a node."""
    Haa = np.zeros((NDIM, NDIM))
    ga = np.zeros(NDIM)
    cost = 0.0
    for slot, fk, W, _sigma in node.meas:
        r, J = observation_residual(node, slot, fk)
        Wr = W @ r
        cost += float(r @ Wr)
        JW = J.T @ W
        Haa += JW @ J
        ga += JW @ r
    return Haa, ga, cost


def schur_marginalize(H: np.ndarray, g: np.ndarray, n_drop: int):
    """Marginalize the leading n_drop coordinates of a quadratic 1/2 e'He + g'e."""
    H00 = H[:n_drop, :n_drop]
    H01 = H[:n_drop, n_drop:]
    H11 = H[n_drop:, n_drop:]
    g0 = g[:n_drop]
    g1 = g[n_drop:]
    sol = scaled_spd_solve(H00, np.hstack([H01, g0[:, None]]),
                           "marginal block")
    H_m = H11 - H01.T @ sol[:, :-1]
    g_m = g1 - H01.T @ sol[:, -1]
    return 0.5 * (H_m + H_m.T), g_m


@dataclass
class SmootherConfig:
    window_size: int = 3
    max_iterations: int = 5
    tolerance: float = 1e-6
    step_halvings: int = 4

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window size must be >= 1")


class SlidingWindow:
    """Nodes, factors and the Gauss-Newton machinery."""

    def __init__(self, config: SmootherConfig, noise: NoiseSpec,
                 sigma_contact_swing: float, sigma_pos_floor: float):
        self.config = config
        self.noise = noise
        self.sigma_contact_swing = sigma_contact_swing
        self.sigma_pos_floor = sigma_pos_floor
        self.prop_noise = _PropagationNoise(noise, sigma_contact_swing,
                                            sigma_pos_floor)
        self.nodes: list[WindowNode] = []
        self.prior: PriorFactor | None = None
        self.last_costs: list[float] = []

    # -- factor assembly ---------------------------------------------------

    def _assemble(self):
        n = len(self.nodes)
        dim = n * NDIM
        H = np.zeros((dim, dim))
        g = np.zeros(dim)
        cost = 0.0

        pr = self.prior
        cost += float(pr.r @ pr.W @ pr.r)
        JW = pr.J.T @ pr.W
        H[:NDIM, :NDIM] += JW @ pr.J
        g[:NDIM] += JW @ pr.r

        for i in range(n - 1):
            node = self.nodes[i]
            blocks = node.prop_cache
            if blocks is None:
                blocks = _prop_blocks(node, self.nodes[i + 1])
                node.prop_cache = blocks
            Haa, Hab, Hbb, ga, gb, c = blocks
            cost += c
            a = i * NDIM
            b = (i + 1) * NDIM
            H[a:a + NDIM, a:a + NDIM] += Haa
            H[a:a + NDIM, b:b + NDIM] += Hab
            H[b:b + NDIM, a:a + NDIM] += Hab.T
            H[b:b + NDIM, b:b + NDIM] += Hbb
            g[a:a + NDIM] += ga
            g[b:b + NDIM] += gb

        for i, node in enumerate(self.nodes):
            if not node.meas:
                continue
            blocks = node.obs_cache
            if blocks is None:
                blocks = _obs_blocks(node)
                node.obs_cache = blocks
            Haa, ga, c = blocks
            cost += c
            a = i * NDIM
            H[a:a + NDIM, a:a + NDIM] += Haa
            g[a:a + NDIM] += ga
        return H, g, cost

    def _cost(self) -> float:
        """Total weighted squared residual at the current operating points."""
        pr = self.prior
        cost = float(pr.r @ pr.W @ pr.r)
        for i in range(len(self.nodes) - 1):
            node = self.nodes[i]
            if node.prop_cache is not None:
                cost += node.prop_cache[5]
                continue
            r, _, _ = propagation_error(node, self.nodes[i + 1])
            cost += float(r @ node.prop_W @ r)
        for node in self.nodes:
            if node.obs_cache is not None:
                cost += node.obs_cache[2]
                continue
            for slot, fk, W, _sigma in node.meas:
                r = observation_error(node, slot, fk)
                cost += float(r @ W @ r)
        return cost

    def _apply(self, delta: np.ndarray) -> None:
        nodes = self.nodes
        for i, node in enumerate(nodes):
            d = delta[i * NDIM:(i + 1) * NDIM]
            # tiny retractions neither move the state meaningfully nor
            # justify relinearizing the node's cached factors
            if np.abs(d).max() < 2e-8:
                continue
            E = rot_exp(d[:3])
            J = so3_left_jacobian(d[:3])
            node.v = E @ node.v + J @ d[3:6]
            node.p = E @ node.p + J @ d[6:9]
            node.d = node.d @ E.T + d[9:GDIM].reshape(K_SLOTS, 3) @ J.T
            node.R = E @ node.R
            node.bias = node.bias + d[GDIM:]
            node.invalidate()
            if i > 0:
                nodes[i - 1].prop_cache = None
        self.prior.shift(delta[:NDIM])

    def _snapshot(self):
        return ([(n.R.copy(), n.v.copy(), n.p.copy(), n.d.copy(),
                  n.bias.copy()) for n in self.nodes], self.prior.r.copy(),
                self.prior.J.copy())

    def _restore(self, snap) -> None:
        states, prior_r, prior_J = snap
        for node, (R, v, p, d, bias) in zip(self.nodes, states):
            node.R, node.v, node.p, node.d, node.bias = R, v, p, d, bias
            node.invalidate()
        if len(self.nodes) > 1:
            self.nodes[0].prop_cache = None
        self.prior.r = prior_r
        self.prior.J = prior_J

    def solve(self) -> None:
        """Gauss-Newton with increment-norm stopping and step halving."""
        cfg = self.config
        self.last_costs = []
        for _ in range(cfg.max_iterations):
            H, g, cost = self._assemble()
            if not self.last_costs:
                self.last_costs.append(cost)
            delta = scaled_spd_solve(H, -g, "normal matrix")
            nd = np.linalg.norm(delta)
            if nd < cfg.tolerance:
                # converged: the increment is within tolerance already
                if nd > 1e-13:
                    self._apply(delta)
                break
            snap = self._snapshot()
            scale = 1.0
            accepted = False
            for _ in range(cfg.step_halvings + 1):
                self._apply(delta * scale)
                new_cost = self._cost()
                if new_cost <= cost * (1.0 + 1e-12) or cost == 0.0:
                    accepted = True
                    break
                self._restore(snap)
                scale *= 0.5
            if not accepted:
                break
            self.last_costs.append(new_cost)
            if np.linalg.norm(delta * scale) < cfg.tolerance:
                break

    def marginalize_oldest(self) -> None:
        """Schur-complement the oldest node's factors onto its successor."""
        if len(self.nodes) < 2:
            raise ValueError("need at least two nodes to marginalize")
        old = self.nodes[0]
        nxt = self.nodes[1]
        dim = 2 * NDIM
        H = np.zeros((dim, dim))
        g = np.zeros(dim)

        pr = self.prior
        JW = pr.J.T @ pr.W
        H[:NDIM, :NDIM] += JW @ pr.J
        g[:NDIM] += JW @ pr.r

        blocks = old.prop_cache or _prop_blocks(old, nxt)
        Haa, Hab, Hbb, ga, gb, _c = blocks
        H[:NDIM, :NDIM] += Haa
        H[:NDIM, NDIM:] += Hab
        H[NDIM:, :NDIM] += Hab.T
        H[NDIM:, NDIM:] += Hbb
        g[:NDIM] += ga
        g[NDIM:] += gb

        if old.meas:
            oHaa, oga, _c = old.obs_cache or _obs_blocks(old)
            H[:NDIM, :NDIM] += oHaa
            g[:NDIM] += oga

        H_m, g_m = schur_marginalize(H, g, NDIM)
        r_new = scaled_spd_solve(H_m, g_m, "marginal information")
        self.prior = PriorFactor(r=r_new, J=np.eye(NDIM), sigma=None, W=H_m)
        self.nodes.pop(0)

    def information(self) -> np.ndarray:
        """Joint information matrix of the current window (diagnostics)."""
        H, _, _ = self._assemble()
        return H

    def posterior_covariance(self) -> np.ndarray:
        H, _, _ = self._assemble()
        return scaled_spd_solve(H, np.eye(H.shape[0]), "window information")


class SmootherEstimator(TrajectoryEstimator):
    """Fixed-lag invariant smoother emitting the newest (real-time) node.

    Parameters
    ----------
    window_size : number of retained states (WS).
    max_iterations, tolerance : Gauss-Newton controls.
    sigma_contact_swing : contact random-walk density for swing slots.
    sigma_pos_floor : independent position noise density keeping the
        propagation covariance invertible.
    """

    def __init__(self, window_size=3, noise=None, max_iterations=5,
                 tolerance=1e-6, sigma_contact_swing=1.0,
                 sigma_pos_floor=1e-4,
                 init_position=(0.0, 0.0, 0.0), init_velocity=(0.0, 0.0, 0.0),
                 init_quaternion=(0.0, 0.0, 0.0, 1.0),
                 init_att_std=0.1, init_vel_std=0.1, init_pos_std=0.1,
                 init_contact_std=0.1, init_bias_gyro_std=0.01,
                 init_bias_accel_std=0.1):
        self.window_size = window_size
        self.noise = noise
        self.max_iterations = max_iterations
        self.tolerance = tolerance
        self.sigma_contact_swing = sigma_contact_swing
        self.sigma_pos_floor = sigma_pos_floor
        self.init_position = init_position
        self.init_velocity = init_velocity
        self.init_quaternion = init_quaternion
        self.init_att_std = init_att_std
        self.init_vel_std = init_vel_std
        self.init_pos_std = init_pos_std
        self.init_contact_std = init_contact_std
        self.init_bias_gyro_std = init_bias_gyro_std
        self.init_bias_accel_std = init_bias_accel_std

    # noise floors keep zero-noise configurations solvable; the bias-walk
    # floors bound the stiffness of the consecutive-node equality so the
    # weakly-anchored common mode survives in float64
    _FLOORS = dict(sigma_gyro=1e-4, sigma_accel=1e-3, sigma_gyro_bias=1e-4,
                   sigma_accel_bias=1e-4, sigma_contact=1e-4, sigma_kin=1e-4)

    def _floored_noise(self) -> NoiseSpec:
        base = self.noise or NoiseSpec()
        return replace(base, **{k: max(getattr(base, k), v)
                                for k, v in self._FLOORS.items()})

    def reset(self, first_frame: SensorFrame | None = None) -> None:
        self.noise_ = self._floored_noise()
        cfg = SmootherConfig(window_size=self.window_size,
                             max_iterations=self.max_iterations,
                             tolerance=self.tolerance)
        self.window_ = SlidingWindow(cfg, self.noise_,
                                     self.sigma_contact_swing,
                                     self.sigma_pos_floor)
        self.t_prev_ = None

    def _node_measurements(self, frame: SensorFrame, node: WindowNode) -> None:
        var_kin = self.noise_.sigma_kin**2
        iso_W = np.eye(3) / var_kin
        iso_sigma = np.eye(3) * var_kin
        for slot, foot in enumerate(FOOT_ORDER):
            if not frame.contacts.flags[slot]:
                continue
            kin = frame.foot_kinematics(foot)
            if kin is None:
                continue
            if kin.cov is None:
                # isotropic default: R sigma^2 I R^T = sigma^2 I
                node.meas.append((slot, kin.fk, iso_W, iso_sigma))
            else:
                sigma = observation_covariance(node, kin.cov)
                W = np.linalg.solve(sigma, np.eye(3))
                node.meas.append((slot, kin.fk, W, sigma))

    def _initial_node(self, frame: SensorFrame) -> WindowNode:
        R0 = quat_to_rot(self.init_quaternion)
        p0 = np.asarray(self.init_position, dtype=float)
        v0 = np.asarray(self.init_velocity, dtype=float)
        d = np.zeros((K_SLOTS, 3))
        for slot, foot in enumerate(FOOT_ORDER):
            kin = frame.foot_kinematics(foot)
            fk = kin.fk if kin is not None else np.zeros(3)
            d[slot] = p0 + R0 @ fk
        pose = ExtendedPose(R0, v0, p0, d)
        return WindowNode(t=frame.t, pose=pose, bias=np.zeros(6),
                          stance=frame.contacts.flags.copy())

    def step(self, frame: SensorFrame) -> EstimateRecord:
        win = self.window_
        if self.t_prev_ is None:
            node = self._initial_node(frame)
            self._node_measurements(frame, node)
            win.nodes.append(node)
            sigma0 = np.diag(
                [self.init_att_std**2] * 3 + [self.init_vel_std**2] * 3
                + [self.init_pos_std**2] * 3
                + [self.init_contact_std**2] * (3 * K_SLOTS)
                + [self.init_bias_gyro_std**2] * 3
                + [self.init_bias_accel_std**2] * 3).astype(float)
            win.prior = PriorFactor(r=np.zeros(NDIM), J=np.eye(NDIM),
                                    sigma=sigma0)
        else:
            dt = frame.t - self.t_prev_
            check_positive(dt, "dt")
            last = win.nodes[-1]
            last.imu = (frame.imu.gyro.copy(), frame.imu.accel.copy(), dt)
            last.prop_W = win.prop_noise.weight(last)
            R2, v2, p2 = _propagate_arrays(last.R, last.v, last.p, last.bias,
                                           frame.imu.gyro, frame.imu.accel, dt)
            # touch-down: re-anchor the slot operating point at the new
            # kinematic position (the weak swing factor permits the jump)
            d = last.d.copy()
            for slot, foot in enumerate(FOOT_ORDER):
                if frame.contacts.flags[slot] and not last.stance[slot]:
                    kin = frame.foot_kinematics(foot)
                    if kin is not None:
                        d[slot] = p2 + R2 @ kin.fk
            node = WindowNode.from_arrays(frame.t, R2, v2, p2, d,
                                          last.bias.copy(),
                                          frame.contacts.flags.copy())
            self._node_measurements(frame, node)
            win.nodes.append(node)
        self.t_prev_ = frame.t

        win.solve()
        if len(win.nodes) > self.window_size:
            win.marginalize_oldest()
        newest = win.nodes[-1]
        return EstimateRecord(t=frame.t, p=newest.p.copy(),
                              q=rot_to_quat(newest.R),
                              v=newest.v.copy())
