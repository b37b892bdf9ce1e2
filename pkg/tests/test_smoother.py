import numpy as np
import pytest

from propriobench import smoother as sm
from propriobench import synthgen as sg
from propriobench.iekf import IekfEstimator
from propriobench.liegroups import (
    ExtendedPose,
    rot_exp,
    so3_left_jacobian,
    state_exp,
)
from propriobench.metrics import evaluate

from conftest import make_dataset


def ie_step(estimator, frame):
    """Advance a warm IEKF estimator by one frame."""
    return estimator.step(frame)

DT = 0.0025
K = sm.K_SLOTS
G = sm.GDIM
N = sm.NDIM


def make_node(rng, t=0.0, scale=0.4, stance=None, imu=None):
    X, _ = state_exp(rng.standard_normal(N) * scale, K)
    node = sm.WindowNode(t, X, rng.standard_normal(6) * 0.05,
                         stance if stance is not None else np.ones(K, bool))
    if imu is not None:
        node.imu = imu
    return node


def retract(node, e):
    out = sm.WindowNode(node.t, node.pose, node.bias, node.stance)
    out.imu = node.imu
    out.prop_W = node.prop_W
    out.meas = list(node.meas)
    E = rot_exp(e[:3])
    J = so3_left_jacobian(e[:3])
    out.v = E @ node.v + J @ e[3:6]
    out.p = E @ node.p + J @ e[6:9]
    out.d = node.d @ E.T + e[9:G].reshape(K, 3) @ J.T
    out.R = E @ node.R
    out.bias = node.bias + e[G:]
    return out


def consistent_pair(rng, dt=DT):
    node_t = make_node(rng)
    gyro = rng.standard_normal(3) * 0.5
    accel = rng.standard_normal(3) + np.array([0, 0, 9.8])
    node_t.imu = (gyro, accel, dt)
    FR, Fv, Fp = sm._propagate_arrays(node_t.R, node_t.v, node_t.p,
                                      node_t.bias, gyro, accel, dt)
    nxt = sm.WindowNode(node_t.t + dt,
                        ExtendedPose(FR, Fv, Fp, node_t.d.copy()),
                        node_t.bias.copy(), node_t.stance)
    return node_t, nxt


class TestPropagationResidual:
    def test_zero_on_consistent_nodes(self, rng):
        node_t, nxt = consistent_pair(rng)
        r, _, _ = sm.propagation_residual(node_t, nxt)
        assert np.abs(r).max() < 1e-12

    def test_printed_jacobians_at_consistency(self, rng):
        # J_t reduces to the I + A dt structure, J_t1 to -I
        node_t, nxt = consistent_pair(rng)
        r, J_t, J_t1 = sm.propagation_residual(node_t, nxt)
        assert np.abs(J_t1 + np.eye(N)).max() < 1e-12
        gx = J_t[3:6, 0:3]
        assert np.abs(gx - sm.skew(sg.GRAVITY) * DT).max() < 1e-12
        assert np.abs(J_t[6:9, 3:6] - np.eye(3) * DT).max() < 1e-12
        # bias columns follow -R dt and -(x)^ R dt to O(dt^2)
        assert np.abs(J_t[0:3, G:G + 3] + node_t.R * DT).max() < 1e-5

    def test_jacobians_match_finite_differences(self, rng):
        eps = 1e-6
        for _ in range(25):
            node_t = make_node(rng)
            node_t.imu = (rng.standard_normal(3) * 0.5,
                          rng.standard_normal(3) * 2 + np.array([0, 0, 9.8]),
                          DT)
            nxt = make_node(rng, t=DT)
            r0, J_t, J_t1 = sm.propagation_residual(node_t, nxt)
            scale = max(np.abs(r0).max(), 1.0)
            for col in range(N):
                e = np.zeros(N)
                e[col] = eps
                rp, _, _ = sm.propagation_error(retract(node_t, e), nxt)
                rm, _, _ = sm.propagation_error(retract(node_t, -e), nxt)
                fd = (rp - rm) / (2 * eps)
                assert np.abs(fd - J_t[:, col]).max() < 1e-5 * scale
                rp, _, _ = sm.propagation_error(node_t, retract(nxt, e))
                rm, _, _ = sm.propagation_error(node_t, retract(nxt, -e))
                fd = (rp - rm) / (2 * eps)
                assert np.abs(fd - J_t1[:, col]).max() < 1e-5 * scale

    def test_covariance_psd(self, rng):
        for _ in range(10):
            node_t, _ = consistent_pair(rng)
            node_t.stance = np.array([True, False, True, False])
            sigma = sm.propagation_covariance(node_t, sg.NoiseSpec(), 1.0, 1e-4)
            w = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
            assert w.min() > -1e-12 * w.max()

    def test_weight_is_covariance_inverse(self, rng):
        node_t, _ = consistent_pair(rng)
        helper = sm._PropagationNoise(sg.NoiseSpec(), 1.0, 1e-4)
        W = helper.weight(node_t)
        sigma = sm.propagation_covariance(node_t, sg.NoiseSpec(), 1.0, 1e-4)
        assert np.abs(W @ sigma - np.eye(N)).max() < 1e-6

    def test_dt_rejected(self, rng):
        node_t, nxt = consistent_pair(rng)
        node_t.imu = (node_t.imu[0], node_t.imu[1], 0.0)
        with pytest.raises(ValueError):
            sm.propagation_residual(node_t, nxt)


class TestObservationResidual:
    def test_zero_on_consistent_measurement(self, rng):
        node = make_node(rng)
        slot = 2
        fk = node.R.T @ (node.d[slot] - node.p)
        r, J = sm.observation_residual(node, slot, fk)
        assert np.abs(r).max() < 1e-12
        # position rows: +I on xi_p, -I on the contact slot (dr/de form)
        assert np.abs(J[:, 6:9] - np.eye(3)).max() < 1e-12
        assert np.abs(J[:, 9 + 3 * slot:12 + 3 * slot] + np.eye(3)).max() < 1e-12

    def test_jacobian_matches_finite_differences(self, rng):
        eps = 1e-6
        for _ in range(25):
            node = make_node(rng)
            fk = rng.standard_normal(3)
            r0, J = sm.observation_residual(node, 1, fk)
            scale = max(np.abs(r0).max(), 1.0)
            for col in range(N):
                e = np.zeros(N)
                e[col] = eps
                rp = sm.observation_error(retract(node, e), 1, fk)
                rm = sm.observation_error(retract(node, -e), 1, fk)
                fd = (rp - rm) / (2 * eps)
                assert np.abs(fd - J[:, col]).max() < 1e-5 * scale

    def test_inactive_slot_rejected(self, rng):
        node = make_node(rng, stance=np.array([True, False, True, True]))
        with pytest.raises(ValueError):
            sm.observation_residual(node, 1, np.zeros(3))

    def test_covariance_congruence(self, rng):
        node = make_node(rng)
        A = rng.standard_normal((3, 3))
        cov = A @ A.T
        sigma = sm.observation_covariance(node, cov)
        assert np.abs(sigma - node.R @ cov @ node.R.T).max() < 1e-12


def build_window(estimator, frames):
    estimator.reset(frames[0])
    for f in frames:
        estimator.step(f)
    return estimator.window_


class TestGaussNewton:
    def make_window(self, rng, n_nodes=3):
        noise = sg.NoiseSpec()
        win = sm.SlidingWindow(sm.SmootherConfig(window_size=n_nodes + 1),
                               noise, 1.0, 1e-4)
        nodes = []
        node = make_node(rng, scale=0.2)
        for i in range(n_nodes):
            gyro = rng.standard_normal(3) * 0.2
            accel = rng.standard_normal(3) + np.array([0, 0, 9.8])
            node.imu = (gyro, accel, DT)
            node.prop_W = win.prop_noise.weight(node)
            nodes.append(node)
            FR, Fv, Fp = sm._propagate_arrays(node.R, node.v, node.p,
                                              node.bias, gyro, accel, DT)
            node = sm.WindowNode(node.t + DT,
                                 ExtendedPose(FR, Fv, Fp, node.d.copy()),
                                 node.bias.copy(), node.stance)
        nodes.append(node)
        for nd in nodes:
            for slot in range(K):
                fk = nd.R.T @ (nd.d[slot] - nd.p)
                nd.meas.append((slot, fk, np.eye(3) / 1e-6, np.eye(3) * 1e-6))
        win.nodes = nodes
        win.prior = sm.PriorFactor(r=np.zeros(N), J=np.eye(N),
                                   sigma=np.eye(N) * 0.01)
        return win

    def test_consistent_window_zero_increment(self, rng):
        win = self.make_window(rng)
        win.solve()
        # all residuals are zero: a single iteration with a ~zero increment
        assert len(win.last_costs) == 1
        assert win.last_costs[0] < 1e-12

    def test_perturbation_recovered(self, rng):
        win = self.make_window(rng)
        ref = [(nd.R.copy(), nd.v.copy(), nd.p.copy(), nd.d.copy(),
                nd.bias.copy()) for nd in win.nodes]
        # perturb the middle node only
        e = np.zeros(N)
        e[:9] = rng.standard_normal(9) * 1e-4
        win.nodes[2] = retract(win.nodes[2], e)
        win.nodes[1].prop_cache = None
        win.solve()
        for nd, (R, v, p, d, b) in zip(win.nodes, ref):
            assert np.abs(nd.p - p).max() < 1e-8
            assert np.abs(nd.v - v).max() < 1e-8
            assert np.abs(nd.R - R).max() < 1e-8

    def test_cost_non_increasing(self, rng):
        ds = make_dataset("circle", 0.5, sg.NoiseSpec())
        est = sm.SmootherEstimator(window_size=3, noise=sg.NoiseSpec(),
                                   init_velocity=(0.5, 0, 0))
        est.reset()
        for f in ds.frames():
            est.step(f)
            costs = est.window_.last_costs
            assert all(b <= a * (1 + 1e-9) for a, b in zip(costs, costs[1:]))

    def test_single_node_window_prior_plus_consistent_obs(self, rng):
        noise = sg.NoiseSpec()
        win = sm.SlidingWindow(sm.SmootherConfig(window_size=1), noise,
                               1.0, 1e-4)
        node = make_node(rng, scale=0.2)
        for slot in range(K):
            fk = node.R.T @ (node.d[slot] - node.p)
            node.meas.append((slot, fk, np.eye(3) / 1e-6, np.eye(3) * 1e-6))
        before = (node.R.copy(), node.v.copy(), node.p.copy())
        win.nodes = [node]
        win.prior = sm.PriorFactor(r=np.zeros(N), J=np.eye(N),
                                   sigma=np.eye(N) * 0.01)
        win.solve()
        assert np.abs(win.nodes[0].R - before[0]).max() < 1e-10
        assert np.abs(win.nodes[0].p - before[2]).max() < 1e-10


class TestMarginalization:
    def test_window_length_after_call(self):
        ds = make_dataset("rest", 0.1, sg.NoiseSpec.zero(), rate=400.0)
        est = sm.SmootherEstimator(window_size=3, noise=sg.NoiseSpec.zero())
        est.reset()
        for f in ds.frames():
            est.step(f)
            assert len(est.window_.nodes) <= 3

    def test_independent_block_leaves_prior(self, rng):
        # marginalizing a statistically independent node must not change
        # the information on the survivor
        H = np.zeros((2 * N, 2 * N))
        A = rng.standard_normal((N, N))
        B = rng.standard_normal((N, N))
        H[:N, :N] = A @ A.T + np.eye(N)
        H[N:, N:] = B @ B.T + np.eye(N)
        g = rng.standard_normal(2 * N)
        H_m, g_m = sm.schur_marginalize(H, g, N)
        assert np.abs(H_m - H[N:, N:]).max() < 1e-10
        assert np.abs(g_m - g[N:]).max() < 1e-10

    def test_matches_dense_linear_solve(self, rng):
        # randomized linear-Gaussian chains: the fixed-lag prior after the
        # Schur complement reproduces the dense batch posterior
        for _ in range(10):
            n = 4 * 7
            blocks = 4
            A = rng.standard_normal((n, n))
            H = A @ A.T + np.eye(n) * n
            g = rng.standard_normal(n)
            # dense solution and covariance of the tail after dropping one block
            e_dense = np.linalg.solve(H, -g)
            cov_dense = np.linalg.inv(H)
            H_m, g_m = sm.schur_marginalize(H, g, 7)
            e_marg = np.linalg.solve(H_m, -g_m)
            assert np.abs(e_marg - e_dense[7:]).max() < 1e-8
            cov_marg = np.linalg.inv(H_m)
            assert np.abs(cov_marg - cov_dense[7:, 7:]).max() < 1e-8

    def test_prior_covariance_exposed(self, rng):
        ds = make_dataset("rest", 0.05, sg.NoiseSpec(), rate=400.0)
        est = sm.SmootherEstimator(window_size=2, noise=sg.NoiseSpec())
        est.reset()
        for f in ds.frames():
            est.step(f)
        prior = est.window_.prior
        assert np.abs(prior.sigma @ prior.W - np.eye(N)).max() < 1e-6


class TestEstimator:
    def test_noiseless_line(self, noiseless_line):
        est = sm.SmootherEstimator(window_size=3, noise=sg.NoiseSpec.zero(),
                                   init_velocity=(0.5, 0, 0))
        rep = evaluate(est.transform(noiseless_line.frames()),
                       noiseless_line.groundtruth)
        assert rep.ate_m < 1e-3
        assert rep.ate_vel_mps < 1e-3

    def test_window_size_consistency(self):
        # WS=n and WS=n+5 newest-node estimates agree on noiseless data
        ds = make_dataset("circle", 2.0, sg.NoiseSpec.zero())
        outs = {}
        for ws in (2, 7):
            est = sm.SmootherEstimator(window_size=ws,
                                       noise=sg.NoiseSpec.zero(),
                                       init_velocity=(0.5, 0, 0))
            outs[ws] = est.transform(ds.frames())
        for a, b in zip(outs[2], outs[7]):
            assert np.linalg.norm(a.p - b.p) < 1e-3

    def test_ws1_matches_iekf_single_step(self):
        # one linear-regime step from an identical belief: the WS=1 MAP and
        # the filter posterior coincide to first order (1e-6 absolute)
        matched = sg.NoiseSpec(1e-4, 1e-3, 1e-4, 1e-4, 1e-4, 1e-4, 0.0,
                               (0, 0, 0), (0, 0, 0), 0)
        # fine dt: the filter's first-order covariance transition and the
        # smoother's exact factor Jacobians differ at O(dt^2)
        ds = make_dataset("rest", 0.02, matched, rate=2000.0,
                          gait=sg.GaitSpec.standing())
        frames = ds.frames()
        # small uncertainties keep the exact observation Jacobian's rotation
        # coupling (absent from the filter's consistency-point H) negligible
        iekf = IekfEstimator(noise=matched, gating=False, init_att_std=1e-3,
                             init_bias_gyro_std=1e-4, init_bias_accel_std=1e-3)
        warm = iekf.transform(frames[:-1])
        belief = iekf.belief_.copy()
        assert belief.k == K  # all four feet tracked

        # seed a single-node window with the filter belief as its prior
        smoother = sm.SmootherEstimator(window_size=1, noise=matched,
                                        sigma_pos_floor=1e-7,
                                        max_iterations=1)
        smoother.reset()
        node = sm.WindowNode(frames[-2].t, belief.X, belief.bias.copy(),
                             frames[-2].contacts.flags.copy())
        win = smoother.window_
        win.nodes = [node]
        win.prior = sm.PriorFactor(r=np.zeros(N), J=np.eye(N),
                                   sigma=belief.P.copy())
        smoother.t_prev_ = frames[-2].t
        out_s = smoother.step(frames[-1])

        out_i = ie_step(iekf, frames[-1])
        assert np.abs(out_s.p - out_i.p).max() < 1e-6
        assert np.abs(out_s.v - out_i.v).max() < 1e-6

    def test_linear_gaussian_equivalence_zero_rotation(self):
        # zero-rotation regime: all retractions additive, factors linear, so
        # the fixed-lag posterior matches the full-window (dense batch) one
        matched = sg.NoiseSpec(1e-4, 1e-3, 1e-4, 1e-4, 1e-4, 1e-4, 0.0,
                               (0, 0, 0), (0, 0, 0), 5)
        ds = make_dataset("rest", 0.06, matched, rate=400.0,
                          gait=sg.GaitSpec.standing())
        frames = ds.frames()
        opts = dict(noise=matched, max_iterations=8, tolerance=1e-12,
                    init_att_std=1e-6, init_bias_gyro_std=1e-6,
                    init_bias_accel_std=1e-6)
        fixed_lag = sm.SmootherEstimator(window_size=3, **opts)
        batch = sm.SmootherEstimator(window_size=len(frames) + 1, **opts)
        out_f = fixed_lag.transform(frames)
        out_b = batch.transform(frames)
        assert len(batch.window_.nodes) == len(frames)  # never marginalized
        for a, b in zip(out_f, out_b):
            assert np.abs(a.p - b.p).max() < 1e-8
            assert np.abs(a.v - b.v).max() < 1e-8

    def test_singular_normal_matrix_reported(self, rng):
        win = sm.SlidingWindow(sm.SmootherConfig(window_size=2),
                               sg.NoiseSpec(), 1.0, 1e-4)
        node = make_node(rng)
        win.nodes = [node]
        win.prior = sm.PriorFactor(r=np.zeros(N), J=np.zeros((N, N)),
                                   sigma=np.eye(N), W=np.zeros((N, N)))
        with pytest.raises(sm.SingularNormalEquations):
            win.solve()
