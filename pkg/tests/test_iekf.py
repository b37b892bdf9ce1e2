import numpy as np
import pytest

from propriobench import iekf as ie
from propriobench import synthgen as sg
from propriobench.datamodel import ContactState, ImuSample
from propriobench.liegroups import (
    ExtendedPose,
    group_dim,
    group_exp,
    group_log,
    rot_exp,
    state_exp,
    tangent_dim,
)
from propriobench.metrics import evaluate
from propriobench.synthgen import GRAVITY

from conftest import make_dataset

DT = 0.0025
UPRIGHT_ACCEL = np.array([0.0, 0.0, 9.80665])


def rest_imu(t=0.0):
    return ImuSample(t=t, gyro=np.zeros(3), accel=UPRIGHT_ACCEL.copy())


def random_belief(rng, k=1, p_scale=0.01):
    X, _ = state_exp(rng.standard_normal(tangent_dim(k)) * 0.3, k)
    n = tangent_dim(k)
    A = rng.standard_normal((n, n))
    P = A @ A.T * p_scale / n + np.eye(n) * 1e-6
    return ie.IekfBelief(X, rng.standard_normal(6) * 0.01, P,
                         ["LF", "RF", "LH", "RH"][:k])


class TestPropagate:
    def test_upright_rest_mean_unchanged(self):
        belief = ie.IekfBelief(ExtendedPose.identity(1), np.zeros(6),
                               np.eye(tangent_dim(1)) * 0.01, ["LF"])
        out = ie.iekf_propagate(belief, rest_imu(), DT, sg.NoiseSpec.zero())
        assert np.abs(out.X.as_matrix() - belief.X.as_matrix()).max() < 1e-15
        assert np.allclose(out.bias, 0.0)

    def test_free_fall_gains_g_dt(self):
        belief = ie.IekfBelief(ExtendedPose.identity(0), np.zeros(6),
                               np.eye(15) * 0.01, [])
        imu = ImuSample(t=0.0, gyro=np.zeros(3), accel=np.zeros(3))
        out = ie.iekf_propagate(belief, imu, DT, sg.NoiseSpec.zero())
        assert np.allclose(out.X.v, GRAVITY * DT, atol=1e-15)

    def test_dt_rejected(self):
        belief = ie.IekfBelief(ExtendedPose.identity(0), np.zeros(6),
                               np.eye(15) * 0.01, [])
        with pytest.raises(ValueError):
            ie.iekf_propagate(belief, rest_imu(), 0.0, sg.NoiseSpec())

    def test_log_linear_two_scale(self, rng):
        # halving the initial error reduces the nonlinear-vs-linear
        # propagation discrepancy by about four (quadratic remainder)
        noise = sg.NoiseSpec.zero()
        total = {1.0: 0.0, 0.5: 0.0}
        for _ in range(20):
            belief = random_belief(rng, k=1)
            imu = ImuSample(t=0.0, gyro=rng.standard_normal(3),
                            accel=rng.standard_normal(3) + UPRIGHT_ACCEL)
            A = ie.build_A(belief.X)
            Phi = np.eye(tangent_dim(1)) + A * DT
            xi0 = rng.standard_normal(tangent_dim(1)) * 0.2
            for s in (1.0, 0.5):
                xi = xi0 * s
                Xp, db = state_exp(xi, 1)
                pert = ie.IekfBelief(Xp.compose(belief.X), belief.bias + db,
                                     belief.P, list(belief.contact_ids))
                out_pert = ie.iekf_propagate(pert, imu, DT, noise)
                out_ref = ie.iekf_propagate(belief, imu, DT, noise)
                err_group = group_log(
                    out_pert.X.compose(out_ref.X.inverse()))
                err = np.concatenate([err_group,
                                      out_pert.bias - out_ref.bias])
                total[s] += np.linalg.norm(err - Phi @ xi)
        assert total[1.0] / total[0.5] >= 3.5

    def test_group_block_of_A_state_independent(self, rng):
        g = group_dim(2)
        blocks = []
        for _ in range(5):
            A = ie.build_A(random_belief(rng, k=2).X)
            blocks.append(A[:g, :g])
        for B in blocks[1:]:
            assert np.array_equal(B, blocks[0])

    def test_right_invariant_error_evolution(self, rng):
        # right translation X -> X G leaves the invariant error trajectory
        # unchanged (bias-free case)
        noise = sg.NoiseSpec.zero()
        for _ in range(10):
            X_hat = random_belief(rng, k=1).X
            xi = rng.standard_normal(group_dim(1)) * 0.1
            X_true = group_exp(xi, 1).inverse().compose(X_hat)
            G = random_belief(rng, k=1).X
            imu = ImuSample(t=0.0, gyro=rng.standard_normal(3),
                            accel=rng.standard_normal(3))

            def prop(X):
                b = ie.IekfBelief(X, np.zeros(6),
                                  np.eye(tangent_dim(1)) * 1e-4, ["LF"])
                return ie.iekf_propagate(b, imu, DT, noise).X

            e1 = group_log(prop(X_hat).compose(prop(X_true).inverse()))
            e2 = group_log(prop(X_hat.compose(G)).compose(
                prop(X_true.compose(G)).inverse()))
            assert np.abs(e1 - e2).max() < 1e-10

    def test_covariance_psd(self, rng):
        belief = random_belief(rng, k=2)
        for _ in range(50):
            imu = ImuSample(t=0.0, gyro=rng.standard_normal(3) * 0.1,
                            accel=UPRIGHT_ACCEL + rng.standard_normal(3) * 0.1)
            belief = ie.iekf_propagate(belief, imu, DT, sg.NoiseSpec())
            w = np.linalg.eigvalsh(belief.P)
            assert w.min() > -1e-12 * max(w.max(), 1.0)


class TestUpdate:
    def consistent_measurement(self, belief, foot):
        j = belief.slot_of(foot)
        fk = belief.X.R.T @ (belief.X.d[j] - belief.X.p)
        return ie.KinematicMeasurement(foot=foot, fk=fk, cov=np.eye(3) * 1e-6)

    def test_zero_innovation_keeps_state(self, rng):
        belief = random_belief(rng, k=1)
        meas = [self.consistent_measurement(belief, "LF")]
        out = ie.iekf_update(belief, meas, gate=False)
        assert np.abs(out.X.as_matrix() - belief.X.as_matrix()).max() < 1e-12
        assert np.allclose(out.bias, belief.bias)
        # covariance is strictly updated (Joseph form applied)
        assert np.trace(out.P) < np.trace(belief.P)

    def test_two_consistent_contacts(self, rng):
        belief = random_belief(rng, k=2)
        meas = [self.consistent_measurement(belief, f) for f in ("LF", "RF")]
        out = ie.iekf_update(belief, meas, gate=False)
        assert np.abs(out.X.as_matrix() - belief.X.as_matrix()).max() < 1e-12

    def test_position_contact_trace_reduction(self, rng):
        # trace of the (p, d) sub-block never grows for any PSD noise
        for _ in range(20):
            belief = random_belief(rng, k=1)
            A = rng.standard_normal((3, 3))
            meas = [ie.KinematicMeasurement(
                foot="LF", fk=rng.standard_normal(3),
                cov=A @ A.T * 1e-4 + np.eye(3) * 1e-8)]
            out = ie.iekf_update(belief, meas, gate=False)
            idx = list(range(6, 9)) + list(range(9, 12))
            before = np.trace(belief.P[np.ix_(idx, idx)])
            after = np.trace(out.P[np.ix_(idx, idx)])
            assert after <= before + 1e-12

    def test_inactive_contact_rejected(self, rng):
        belief = random_belief(rng, k=1)
        meas = [ie.KinematicMeasurement(foot="RH", fk=np.zeros(3),
                                        cov=np.eye(3))]
        with pytest.raises(ValueError, match="inactive"):
            ie.iekf_update(belief, meas)

    def test_gate_skips_outlier(self, rng):
        belief = random_belief(rng, k=2)
        good = self.consistent_measurement(belief, "LF")
        bad = ie.KinematicMeasurement(foot="RF",
                                      fk=np.array([100.0, 100.0, 100.0]),
                                      cov=np.eye(3) * 1e-6)
        out = ie.iekf_update(belief, [good, bad], gate=True)
        # the outlier foot is skipped; the consistent one keeps the state
        assert np.abs(out.X.p - belief.X.p).max() < 1e-9


class TestContacts:
    def test_add_then_remove_restores_covariance(self, rng):
        belief = random_belief(rng, k=1)
        fk = rng.standard_normal(3)
        grown = ie.add_contact(belief, "RF", fk, inflation_std=0.03)
        back = ie.remove_contact(grown, "RF")
        assert np.array_equal(back.P, belief.P)
        assert back.contact_ids == belief.contact_ids

    def test_zero_covariance_zero_inflation(self, rng):
        X = random_belief(rng, k=0).X
        belief = ie.IekfBelief(X, np.zeros(6), np.zeros((15, 15)), [])
        grown = ie.add_contact(belief, "LH", rng.standard_normal(3),
                               inflation_std=0.0)
        assert np.abs(grown.P).max() == 0.0

    def test_new_contact_mean_matches_kinematics(self, rng):
        belief = random_belief(rng, k=0)
        fk = rng.standard_normal(3)
        grown = ie.add_contact(belief, "LF", fk, inflation_std=0.03)
        j = grown.slot_of("LF")
        recon = grown.X.R.T @ (grown.X.d[j] - grown.X.p)
        assert np.abs(recon - fk).max() < 1e-12

    def test_lifecycle_via_flags(self, rng):
        belief = random_belief(rng, k=0)
        meas = [ie.KinematicMeasurement(foot="LF", fk=rng.standard_normal(3),
                                        cov=np.eye(3) * 1e-6)]
        contacts = ContactState(np.array([1, 0, 0, 0]))
        belief = ie.manage_contacts(belief, contacts, meas)
        assert belief.contact_ids == ["LF"]
        contacts = ContactState(np.array([0, 0, 0, 0]))
        belief = ie.manage_contacts(belief, contacts, [])
        assert belief.contact_ids == []


class TestEstimator:
    def test_noiseless_line(self, noiseless_line):
        est = ie.IekfEstimator(noise=sg.NoiseSpec.zero(),
                               init_velocity=(0.5, 0, 0))
        rep = evaluate(est.transform(noiseless_line.frames()),
                       noiseless_line.groundtruth)
        assert rep.ate_m < 1e-3
        assert rep.ate_vel_mps < 1e-3

    def test_noisy_circle_tracks(self):
        ds = make_dataset("circle", 5.0, sg.NoiseSpec())
        est = ie.IekfEstimator(noise=sg.NoiseSpec(), init_velocity=(0.5, 0, 0))
        rep = evaluate(est.transform(ds.frames()), ds.groundtruth)
        assert rep.ate_m < 0.1

    def test_bias_estimated(self):
        noise = sg.NoiseSpec()
        ds = make_dataset("circle", 10.0, noise)
        est = ie.IekfEstimator(noise=noise, init_velocity=(0.5, 0, 0))
        est.transform(ds.frames())
        bias = est.belief_.bias
        assert np.abs(bias[:3] - noise.gyro_bias0).max() < 2e-3
