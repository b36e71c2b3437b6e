import numpy as np
import pytest

from morphgnn import dynamics as dyn


@pytest.fixture(scope="module")
def pendulum():
    """Planar 2-link chain, point masses at the link ends, rotation about +y,
    gravity -z, links along +x at q = 0."""
    m1, m2, l1, l2 = 1.3, 0.7, 0.5, 0.4
    chain = dyn.LegChain(
        "pendulum",
        joints=[dyn.ChainJoint("j1", np.eye(3), np.zeros(3), np.array([0.0, 1.0, 0.0])),
                dyn.ChainJoint("j2", np.eye(3), np.array([l1, 0.0, 0.0]),
                               np.array([0.0, 1.0, 0.0]))],
        bodies=[dyn.ChainBody(m1, np.array([l1, 0.0, 0.0]), np.zeros((3, 3))),
                dyn.ChainBody(m2, np.array([l2, 0.0, 0.0]), np.zeros((3, 3)))],
        foot_offset=np.array([l2, 0.0, 0.0]))
    return chain, (m1, m2, l1, l2)


def analytic_mass_matrix(params, q):
    m1, m2, l1, l2 = params
    c2 = np.cos(q[1])
    return np.array([
        [m1 * l1**2 + m2 * (l1**2 + 2 * l1 * l2 * c2 + l2**2), m2 * (l1 * l2 * c2 + l2**2)],
        [m2 * (l1 * l2 * c2 + l2**2), m2 * l2**2]])


def analytic_bias(params, q, qd, g=9.81):
    """Lagrangian C(q, qd) qd + g(q) for the same construction (positive q
    rotates the links downward, heights z1 = -l1 sin q1, ...)."""
    m1, m2, l1, l2 = params
    s2 = np.sin(q[1])
    h = m2 * l1 * l2 * s2
    cor = np.array([-h * qd[1]**2 - 2 * h * qd[0] * qd[1], h * qd[0]**2])
    c1, c12 = np.cos(q[0]), np.cos(q[0] + q[1])
    grav = np.array([-(m1 + m2) * g * l1 * c1 - m2 * g * l2 * c12,
                     -m2 * g * l2 * c12])
    return cor + grav


@pytest.fixture(scope="module")
def quad_chains(robot):
    return dyn.extract_leg_chains(robot)


class TestChainExtraction:
    def test_four_three_dof_legs(self, quad_chains):
        assert len(quad_chains) == 4
        assert all(len(c) == 3 for c in quad_chains)
        assert [c.name[:2] for c in quad_chains] == ["LF", "LH", "RF", "RH"]

    def test_foot_mass_merged_into_calf(self, quad_chains):
        calf = quad_chains[0].bodies[2]
        assert abs(calf.mass - 0.26) < 1e-12  # 0.2 calf + 0.06 foot
        # merged COM sits between calf COM (-0.1) and foot frame (-0.2)
        assert -0.2 < calf.com[2] < -0.1

    def test_foot_offset(self, quad_chains):
        assert np.allclose(quad_chains[0].foot_offset, [0.0, 0.0, -0.2])


class TestMassMatrix:
    def test_stretched_closed_form(self, pendulum):
        chain, (m1, m2, l1, l2) = pendulum
        M = dyn.leg_mass_matrix(chain, np.array([0.7, 0.0]))
        assert abs(M[0, 0] - (m1 * l1**2 + m2 * (l1 + l2)**2)) < 1e-12

    def test_analytic_oracle_50_states(self, pendulum):
        chain, params = pendulum
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = rng.uniform(-3, 3, 2)
            assert np.abs(dyn.leg_mass_matrix(chain, q)
                          - analytic_mass_matrix(params, q)).max() < 1e-8

    def test_symmetric_positive_definite(self, quad_chains):
        rng = np.random.default_rng(1)
        chain = quad_chains[0]
        for _ in range(20):
            q = rng.uniform(-1.5, 1.5, 3)
            M = dyn.leg_mass_matrix(chain, q)
            assert np.abs(M - M.T).max() < 1e-12
            for _ in range(5):
                v = rng.standard_normal(3)
                assert v @ M @ v > 0.0


class TestBias:
    def test_zero_at_rest_without_gravity(self, pendulum):
        chain, _ = pendulum
        base = dyn.BaseState(gravity=np.zeros(3))
        assert np.abs(dyn.leg_bias(chain, np.array([0.3, -0.7]), np.zeros(2), base)).max() == 0.0

    def test_analytic_oracle_50_states(self, pendulum):
        chain, params = pendulum
        rng = np.random.default_rng(2)
        for _ in range(50):
            q, qd = rng.uniform(-3, 3, 2), rng.uniform(-4, 4, 2)
            assert np.abs(dyn.leg_bias(chain, q, qd)
                          - analytic_bias(params, q, qd)).max() < 1e-8

    def test_crba_matches_rnea_columns(self, quad_chains):
        chain = quad_chains[1]
        rng = np.random.default_rng(3)
        base0 = dyn.BaseState(gravity=np.zeros(3))
        for _ in range(10):
            q = rng.uniform(-1.5, 1.5, 3)
            M = dyn.leg_mass_matrix(chain, q)
            for k in range(3):
                e = np.zeros(3)
                e[k] = 1.0
                col = dyn.inverse_dynamics(chain, q, np.zeros(3), e, base0)
                assert np.abs(col - M[:, k]).max() < 1e-10

    def test_energy_conservation(self, pendulum):
        # unforced swing: qdd = -M^-1 bias; RK4 at dt = 1e-4 for 1 s
        chain, (m1, m2, l1, l2) = pendulum
        g_b = dyn.GRAVITY

        def deriv(state):
            q, qd = state[:2], state[2:]
            qdd = -np.linalg.solve(dyn.leg_mass_matrix(chain, q),
                                   dyn.leg_bias(chain, q, qd))
            return np.concatenate([qd, qdd])

        def energy(state):
            q, qd = state[:2], state[2:]
            fr = dyn.forward_kinematics(chain, q)
            kin = 0.5 * qd @ dyn.leg_mass_matrix(chain, q) @ qd
            pot = 0.0
            for i, body in enumerate(chain.bodies):
                c = fr.pos[i] + fr.rot[i] @ body.com
                pot -= body.mass * (g_b @ c)
            return kin + pot

        state = np.array([0.4, 0.9, 0.0, 0.0])
        e0 = energy(state)
        dt = 1e-4
        for _ in range(10000):
            k1 = deriv(state)
            k2 = deriv(state + 0.5 * dt * k1)
            k3 = deriv(state + 0.5 * dt * k2)
            k4 = deriv(state + dt * k3)
            state = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        assert abs(energy(state) - e0) / abs(e0) < 1e-5


class TestJacobian:
    def test_finite_difference_oracle(self, quad_chains):
        chain = quad_chains[2]
        rng = np.random.default_rng(4)
        h = 1e-7
        for _ in range(100):
            q = rng.uniform(-1.5, 1.5, 3)
            J = dyn.foot_jacobian(chain, q)
            for k in range(3):
                e = np.zeros(3)
                e[k] = h
                fd = (dyn.forward_kinematics(chain, q + e).foot
                      - dyn.forward_kinematics(chain, q - e).foot) / (2 * h)
                assert np.abs(J[:, k] - fd).max() < 1e-6

    def test_stretched_column_norms(self, pendulum):
        # fully stretched planar chain: each column's norm is the distance
        # from that joint axis to the foot point
        chain, (_, _, l1, l2) = pendulum
        J = dyn.foot_jacobian(chain, np.zeros(2))
        assert abs(np.linalg.norm(J[:, 0]) - (l1 + l2)) < 1e-12
        assert abs(np.linalg.norm(J[:, 1]) - l2) < 1e-12


class TestFbdGrf:
    def test_static_force_recovery(self, quad_chains):
        chain = quad_chains[0]
        q = np.array([0.05, 0.7, -1.4])
        f_star = np.array([3.0, -4.0, 37.0])
        tau = (dyn.leg_bias(chain, q, np.zeros(3))
               - dyn.foot_jacobian(chain, q).T @ f_star)
        rec = dyn.fbd_grf(chain, q, np.zeros(3), np.zeros(3), tau)
        assert np.abs(rec - f_star).max() < 1e-9

    def test_singular_pose_flagged(self, quad_chains):
        chain = quad_chains[0]
        q_straight = np.array([0.0, 0.0, 0.0])  # knee locked: rank-deficient J
        with pytest.raises(dyn.NearSingularJacobian):
            dyn.fbd_grf(chain, q_straight, np.zeros(3), np.zeros(3), np.zeros(3))
        _, ok = dyn.fbd_grf_batch(chain, q_straight[None], np.zeros((1, 3)),
                                  np.zeros((1, 3)), np.zeros((1, 3)))
        assert not ok[0]

    def test_requires_three_dof(self, pendulum):
        chain, _ = pendulum
        with pytest.raises(ValueError):
            dyn.fbd_grf(chain, np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))

    def test_batch_matches_single(self, quad_chains):
        chain = quad_chains[3]
        rng = np.random.default_rng(5)
        q = rng.uniform(-1.0, 1.0, (8, 3)) + np.array([0.0, 0.6, -1.2])
        qd, qdd = rng.standard_normal((8, 3)), rng.standard_normal((8, 3))
        tau = rng.standard_normal((8, 3))
        fb, ok = dyn.fbd_grf_batch(chain, q, qd, qdd, tau)
        assert ok.all()
        for i in range(8):
            single = dyn.fbd_grf(chain, q[i], qd[i], qdd[i], tau[i])
            assert np.abs(fb[i] - single).max() < 1e-12


class TestDerivatives:
    def test_constant(self):
        out = dyn.estimate_derivatives(np.full(50, 3.0), 0.1)
        assert np.abs(out).max() == 0.0

    def test_ramp(self):
        t = np.arange(40) * 0.05
        out = dyn.estimate_derivatives(4.0 * t, 0.05)
        assert np.abs(out - 4.0).max() < 1e-12

    def test_sin_accuracy(self):
        dt = 1e-3
        t = np.arange(0, 1, dt)
        out = dyn.estimate_derivatives(np.sin(t), dt)
        assert np.abs(out - np.cos(t)).max() < 5.0 * dt**2

    def test_too_short(self):
        with pytest.raises(dyn.TooShort):
            dyn.estimate_derivatives(np.ones(2), 0.1)


class TestBaseState:
    def test_rotation_validated(self):
        with pytest.raises(ValueError):
            dyn.BaseState(rotation=np.eye(3) * 1.1)

    def test_support_acceleration_at_rest(self):
        a0 = dyn.BaseState.at_rest().support_acceleration()
        assert np.allclose(a0, [0.0, 0.0, 9.81])

    def test_from_imu_roundtrip(self):
        rng = np.random.default_rng(6)
        angle = 0.4
        rot = np.array([[np.cos(angle), 0, np.sin(angle)], [0, 1, 0],
                        [-np.sin(angle), 0, np.cos(angle)]])
        imu = rng.standard_normal(3)
        base = dyn.BaseState.from_imu(rot, imu)
        assert np.allclose(base.support_acceleration(), imu)

    def test_quat_to_matrix_identity(self):
        assert np.allclose(dyn.quat_to_matrix([1.0, 0.0, 0.0, 0.0]), np.eye(3))
