"""Rigid-body dynamics for revolute chains hanging from a floating base.

Implements the composite-rigid-body mass matrix, Newton-Euler bias forces
(Coriolis/centrifugal plus gravity, with the measured base acceleration
folded in as a frame acceleration), point-foot Jacobians, and the per-leg
contact-force inversion ``F = -(J^T)^-1 (tau - M qdd - bias)``.

All quantities are expressed in the base frame. Base angular-rate coupling
is neglected: the leg subsystem sees gravity rotated into the base frame
plus the base linear acceleration, nothing else. Functions accept a single
configuration ``(n,)`` or a batch ``(..., n)`` and broadcast accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import morphology

GRAVITY = np.array([0.0, 0.0, -9.81])


class NearSingularJacobian(RuntimeError):
    pass


class TooShort(ValueError):
    pass


@dataclass(frozen=True)
class ChainJoint:
    name: str
    rot: np.ndarray    # fixed rotation, parent frame -> joint frame at q=0
    trans: np.ndarray  # joint origin in the parent frame
    axis: np.ndarray   # unit rotation axis in the joint frame


@dataclass(frozen=True)
class ChainBody:
    """Rigid body carried by one joint, in that joint's frame."""
    mass: float
    com: np.ndarray
    inertia: np.ndarray  # about the COM


@dataclass(frozen=True)
class LegChain:
    name: str
    joints: list[ChainJoint]
    bodies: list[ChainBody]
    foot_offset: np.ndarray  # foot point in the last joint's frame

    def __len__(self) -> int:
        return len(self.joints)


@dataclass(frozen=True)
class BaseState:
    """Base pose/motion context for leg dynamics.

    ``lin_acc`` is the kinematic acceleration of the base origin, in the
    base frame; an IMU accelerometer reads ``lin_acc - R^T g``. Angular
    fields are carried for completeness but do not enter the leg model.
    Fields broadcast: rotation (...,3,3), vectors (...,3).
    """
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    lin_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        err = np.abs(np.swapaxes(r, -1, -2) @ r - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation not orthonormal (|R^T R - I| = {err:.2e})")

    @classmethod
    def at_rest(cls, rotation=None) -> "BaseState":
        return cls() if rotation is None else cls(rotation=np.asarray(rotation, float))

    @classmethod
    def from_imu(cls, rotation, imu_accel, gyro=None, gyro_rate=None) -> "BaseState":
        """Build from IMU specific force: lin_acc = imu + R^T g."""
        rotation = np.asarray(rotation, float)
        g_b = np.einsum("...ji,j->...i", rotation, GRAVITY)
        return cls(rotation=rotation,
                   lin_acc=np.asarray(imu_accel, float) + g_b,
                   ang_vel=np.zeros(3) if gyro is None else np.asarray(gyro, float),
                   ang_acc=np.zeros(3) if gyro_rate is None else np.asarray(gyro_rate, float))

    def support_acceleration(self) -> np.ndarray:
        """Fictitious base-frame acceleration fed to the recursions."""
        g_b = np.einsum("...ji,j->...i", self.rotation, self.gravity)
        return np.asarray(self.lin_acc, float) - g_b


def _axis_rotation(axis: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a fixed unit axis; q has any shape."""
    q = np.asarray(q, float)
    c, s = np.cos(q), np.sin(q)
    ax, ay, az = axis
    K = np.array([[0.0, -az, ay], [az, 0.0, -ax], [-ay, ax, 0.0]])
    outer = np.outer(axis, axis)
    return (c[..., None, None] * np.eye(3)
            + s[..., None, None] * K
            + (1.0 - c)[..., None, None] * outer)


@dataclass(frozen=True)
class ChainFrames:
    rot: np.ndarray    # (..., n, 3, 3) joint frames in the base frame
    pos: np.ndarray    # (..., n, 3) joint origins
    axis: np.ndarray   # (..., n, 3) joint axes in the base frame
    foot: np.ndarray   # (..., 3) foot point


def forward_kinematics(chain: LegChain, q) -> ChainFrames:
    q = np.asarray(q, float)
    batch = q.shape[:-1]
    r_prev = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    p_prev = np.zeros(batch + (3,))
    rots, poss, axes = [], [], []
    for i, joint in enumerate(chain.joints):
        p_i = p_prev + np.einsum("...ij,j->...i", r_prev, joint.trans)
        r_pre = r_prev @ joint.rot
        z_i = np.einsum("...ij,j->...i", r_pre, joint.axis)
        r_i = r_pre @ _axis_rotation(joint.axis, q[..., i])
        rots.append(r_i)
        poss.append(p_i)
        axes.append(z_i)
        r_prev, p_prev = r_i, p_i
    foot = p_prev + np.einsum("...ij,j->...i", r_prev, chain.foot_offset)
    return ChainFrames(np.stack(rots, axis=-3), np.stack(poss, axis=-2),
                       np.stack(axes, axis=-2), foot)


def foot_jacobian(chain: LegChain, q) -> np.ndarray:
    """d(foot position in base frame)/dq, shape (..., 3, n)."""
    fr = forward_kinematics(chain, q)
    cols = np.cross(fr.axis, fr.foot[..., None, :] - fr.pos)  # (..., n, 3)
    return np.swapaxes(cols, -1, -2)


def _world_inertia(chain: LegChain, fr: ChainFrames):
    """Per-body mass, world COM and world inertia about the COM."""
    ms, cs, Is = [], [], []
    for i, body in enumerate(chain.bodies):
        R = fr.rot[..., i, :, :]
        c = fr.pos[..., i, :] + np.einsum("...ij,j->...i", R, body.com)
        I = R @ body.inertia @ np.swapaxes(R, -1, -2)
        ms.append(body.mass)
        cs.append(c)
        Is.append(I)
    return ms, cs, Is


def _shift(d: np.ndarray) -> np.ndarray:
    """Parallel-axis inertia term for a unit mass offset d: (d.d)I - d d^T."""
    dd = (d * d).sum(-1)[..., None, None]
    return dd * np.eye(3) - d[..., :, None] * d[..., None, :]


def leg_mass_matrix(chain: LegChain, q) -> np.ndarray:
    """Joint-space mass matrix via composite rigid bodies, (..., n, n)."""
    q = np.asarray(q, float)
    n = len(chain)
    fr = forward_kinematics(chain, q)
    ms, cs, Is = _world_inertia(chain, fr)

    batch = q.shape[:-1]
    M = np.zeros(batch + (n, n))
    mc, cc, Ic = 0.0, np.zeros(batch + (3,)), np.zeros(batch + (3, 3))
    for i in range(n - 1, -1, -1):
        m_new = mc + ms[i]
        c_new = (ms[i] * cs[i] + mc * cc) / m_new if m_new > 0.0 else cc
        Ic = (Is[i] + ms[i] * _shift(cs[i] - c_new)) + Ic + mc * _shift(cc - c_new)
        mc, cc = m_new, c_new
        z_i, p_i = fr.axis[..., i, :], fr.pos[..., i, :]
        F = mc * np.cross(z_i, cc - p_i)
        N = np.einsum("...ij,...j->...i", Ic, z_i)
        for j in range(i + 1):
            n_pj = N + np.cross(cc - fr.pos[..., j, :], F)
            M[..., j, i] = M[..., i, j] = (fr.axis[..., j, :] * n_pj).sum(-1)
    return M


def inverse_dynamics(chain: LegChain, q, qd, qdd, base: BaseState | None = None) -> np.ndarray:
    """Joint torques for a prescribed motion: tau = M qdd + C qd + g."""
    if base is None:
        base = BaseState.at_rest()
    q, qd, qdd = (np.asarray(a, float) for a in (q, qd, qdd))
    q, qd, qdd = np.broadcast_arrays(q, qd, qdd)
    n = len(chain)
    fr = forward_kinematics(chain, q)
    ms, cs, Is = _world_inertia(chain, fr)

    batch = q.shape[:-1]
    omega = np.zeros(batch + (3,))
    alpha = np.zeros(batch + (3,))
    a_pt = np.broadcast_to(base.support_acceleration(), batch + (3,)).copy()
    p_prev = np.zeros(batch + (3,))
    Fs, Ns = [], []
    omegas, alphas = [], []
    for i in range(n):
        z_i, p_i = fr.axis[..., i, :], fr.pos[..., i, :]
        r = p_i - p_prev
        a_pt = a_pt + np.cross(alpha, r) + np.cross(omega, np.cross(omega, r))
        alpha = alpha + z_i * qdd[..., i, None] + np.cross(omega, z_i) * qd[..., i, None]
        omega = omega + z_i * qd[..., i, None]
        rc = cs[i] - p_i
        a_c = a_pt + np.cross(alpha, rc) + np.cross(omega, np.cross(omega, rc))
        Iw = Is[i]
        Fs.append(ms[i] * a_c)
        Ns.append(np.einsum("...ij,...j->...i", Iw, alpha)
                  + np.cross(omega, np.einsum("...ij,...j->...i", Iw, omega)))
        omegas.append(omega)
        alphas.append(alpha)
        p_prev = p_i

    tau = np.zeros(batch + (n,))
    f_next = np.zeros(batch + (3,))
    n_next = np.zeros(batch + (3,))
    for i in range(n - 1, -1, -1):
        p_i = fr.pos[..., i, :]
        n_i = Ns[i] + np.cross(cs[i] - p_i, Fs[i]) + n_next
        if i < n - 1:
            n_i = n_i + np.cross(fr.pos[..., i + 1, :] - p_i, f_next)
        f_next = Fs[i] + f_next
        n_next = n_i
        tau[..., i] = (fr.axis[..., i, :] * n_i).sum(-1)
    return tau


def leg_bias(chain: LegChain, q, qd, base: BaseState | None = None) -> np.ndarray:
    """Coriolis/centrifugal plus gravity torques: C(q, qd) qd + g(q)."""
    return inverse_dynamics(chain, q, qd, np.zeros_like(np.asarray(q, float)), base)


def fbd_grf(chain: LegChain, q, qd, qdd, tau, base: BaseState | None = None,
            cond_threshold: float = 1e6) -> np.ndarray:
    """Per-leg contact force from the leg partition of the floating-base
    dynamics, in the base frame. Requires a 3-DoF leg (square J)."""
    if len(chain) != 3:
        raise ValueError(f"per-leg force inversion needs a 3-DoF leg, got {len(chain)}")
    q = np.asarray(q, float)
    JT = np.swapaxes(foot_jacobian(chain, q), -1, -2)
    cond = np.linalg.cond(JT)
    if not np.all(np.isfinite(cond)) or np.max(cond) > cond_threshold:
        raise NearSingularJacobian(f"cond(J^T) = {np.max(cond):.3e}")
    r = np.asarray(tau, float) - np.einsum("...ij,...j->...i", leg_mass_matrix(chain, q),
                                           np.asarray(qdd, float)) - leg_bias(chain, q, qd, base)
    return -np.linalg.solve(JT, r[..., None])[..., 0]


def fbd_grf_batch(chain: LegChain, q, qd, qdd, tau, base: BaseState | None = None,
                  cond_threshold: float = 1e6) -> tuple[np.ndarray, np.ndarray]:
    """Batched force inversion; near-singular samples return zeros and a
    False flag instead of raising."""
    if base is None:
        base = BaseState.at_rest()
    q = np.asarray(q, float)
    JT = np.swapaxes(foot_jacobian(chain, q), -1, -2)
    cond = np.linalg.cond(JT)
    ok = np.isfinite(cond) & (cond <= cond_threshold)
    r = np.asarray(tau, float) - np.einsum("...ij,...j->...i", leg_mass_matrix(chain, q),
                                           np.asarray(qdd, float)) - leg_bias(chain, q, qd, base)
    safe_JT = np.where(ok[..., None, None], JT, np.eye(3))
    F = -np.linalg.solve(safe_JT, r[..., None])[..., 0]
    return np.where(ok[..., None], F, 0.0), ok


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix from a unit quaternion in (w, x, y, z) order."""
    w, x, y, z = np.asarray(q, float)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def estimate_derivatives(series, dt: float) -> np.ndarray:
    """Numeric d/dt of a uniformly sampled signal: central differences in
    the interior, one-sided second-order stencils at the ends."""
    arr = np.asarray(series, float)
    if arr.shape[0] < 3:
        raise TooShort(f"need >= 3 samples, got {arr.shape[0]}")
    return np.gradient(arr, dt, axis=0, edge_order=2)


def _merged_body(model: morphology.RobotModel, link_name: str) -> ChainBody:
    """Inertial of a link with every fixed-joint descendant folded in."""
    parts: list[tuple[float, np.ndarray, np.ndarray]] = []

    def collect(name: str, rot: np.ndarray, trans: np.ndarray) -> None:
        link = model.link_map[name]
        parts.append((link.mass, trans + rot @ link.com, rot @ link.inertia @ rot.T))
        for j in model.child_joints(name):
            if j.kind == "fixed":
                collect(j.child_link, rot @ morphology._rpy_matrix(j.origin_rpy),
                        trans + rot @ j.origin_xyz)

    collect(link_name, np.eye(3), np.zeros(3))
    mass = sum(m for m, _, _ in parts)
    if mass <= 0.0:
        return ChainBody(0.0, np.zeros(3), np.zeros((3, 3)))
    com = sum(m * c for m, c, _ in parts) / mass
    inertia = sum(I + m * _shift(c - com) for m, c, I in parts)
    return ChainBody(mass, com, inertia)


def extract_leg_chains(model: morphology.RobotModel) -> list[LegChain]:
    """One LegChain per foot, in the graph's canonical foot order."""
    graph = morphology.build_graph(model)
    chains = []
    for foot_id in graph.foot_order:
        foot_joint = model.joint_map[graph.nodes[foot_id].name]
        path: list[morphology.Joint] = []
        link = foot_joint.child_link
        while link != model.root:
            j = model.parent_joint(link)
            path.append(j)
            link = j.parent_link
        path.reverse()

        joints, bodies = [], []
        pend_rot, pend_trans = np.eye(3), np.zeros(3)
        for j in path:
            pend_trans = pend_trans + pend_rot @ j.origin_xyz
            pend_rot = pend_rot @ morphology._rpy_matrix(j.origin_rpy)
            if j.kind == "revolute":
                joints.append(ChainJoint(j.name, pend_rot, pend_trans, j.axis))
                bodies.append(_merged_body(model, j.child_link))
                pend_rot, pend_trans = np.eye(3), np.zeros(3)
        chains.append(LegChain(graph.nodes[foot_id].name, joints, bodies, pend_trans))
    return chains
