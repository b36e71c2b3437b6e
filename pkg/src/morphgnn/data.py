"""Synthetic quadruped datasets: schema, generation, windows, per-node
regrouping, normalization and splits.

A sequence holds time-synchronized proprioception (joint angles/rates/
torques, IMU, foot positions/velocities from forward kinematics), ground
truth base pose, per-foot vertical ground reaction forces and binary
contact labels. The generator prescribes a trot (or stand) on a sloped
plane: stance feet load a spring-damper ground model, joint angles come
from closed-form leg inverse kinematics, and torques from inverse dynamics
consistent with the commanded foot forces. Gaussian noise is added to
measurement channels only, never to labels or the ground-truth pose.

Model inputs are 150-step windows; each scalar channel is z-scored over
the window (time-wise, no dataset-level statistics) and channels are
regrouped onto the graph nodes that observe them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import dynamics
from . import hgnn as hg
from .morphology import BASE, FOOT, JOINT, MorphologyGraph, RobotModel

WINDOW_LEN = 150

LEGS = 4
COLUMNS = (
    ["t"]
    + [f"q{i:02d}" for i in range(12)]
    + [f"dq{i:02d}" for i in range(12)]
    + [f"tau{i:02d}" for i in range(12)]
    + [f"ab{i}" for i in range(3)]
    + [f"wb{i}" for i in range(3)]
    + [f"p{l}{a}" for l in range(4) for a in range(3)]
    + [f"v{l}{a}" for l in range(4) for a in range(3)]
    + [f"T{i}" for i in range(3)]
    + [f"quat{i}" for i in range(4)]  # w, x, y, z
    + [f"grf{i}" for i in range(4)]
    + [f"c{i}" for i in range(4)]
)
COL = {name: i for i, name in enumerate(COLUMNS)}
Q_SL, DQ_SL, TAU_SL = slice(1, 13), slice(13, 25), slice(25, 37)
AB_SL, WB_SL = slice(37, 40), slice(40, 43)
P_SL, V_SL = slice(43, 55), slice(55, 67)
POSE_SL, QUAT_SL = slice(67, 70), slice(70, 74)
GRF_SL, C_SL = slice(74, 78), slice(78, 82)
_NOISE_GROUPS = [("q", Q_SL), ("dq", DQ_SL), ("tau", TAU_SL), ("ab", AB_SL),
                 ("wb", WB_SL), ("p", P_SL), ("v", V_SL)]


class TooShort(ValueError):
    pass


class IkUnreachable(ValueError):
    pass


class TaskMismatch(ValueError):
    pass


class SplitError(ValueError):
    pass


class OverlappingSpec(SplitError):
    pass


def _default_noise_std() -> dict[str, float]:
    return {"q": 0.002, "dq": 0.05, "tau": 0.2, "ab": 0.3, "wb": 0.03,
            "p": 0.003, "v": 0.03}


@dataclass(frozen=True)
class GenParams:
    mu: float = 1.0              # terrain friction; shifts trot duty factor and stance slip
    slope_deg: float = 0.0
    speed: float = 0.5           # m/s along the surface
    gait: str = "trot"           # "trot" | "stand"
    duration: float = 10.0       # s
    rate_hz: float = 500.0
    noise: float = 1.0           # global scale on noise_std
    noise_std: dict[str, float] = field(default_factory=_default_noise_std)
    seed: int = 0
    k_p: float = 20000.0         # ground spring, N/m
    k_d: float = 50.0            # ground damper, N s/m
    contact_threshold: float = 3.0  # N, on the vertical force label
    rough: float = 0.0           # per-footfall ground height jitter amplitude, m
    cycle_s: float = 0.4
    step_height: float = 0.06
    bob_amp: float = 0.004
    base_height: float = 0.27
    name: str | None = None

    def __post_init__(self):
        if self.mu <= 0 or self.duration <= 0 or self.rate_hz <= 0:
            raise ValueError("mu, duration, rate_hz must be positive")
        if self.gait not in ("trot", "stand"):
            raise ValueError(f"unknown gait {self.gait!r}")


@dataclass
class SequenceDataset:
    meta: dict
    data: np.ndarray  # (n_samples, len(COLUMNS))

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] != len(COLUMNS):
            raise ValueError(f"expected {len(COLUMNS)} columns, got {self.data.shape}")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def name(self) -> str:
        return self.meta["name"]

    @property
    def dt(self) -> float:
        return 1.0 / self.meta["rate_hz"]


def save_sequence(ds: SequenceDataset, path: str) -> None:
    """CSV with a '#'-prefixed JSON metadata line; %.17g round-trips floats."""
    with open(path, "w") as f:
        f.write("# " + json.dumps(ds.meta, sort_keys=True) + "\n")
        f.write(",".join(COLUMNS) + "\n")
        np.savetxt(f, ds.data, fmt="%.17g", delimiter=",")


def load_sequence(path: str) -> SequenceDataset:
    with open(path) as f:
        meta_line = f.readline()
        if not meta_line.startswith("# "):
            raise ValueError(f"{path}: missing metadata line")
        meta = json.loads(meta_line[2:])
        header = f.readline().strip().split(",")
        if header != COLUMNS:
            raise ValueError(f"{path}: unexpected column header")
        data = np.loadtxt(f, delimiter=",", ndmin=2)
    return SequenceDataset(meta, data)


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _stance_profile(u: np.ndarray, ramp: float = 0.15) -> np.ndarray:
    """Smooth 0->1->0 load profile over normalized stance time."""
    return np.minimum(_smoothstep(u / ramp), _smoothstep((1.0 - u) / ramp))


def _leg_geometry(chain: dynamics.LegChain) -> tuple[np.ndarray, float, float, float]:
    """(hip offset in trunk frame, lateral offset, thigh len, calf len);
    requires the roll-pitch-pitch leg layout of the quadruped fixture."""
    j0, j1, j2 = chain.joints
    ok = (np.allclose(np.abs(j0.axis), [1, 0, 0]) and np.allclose(np.abs(j1.axis), [0, 1, 0])
          and np.allclose(np.abs(j2.axis), [0, 1, 0])
          and all(np.allclose(j.rot, np.eye(3)) for j in chain.joints))
    if not ok:
        raise ValueError("generator requires a roll-pitch-pitch 3-DoF leg")
    return j0.trans, float(j1.trans[1]), float(-j2.trans[2]), float(-chain.foot_offset[2])


def _leg_ik(target: np.ndarray, d: float, l1: float, l2: float) -> np.ndarray:
    """Closed-form IK of the roll(x)-pitch(y)-pitch(y) leg.

    ``target`` is (..., 3) foot position in the hip-roll joint frame;
    returns (..., 3) joint angles. Raises IkUnreachable outside the
    workspace.
    """
    px, py, pz = target[..., 0], target[..., 1], target[..., 2]
    L = np.hypot(py, pz)
    if np.any(L < abs(d) - 1e-12):
        raise IkUnreachable("lateral target inside the hip-roll cylinder")
    q1 = np.arctan2(pz, py) + np.arccos(np.clip(d / np.maximum(L, 1e-12), -1.0, 1.0))
    z_pl = -np.sin(q1) * py + np.cos(q1) * pz
    r2 = px * px + z_pl * z_pl
    cos_knee = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if np.any(np.abs(cos_knee) > 1.0 - 1e-10):
        raise IkUnreachable("foot target outside the leg workspace")
    q3 = -np.arccos(cos_knee)
    q2 = np.arctan2(-px, -z_pl) - np.arctan2(l2 * np.sin(q3), l1 + l2 * np.cos(q3))
    q1 = np.mod(q1 + np.pi, 2.0 * np.pi) - np.pi
    return np.stack([q1, q2, q3], axis=-1)


def _rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def generate_sequence(params: GenParams, robot: RobotModel) -> SequenceDataset:
    """Synthesize one gait sequence on the quadruped. Deterministic in
    ``params.seed``; identical params give bit-identical data."""
    chains = dynamics.extract_leg_chains(robot)
    if len(chains) != LEGS or any(len(c) != 3 for c in chains):
        raise ValueError("generator requires a 4-leg, 3-DoF-per-leg robot")
    geom = [_leg_geometry(c) for c in chains]
    total_mass = sum(l.mass for l in robot.links)
    weight = total_mass * 9.81

    n = int(round(params.duration * params.rate_hz))
    if n < 3:
        raise ValueError("duration too short")
    dt = 1.0 / params.rate_hz
    t = np.arange(n) * dt
    rng = np.random.default_rng(params.seed)
    theta = math.radians(params.slope_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    r_base = _rot_y(-theta)  # base frame axes in the world frame

    trot = params.gait == "trot" and params.speed != 0.0
    t_cyc = params.cycle_s
    duty = np.clip(0.5 + 0.08 * (1.0 - params.mu), 0.35, 0.7) if trot else 1.0
    n_cyc = int(params.duration / t_cyc) + 3
    jitter = (rng.uniform(-params.rough, params.rough, (LEGS, n_cyc + 1))
              if params.rough > 0 else np.zeros((LEGS, n_cyc + 1)))
    offsets = [0.0, 0.5, 0.5, 0.0]  # LF, LH, RF, RH: diagonal trot pairs

    # base motion in the slope-aligned frame
    speed = params.speed if trot else 0.0
    bob_w = 4.0 * math.pi / t_cyc  # two vertical beats per trot cycle
    z_b = params.base_height + params.bob_amp * np.sin(bob_w * t)
    zdd_b = -params.bob_amp * bob_w * bob_w * np.sin(bob_w * t)
    base_pos = np.stack([speed * t, np.zeros(n), z_b], axis=-1)

    depth = weight * cos_t / ((2 if trot else 4) * params.k_p)
    slip_rate = 0.03 * (1.0 - min(params.mu, 1.0)) * speed

    q = np.zeros((n, LEGS, 3))
    foot_z = np.zeros((n, LEGS))
    pen = np.zeros((n, LEGS))
    for leg in range(LEGS):
        hip_off, d_lat, l1, l2 = geom[leg]
        foot_y = hip_off[1] + d_lat
        if trot:
            phase = t / t_cyc + offsets[leg]
            k = np.floor(phase).astype(int)
            u = phase - k
            stance = u < duty
            u_st = np.where(stance, u / duty, 0.0)
            u_sw = np.where(stance, 0.0, (u - duty) / (1.0 - duty))
            step = speed * t_cyc
            x_td = hip_off[0] + speed * (k - offsets[leg]) * t_cyc + speed * duty * t_cyc / 2.0
            x_stance = x_td - slip_rate * u_st * duty * t_cyc
            x_lo = x_td - slip_rate * duty * t_cyc
            sw_prof = u_sw - np.sin(2.0 * math.pi * u_sw) / (2.0 * math.pi)
            x_swing = x_lo + (x_td + step - x_lo) * sw_prof
            foot_x = np.where(stance, x_stance, x_swing)
            g_here, g_next = jitter[leg, k], jitter[leg, k + 1]
            pen_leg = depth * _stance_profile(u_st) * stance
            z_stance = g_here - pen_leg
            z_swing = (g_here + (g_next - g_here) * _smoothstep(u_sw)
                       + params.step_height * np.sin(math.pi * u_sw) ** 2)
            fz = np.where(stance, z_stance, z_swing)
        else:
            foot_x = np.full(n, hip_off[0])
            pen_leg = np.full(n, depth)
            fz = -pen_leg
        foot_z[:, leg] = fz
        pen[:, leg] = pen_leg
        target = np.stack([foot_x - base_pos[:, 0] - hip_off[0],
                           np.full(n, foot_y - hip_off[1]),
                           fz - z_b], axis=-1)
        q[:, leg, :] = _leg_ik(target, d_lat, l1, l2)

    # ground model: vertical spring minus damper on the foot's normal velocity
    fz_dot = np.gradient(foot_z, dt, axis=0)
    f_normal = np.where(pen > 0.0,
                        np.maximum(params.k_p * pen - params.k_d * fz_dot, 0.0), 0.0)
    grf_z = f_normal / cos_t  # world-vertical force: normal plus friction share
    contact = (grf_z > params.contact_threshold).astype(float)

    qd = np.gradient(q, dt, axis=0)
    qdd = np.gradient(qd, dt, axis=0)

    lin_acc = np.stack([np.zeros(n), np.zeros(n), zdd_b], axis=-1)
    base = dynamics.BaseState(rotation=r_base, lin_acc=lin_acc)
    g_b = np.einsum("ji,j->i", r_base, dynamics.GRAVITY)
    imu = lin_acc - g_b

    p = np.zeros((n, LEGS, 3))
    tau = np.zeros((n, LEGS, 3))
    for leg in range(LEGS):
        chain = chains[leg]
        frames = dynamics.forward_kinematics(chain, q[:, leg, :])
        p[:, leg, :] = frames.foot
        jac = dynamics.foot_jacobian(chain, q[:, leg, :])
        f_base = np.stack([f_normal[:, leg] * math.tan(theta), np.zeros(n),
                           f_normal[:, leg]], axis=-1)
        tau[:, leg, :] = (dynamics.inverse_dynamics(chain, q[:, leg, :], qd[:, leg, :],
                                                    qdd[:, leg, :], base)
                          - np.einsum("nij,ni->nj", jac, f_base))
    v = np.gradient(p, dt, axis=0)

    data = np.zeros((n, len(COLUMNS)))
    data[:, 0] = t
    data[:, Q_SL] = q.reshape(n, 12)
    data[:, DQ_SL] = qd.reshape(n, 12)
    data[:, TAU_SL] = tau.reshape(n, 12)
    data[:, AB_SL] = imu
    data[:, P_SL] = p.reshape(n, 12)
    data[:, V_SL] = v.reshape(n, 12)
    data[:, POSE_SL] = base_pos @ r_base.T
    data[:, QUAT_SL] = [math.cos(-theta / 2.0), 0.0, math.sin(-theta / 2.0), 0.0]
    data[:, GRF_SL] = grf_z
    data[:, C_SL] = contact

    scale = params.noise
    if scale > 0:
        for group, sl in _NOISE_GROUPS:
            std = scale * params.noise_std.get(group, 0.0)
            if std > 0:
                data[:, sl] += rng.normal(0.0, std, data[:, sl].shape)

    name = params.name or (f"{params.gait}_mu{params.mu:g}_s{params.slope_deg:g}"
                           f"_v{params.speed:g}_r{params.rough:g}_seed{params.seed}")
    meta = {"name": name, "robot": robot.name, "rate_hz": params.rate_hz,
            "total_mass": total_mass, "gen_params": _params_dict(params)}
    return SequenceDataset(meta, data)


def _params_dict(params: GenParams) -> dict:
    d = asdict(params)
    d["noise_std"] = dict(d["noise_std"])
    return d


@dataclass(frozen=True)
class Window:
    seq: SequenceDataset
    start: int

    @property
    def data(self) -> np.ndarray:
        return self.seq.data[self.start:self.start + WINDOW_LEN]

    def contact_label(self) -> np.ndarray:
        return self.seq.data[self.start + WINDOW_LEN - 1, C_SL].astype(np.intp)

    def grf_label(self) -> np.ndarray:
        return self.seq.data[self.start + WINDOW_LEN - 1, GRF_SL].copy()


def make_windows(ds: SequenceDataset, stride: int = 1) -> list[Window]:
    """Sliding 150-step windows labeled by their final sample."""
    if len(ds) < WINDOW_LEN:
        raise TooShort(f"sequence has {len(ds)} samples, need >= {WINDOW_LEN}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return [Window(ds, s) for s in range(0, len(ds) - WINDOW_LEN + 1, stride)]


def _node_channel_columns(graph: MorphologyGraph, task: str) -> dict[str, np.ndarray]:
    """Dataset column indices observed by each node, keyed by node type;
    for J/F a (n_nodes, n_signals) matrix in the network's node row order."""
    if task not in ("contact", "grf"):
        raise TaskMismatch(f"unknown task {task!r}")
    jpos = {nid: i for i, nid in enumerate(graph.joint_order)}
    fpos = {nid: i for i, nid in enumerate(graph.foot_order)}
    j_ids = sorted(n.id for n in graph.nodes if n.node_type == JOINT)
    f_ids = sorted(n.id for n in graph.nodes if n.node_type == FOOT)
    out = {BASE: np.array([[COL[f"ab{i}"] for i in range(3)]
                           + [COL[f"wb{i}"] for i in range(3)]])}
    j_rows = []
    for nid in j_ids:
        i = jpos[nid]
        row = [COL[f"q{i:02d}"], COL[f"dq{i:02d}"]]
        if task == "grf":
            row.append(COL[f"tau{i:02d}"])
        j_rows.append(row)
    out[JOINT] = np.array(j_rows)
    if task == "contact":
        out[FOOT] = np.array([[COL[f"p{fpos[nid]}{a}"] for a in range(3)]
                              + [COL[f"v{fpos[nid]}{a}"] for a in range(3)]
                              for nid in f_ids])
    else:
        out[FOOT] = None  # constant placeholder input
    return out


def regroup(window: Window, task: str, graph: MorphologyGraph) -> hg.GraphSample:
    """Reorganize a window onto graph nodes, un-normalized.

    Each node's vector concatenates its signals' 150-step histories, one
    contiguous block per scalar channel. The GRF task appends torque to the
    joint channels and replaces foot inputs with the constant 1.0.
    """
    cols = _node_channel_columns(graph, task)
    raw = window.data
    inputs: dict[int, np.ndarray] = {}
    for t, ids in ((BASE, [graph.base_id()]),
                   (JOINT, sorted(n.id for n in graph.nodes if n.node_type == JOINT)),
                   (FOOT, sorted(n.id for n in graph.nodes if n.node_type == FOOT))):
        for r, nid in enumerate(ids):
            if cols[t] is None:
                inputs[nid] = np.ones(1)
            else:
                inputs[nid] = raw[:, cols[t][r]].T.reshape(-1).copy()
    labels = window.contact_label() if task == "contact" else window.grf_label()
    return hg.GraphSample(inputs, labels.astype(float))


def normalize(sample: hg.GraphSample) -> hg.GraphSample:
    """Z-score each 150-step channel block over the window; near-constant
    blocks are centered only. Length-1 placeholder inputs pass through.
    Idempotent up to roundoff; labels untouched."""
    out = {}
    for nid, vec in sample.inputs.items():
        if vec.size % WINDOW_LEN == 0 and vec.size > 0:
            blocks = vec.reshape(-1, WINDOW_LEN)
            mean = blocks.mean(axis=1, keepdims=True)
            std = blocks.std(axis=1, keepdims=True)
            out[nid] = ((blocks - mean) / np.where(std < 1e-8, 1.0, std)).reshape(-1)
        else:
            out[nid] = vec.copy()
    return hg.GraphSample(out, sample.labels.copy())


def _normalized_stack(windows: list[Window], cols: np.ndarray) -> np.ndarray:
    """(k, 150, n_cols) of per-window time-wise z-scored channels."""
    raw = np.stack([w.data[:, cols] for w in windows])
    mean = raw.mean(axis=1, keepdims=True)
    std = raw.std(axis=1, keepdims=True)
    return (raw - mean) / np.where(std < 1e-8, 1.0, std)


def collate_windows(windows: list[Window], task: str,
                    graph: MorphologyGraph) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Batch windows into the network's stacked per-type layout, applying
    the per-window normalization. Returns (inputs by node type, labels)."""
    cols = _node_channel_columns(graph, task)
    k = len(windows)
    out: dict[str, np.ndarray] = {}
    for t in (BASE, JOINT, FOOT):
        if cols[t] is None:
            out[t] = np.ones((k * LEGS, 1))
            continue
        mat = cols[t]  # (n_nodes, n_signals)
        normed = _normalized_stack(windows, mat.reshape(-1))
        blocks = normed.reshape(k, WINDOW_LEN, mat.shape[0], mat.shape[1])
        out[t] = blocks.transpose(0, 2, 3, 1).reshape(k * mat.shape[0],
                                                      mat.shape[1] * WINDOW_LEN)
    if task == "contact":
        labels = np.stack([w.contact_label() for w in windows])
    else:
        labels = np.stack([w.grf_label() for w in windows])
    return out, labels


MLP_CHANNELS = list(range(1, 43))  # q, dq, tau, ab, wb


def collate_flat_windows(windows: list[Window]) -> tuple[np.ndarray, np.ndarray]:
    """Flattened 6300-dim inputs for the MLP baseline (42 channels x 150,
    channel-major), normalized like the graph inputs; GRF labels."""
    cols = np.array(MLP_CHANNELS)
    normed = _normalized_stack(windows, cols)
    k = len(windows)
    xs = normed.transpose(0, 2, 1).reshape(k, cols.size * WINDOW_LEN)
    labels = np.stack([w.grf_label() for w in windows])
    return xs, labels


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...] = ()

    def __init__(self, train, val, test=()):
        object.__setattr__(self, "train", tuple(train))
        object.__setattr__(self, "val", tuple(val))
        object.__setattr__(self, "test", tuple(test))


def split(sequences: list[SequenceDataset], spec: SplitSpec) -> dict[str, list[SequenceDataset]]:
    """Assign whole sequences to train/val/test; windows never straddle
    splits because windows are cut per sequence."""
    by_name = {}
    for ds in sequences:
        if ds.name in by_name:
            raise OverlappingSpec(f"duplicate sequence name {ds.name!r}")
        by_name[ds.name] = ds
    assigned: set[str] = set()
    out: dict[str, list[SequenceDataset]] = {}
    for part, names in (("train", spec.train), ("val", spec.val), ("test", spec.test)):
        picked = []
        for name in names:
            if name in assigned:
                raise OverlappingSpec(f"sequence {name!r} assigned twice")
            if name not in by_name:
                raise SplitError(f"unknown sequence {name!r}")
            assigned.add(name)
            picked.append(by_name[name])
        out[part] = picked
    if not out["train"] or not out["val"]:
        raise SplitError("train and val splits must be non-empty")
    missing = set(by_name) - assigned
    if missing:
        raise SplitError(f"sequences not assigned to any split: {sorted(missing)}")
    return out
