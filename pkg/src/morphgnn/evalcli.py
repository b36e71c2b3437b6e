"""Evaluation metrics and the command-line interface.

Contact metrics follow the harsh joint-state convention: per-leg binary F1
(contact positive), their mean, and 16-state accuracy where a sample only
counts if all four feet are right. Force metrics are RMSE pooled over feet
and samples, per sequence and total.

CLI subcommands: ``graph``, ``count-params``, ``gen-data``, ``train``,
``eval``, ``fbd``. Exit codes: 0 success, 1 runtime failure, 2 usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import data as dt
from . import dynamics
from . import hgnn as hg
from . import morphology
from . import training


@dataclass
class ContactMetrics:
    f1_per_leg: list[float]
    f1_avg: float
    state_accuracy_16: float
    confusion: list[dict[str, int]]  # per leg: tp, fp, fn, tn

    def to_dict(self) -> dict:
        return {"f1_per_leg": self.f1_per_leg, "f1_avg": self.f1_avg,
                "state_accuracy_16": self.state_accuracy_16,
                "confusion": self.confusion}


@dataclass
class GrfMetrics:
    rmse_per_sequence: dict[str, float]
    rmse_total: float

    def to_dict(self) -> dict:
        return {"rmse_per_sequence": self.rmse_per_sequence,
                "rmse_total": self.rmse_total}


def contact_metrics(pred_logits: np.ndarray, labels: np.ndarray) -> ContactMetrics:
    """pred_logits (n, 4, 2), labels (n, 4) in canonical foot order.

    Class = argmax of the two logits (ties resolve to 0, no contact). The
    16-state index is ``8*c0 + 4*c1 + 2*c2 + c3`` over foot order.
    """
    pred_logits = np.asarray(pred_logits, float)
    labels = np.asarray(labels)
    if pred_logits.shape[:2] != labels.shape or pred_logits.shape[2] != 2:
        raise ValueError(f"shape mismatch: {pred_logits.shape} vs {labels.shape}")
    pred = (pred_logits[..., 1] > pred_logits[..., 0]).astype(np.intp)
    truth = labels.astype(np.intp)
    f1s, confusion, leg_acc = [], [], []
    for leg in range(labels.shape[1]):
        tp = int(((pred[:, leg] == 1) & (truth[:, leg] == 1)).sum())
        fp = int(((pred[:, leg] == 1) & (truth[:, leg] == 0)).sum())
        fn = int(((pred[:, leg] == 0) & (truth[:, leg] == 1)).sum())
        tn = int(((pred[:, leg] == 0) & (truth[:, leg] == 0)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom else 0.0)
        confusion.append({"tp": tp, "fp": fp, "fn": fn, "tn": tn})
        leg_acc.append((tp + tn) / labels.shape[0])
    state_acc = float((pred == truth).all(axis=1).mean())
    if state_acc > min(leg_acc) + 1e-12:
        raise AssertionError("16-state accuracy exceeded a per-leg accuracy")
    return ContactMetrics(f1s, float(np.mean(f1s)), state_acc, confusion)


def state16(contacts: np.ndarray) -> np.ndarray:
    """Joint contact state index from per-foot bits, MSB = first foot."""
    c = np.asarray(contacts, dtype=np.intp)
    return c @ np.array([8, 4, 2, 1], dtype=np.intp)


def grf_rmse(pred: np.ndarray, truth: np.ndarray, groups=None) -> GrfMetrics:
    """RMSE pooled over feet and samples, per sequence group and total."""
    pred = np.asarray(pred, float)
    truth = np.asarray(truth, float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    sq = (pred - truth) ** 2
    per = {}
    if groups is not None:
        groups = np.asarray(groups)
        for g in dict.fromkeys(groups.tolist()):  # first-appearance order
            per[str(g)] = float(np.sqrt(sq[groups == g].mean()))
    return GrfMetrics(per, float(np.sqrt(sq.mean())))


def fbd_sequence(robot: morphology.RobotModel, ds: dt.SequenceDataset,
                 cond_threshold: float = 1e6) -> tuple[np.ndarray, np.ndarray]:
    """Model-based per-leg vertical force estimates for every sample.

    Uses measured joint states and torques, joint accelerations from
    differentiated joint rates, the IMU specific force, and the ground
    truth orientation. Returns (world-Z forces (n, 4), validity flags);
    near-singular samples are flagged and report zero.
    """
    chains = dynamics.extract_leg_chains(robot)
    n = len(ds)
    q = ds.data[:, dt.Q_SL].reshape(n, 4, 3)
    qd = ds.data[:, dt.DQ_SL].reshape(n, 4, 3)
    tau = ds.data[:, dt.TAU_SL].reshape(n, 4, 3)
    rot = dynamics.quat_to_matrix(ds.data[0, dt.QUAT_SL])
    base = dynamics.BaseState.from_imu(rot, ds.data[:, dt.AB_SL])
    forces = np.zeros((n, 4))
    flags = np.zeros((n, 4), dtype=bool)
    for leg in range(4):
        qdd = dynamics.estimate_derivatives(qd[:, leg], ds.dt)
        f_base, ok = dynamics.fbd_grf_batch(chains[leg], q[:, leg], qd[:, leg],
                                            qdd, tau[:, leg], base, cond_threshold)
        forces[:, leg] = (f_base @ rot.T)[:, 2]
        flags[:, leg] = ok
    return forces, flags


def _sha256_file(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _load_robot(path: str) -> morphology.RobotModel:
    with open(path) as f:
        return morphology.parse_urdf(f.read())


def _cmd_graph(args) -> int:
    graph = morphology.build_graph(_load_robot(args.urdf))
    counts = {t: sum(1 for n in graph.nodes if n.node_type == t) for t in ("B", "J", "F")}
    print(f"nodes: {len(graph.nodes)} (B={counts['B']} J={counts['J']} F={counts['F']})")
    print(f"directed edges: {len(graph.edges)}")
    print(f"relations: {', '.join('>'.join(r) for r in graph.relations())}")
    print(f"fingerprint: {graph.fingerprint()}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(graph.to_json_dict(), f, indent=1)
        print(f"wrote {args.json}")
    return 0


def _cmd_count_params(args) -> int:
    graph = morphology.build_graph(_load_robot(args.urdf))
    cfg = hg.HgnnConfig.for_task(args.task, args.hidden, args.layers)
    print(hg.count_params(graph, cfg))
    return 0


def _cmd_gen_data(args) -> int:
    robot = _load_robot(args.urdf)
    params = dt.GenParams(mu=args.mu, slope_deg=args.slope, speed=args.speed,
                          gait=args.gait, duration=args.duration, seed=args.seed,
                          noise=args.noise, rough=args.rough, name=args.name)
    ds = dt.generate_sequence(params, robot)
    dt.save_sequence(ds, args.out)
    print(f"wrote {args.out}: {len(ds)} samples of sequence {ds.name!r}")
    return 0


def _windows_for(split_part: list[dt.SequenceDataset], stride: int) -> list[dt.Window]:
    out: list[dt.Window] = []
    for ds in split_part:
        out.extend(dt.make_windows(ds, stride))
    return out


def _cmd_train(args) -> int:
    with open(args.config) as f:
        cfg_doc = json.load(f)
    tc = training.TrainConfig(task=args.task, **cfg_doc.get("train", {}))
    stride = cfg_doc.get("stride", 1)
    train_w = _windows_for([dt.load_sequence(f"{args.data_dir}/{name}")
                            for name in cfg_doc["split"]["train"]], stride)
    val_w = _windows_for([dt.load_sequence(f"{args.data_dir}/{name}")
                          for name in cfg_doc["split"]["val"]], stride)

    model_doc = cfg_doc.get("model", {})
    kind = model_doc.get("kind", "hgnn")
    if kind == "hgnn":
        graph = morphology.build_graph(_load_robot(args.urdf))
        mcfg = hg.HgnnConfig.for_task(args.task,
                                      model_doc.get("hidden_size", 128),
                                      model_doc.get("num_layers", 8),
                                      model_doc.get("seed", 0))
        model = hg.init_model(graph, mcfg)
    elif kind == "mlp":
        if args.task != "grf":
            raise ValueError("the MLP baseline is a GRF regressor")
        model = training.build_mlp(training.MlpConfig(seed=model_doc.get("seed", 0)))
    else:
        raise ValueError(f"unknown model kind {kind!r}")

    report = training.train(model, train_w, val_w, tc)
    if kind == "hgnn":
        hg.save_checkpoint(model, args.out)
    else:
        training.save_mlp_checkpoint(model, args.out)
    training.write_training_log(report, args.log or args.out + ".log.csv")
    print(f"epochs: {report.epochs_run}  best: {report.best_epoch} "
          f"(val {report.val_losses[report.best_epoch - 1]:.6g})  "
          f"wall: {report.wall_time_s:.1f}s")
    print(f"wrote {args.out}")
    return 0


def _load_any_checkpoint(path: str, urdf: str | None):
    with open(path) as f:
        kind = json.load(f).get("kind")
    if kind == "hgnn":
        if urdf is None:
            raise ValueError("--urdf is required to evaluate an hgnn checkpoint")
        graph = morphology.build_graph(_load_robot(urdf))
        return hg.load_checkpoint(path, graph), "hgnn"
    if kind == "mlp":
        return training.load_mlp_checkpoint(path), "mlp"
    raise ValueError(f"unknown checkpoint kind {kind!r}")


def _cmd_eval(args) -> int:
    model, kind = _load_any_checkpoint(args.checkpoint, args.urdf)
    task = model.cfg.task if kind == "hgnn" else "grf"
    metrics_doc: dict
    dataset_names = []
    if task == "contact":
        logits, labels = [], []
        for path in args.data:
            ds = dt.load_sequence(path)
            dataset_names.append(ds.name)
            windows = dt.make_windows(ds, args.stride)
            logits.append(training.predict(model, windows, task))
            labels.append(np.stack([w.contact_label() for w in windows]))
        m = contact_metrics(np.concatenate(logits), np.concatenate(labels))
        metrics_doc = m.to_dict()
    else:
        preds, truths, groups = [], [], []
        for path in args.data:
            ds = dt.load_sequence(path)
            dataset_names.append(ds.name)
            windows = dt.make_windows(ds, args.stride)
            preds.append(training.predict(model, windows, task))
            truths.append(np.stack([w.grf_label() for w in windows]))
            groups.extend([ds.name] * len(windows))
        m = grf_rmse(np.concatenate(preds), np.concatenate(truths), np.array(groups))
        metrics_doc = m.to_dict()
    report = {"task": task, "dataset": dataset_names, "metrics": metrics_doc,
              "config_hash": hashlib.sha256(
                  json.dumps(model.cfg.__dict__, sort_keys=True, default=str).encode()
              ).hexdigest(),
              "checkpoint_hash": _sha256_file(args.checkpoint)}
    with open(args.report, "w") as f:
        json.dump(report, f, indent=1)
    print(json.dumps(metrics_doc, indent=1))
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("metric,value\n")
            for key, value in metrics_doc.items():
                if isinstance(value, (int, float)):
                    f.write(f"{key},{value!r}\n")
    print(f"wrote {args.report}")
    return 0


def _cmd_fbd(args) -> int:
    robot = _load_robot(args.urdf)
    ds = dt.load_sequence(args.data)
    chains = dynamics.extract_leg_chains(robot)
    n = len(ds)
    q = ds.data[:, dt.Q_SL].reshape(n, 4, 3)
    qd = ds.data[:, dt.DQ_SL].reshape(n, 4, 3)
    tau = ds.data[:, dt.TAU_SL].reshape(n, 4, 3)
    rot = dynamics.quat_to_matrix(ds.data[0, dt.QUAT_SL])
    base = dynamics.BaseState.from_imu(rot, ds.data[:, dt.AB_SL])
    with open(args.out, "w") as f:
        f.write("t,leg,Fx,Fy,Fz,flag\n")
        for leg in range(4):
            qdd = dynamics.estimate_derivatives(qd[:, leg], ds.dt)
            fb, ok = dynamics.fbd_grf_batch(chains[leg], q[:, leg], qd[:, leg],
                                            qdd, tau[:, leg], base)
            fw = fb @ rot.T  # world frame
            for i in range(n):
                if ok[i]:
                    f.write(f"{ds.data[i, 0]!r},{leg},{fw[i, 0]!r},{fw[i, 1]!r},{fw[i, 2]!r},1\n")
                else:
                    f.write(f"{ds.data[i, 0]!r},{leg},nan,nan,nan,0\n")
    print(f"wrote {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="morphgnn",
                                description="morphology-graph contact perception toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="compile a robot description to its morphology graph")
    g.add_argument("urdf")
    g.add_argument("--json", help="write the graph dump to this path")
    g.set_defaults(func=_cmd_graph)

    c = sub.add_parser("count-params", help="parameter count for a model configuration")
    c.add_argument("urdf")
    c.add_argument("--layers", type=int, required=True)
    c.add_argument("--hidden", type=int, required=True)
    c.add_argument("--task", choices=("contact", "grf"), required=True)
    c.set_defaults(func=_cmd_count_params)

    d = sub.add_parser("gen-data", help="generate a synthetic gait sequence")
    d.add_argument("--urdf", required=True)
    d.add_argument("--mu", type=float, default=1.0)
    d.add_argument("--slope", type=float, default=0.0)
    d.add_argument("--speed", type=float, default=0.5)
    d.add_argument("--gait", choices=("trot", "stand"), default="trot")
    d.add_argument("--duration", type=float, default=10.0)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--noise", type=float, default=1.0)
    d.add_argument("--rough", type=float, default=0.0)
    d.add_argument("--name")
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--task", choices=("contact", "grf"), required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--data-dir", required=True)
    t.add_argument("--urdf", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on sequences")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--urdf")
    e.add_argument("--csv")
    e.add_argument("--stride", type=int, default=1)
    e.set_defaults(func=_cmd_eval)

    f = sub.add_parser("fbd", help="model-based per-leg force estimates")
    f.add_argument("--urdf", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=_cmd_fbd)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return args.func(args)
    except Exception as e:  # diagnostics to stderr, exit 1
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
