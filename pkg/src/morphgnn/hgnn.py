"""Heterogeneous graph network over the robot morphology graph.

Per-node-type affine encoders feed typed embeddings; each message-passing
layer owns, per directed relation (src type, dst type) present in the
graph, a pair of h x h matrices and a bias: destinations receive
``W1 v_dst + W2 sum_{src neighbors} v_src + b`` summed over their incoming
relations, through a ReLU. An affine decoder reads the foot nodes. All
edges of one relation share parameters, which makes the network
equivariant under relabelings of identical legs.

Node embeddings for a batch are stored as one matrix per node type
(sample-major rows), so a minibatch is evaluated exactly as the disjoint
union of its graphs. Parameters may be read concurrently; training mutates
them and must be serialized externally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import numcore as nc
from .morphology import BASE, FOOT, JOINT, NODE_TYPES, MorphologyGraph

CONTACT_INPUT_DIMS = {BASE: 900, JOINT: 300, FOOT: 900}
GRF_INPUT_DIMS = {BASE: 900, JOINT: 450, FOOT: 1}


@dataclass(frozen=True)
class HgnnConfig:
    hidden_size: int
    num_layers: int
    task: str  # "contact" | "grf"
    input_dims: dict[str, int]
    output_dim: int
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size < 1 or self.num_layers < 1:
            raise ValueError("hidden_size and num_layers must be >= 1")
        if self.task not in ("contact", "grf"):
            raise ValueError(f"unknown task {self.task!r}")
        if set(self.input_dims) != set(NODE_TYPES):
            raise ValueError(f"input_dims must cover {NODE_TYPES}")
        if self.output_dim not in (1, 2):
            raise ValueError("output_dim must be 1 or 2")

    @classmethod
    def for_task(cls, task: str, hidden_size: int = 128, num_layers: int = 8,
                 seed: int = 0) -> "HgnnConfig":
        if task == "contact":
            return cls(hidden_size, num_layers, task, dict(CONTACT_INPUT_DIMS), 2, seed)
        if task == "grf":
            return cls(hidden_size, num_layers, task, dict(GRF_INPUT_DIMS), 1, seed)
        raise ValueError(f"unknown task {task!r}")


@dataclass
class GraphSample:
    """Per-node input vectors keyed by node id, plus per-foot labels in
    the graph's canonical foot order."""
    inputs: dict[int, np.ndarray]
    labels: np.ndarray


def _rel_key(rel: tuple[str, str]) -> str:
    return f"{rel[0]}>{rel[1]}"


class _GraphStruct:
    """Index plumbing for evaluating the graph type-blockwise."""

    def __init__(self, graph: MorphologyGraph):
        self.graph = graph
        self.type_nodes = {t: [n.id for n in graph.nodes if n.node_type == t]
                           for t in NODE_TYPES}
        self.pos = {nid: i for t in NODE_TYPES for i, nid in enumerate(self.type_nodes[t])}
        self.relations = graph.relations()
        self.rel_info = {}
        for rel in self.relations:
            by_dst: dict[int, list[int]] = {}
            for e in graph.edges:
                if e.relation == rel:
                    by_dst.setdefault(self.pos[e.dst], []).append(self.pos[e.src])
            dst_sel = np.array(sorted(by_dst), dtype=np.intp)
            max_deg = max(len(v) for v in by_dst.values())
            slots = []
            for k in range(max_deg):
                pairs = [(i, sorted(by_dst[d])[k]) for i, d in enumerate(dst_sel)
                         if len(by_dst[d]) > k]
                slots.append((np.array([p[0] for p in pairs], dtype=np.intp),
                              np.array([p[1] for p in pairs], dtype=np.intp)))
            self.rel_info[rel] = {
                "dst_sel": dst_sel,
                "full": len(dst_sel) == len(self.type_nodes[rel[1]]),
                "slots": slots,
            }
        self.foot_pos = np.array([self.pos[f] for f in graph.foot_order], dtype=np.intp)
        self._batched: dict[int, dict] = {}

    def batched(self, k: int) -> dict:
        """Index arrays for a batch of k samples laid out sample-major."""
        if k in self._batched:
            return self._batched[k]
        counts = {t: len(self.type_nodes[t]) for t in NODE_TYPES}

        def inflate(idx: np.ndarray, n: int) -> np.ndarray:
            return (idx[None, :] + (np.arange(k) * n)[:, None]).ravel()

        rels = {}
        for rel, info in self.rel_info.items():
            n_src, n_dst = counts[rel[0]], counts[rel[1]]
            n_sel = len(info["dst_sel"])
            rels[rel] = {
                "full": info["full"],
                "dst_sel": None if info["full"] else inflate(info["dst_sel"], n_dst),
                "n_sel_rows": k * n_sel,
                "n_dst_rows": k * n_dst,
                "slots": [(inflate(dp, n_sel), inflate(sp, n_src))
                          for dp, sp in info["slots"]],
            }
        out = {"rels": rels, "counts": counts,
               "foot_rows": inflate(self.foot_pos, counts[FOOT])}
        self._batched[k] = out
        return out


class HgnnModel:
    def __init__(self, graph: MorphologyGraph, cfg: HgnnConfig,
                 params: dict[str, nc.Tensor]):
        self.graph = graph
        self.cfg = cfg
        self.params = params
        self.struct = _GraphStruct(graph)

    def parameters(self) -> list[nc.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def num_floats(self) -> int:
        return sum(p.data.size for p in self.params.values())


def _param_keys(relations: list[tuple[str, str]], cfg: HgnnConfig):
    """(key, rows, cols, fan_in) in deterministic creation order."""
    h = cfg.hidden_size
    out = []
    for t in NODE_TYPES:
        d = cfg.input_dims[t]
        out.append((f"enc.{t}.W", d, h, d))
        out.append((f"enc.{t}.b", 1, h, d))
    for layer in range(cfg.num_layers):
        for rel in relations:
            rk = _rel_key(rel)
            out.append((f"mp.{layer}.{rk}.W1", h, h, h))
            out.append((f"mp.{layer}.{rk}.W2", h, h, h))
            out.append((f"mp.{layer}.{rk}.b", 1, h, h))
    out.append(("dec.W", h, cfg.output_dim, h))
    out.append(("dec.b", 1, cfg.output_dim, h))
    return out


def init_model(graph: MorphologyGraph, cfg: HgnnConfig) -> HgnnModel:
    """Fresh model with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameters,
    deterministic in cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for key, rows, cols, fan_in in _param_keys(graph.relations(), cfg):
        bound = 1.0 / np.sqrt(fan_in)
        params[key] = nc.Tensor(rng.uniform(-bound, bound, (rows, cols)),
                                requires_grad=True)
    return HgnnModel(graph, cfg, params)


def count_params(graph: MorphologyGraph, cfg: HgnnConfig) -> int:
    """Closed-form float count; equals init_model's stored float count."""
    h, n_y = cfg.hidden_size, cfg.output_dim
    enc = sum(h * (cfg.input_dims[t] + 1) for t in NODE_TYPES)
    mp = cfg.num_layers * len(graph.relations()) * (2 * h * h + h)
    return enc + mp + (h + 1) * n_y


def forward_tensor(model: HgnnModel, x_by_type: dict[str, np.ndarray],
                   batch: int) -> nc.Tensor:
    """Differentiable forward over stacked per-type inputs.

    ``x_by_type[t]`` is (batch * n_t, input_dims[t]) sample-major; returns
    foot outputs (batch * n_feet, output_dim) ordered by foot_order within
    each sample.
    """
    p = model.params
    idx = model.struct.batched(batch)
    v = {}
    for t in NODE_TYPES:
        x = nc.Tensor(x_by_type[t])
        v[t] = nc.add(nc.matmul(x, p[f"enc.{t}.W"]), p[f"enc.{t}.b"]).relu()
    for layer in range(model.cfg.num_layers):
        out: dict[str, nc.Tensor | None] = {t: None for t in NODE_TYPES}
        for rel in model.struct.relations:
            src_t, dst_t = rel
            ri = idx["rels"][rel]
            rk = _rel_key(rel)
            agg = None
            for dst_pos, src_pos in ri["slots"]:
                part = nc.scatter_rows(nc.select_rows(v[src_t], src_pos),
                                       dst_pos, ri["n_sel_rows"])
                agg = part if agg is None else nc.add(agg, part)
            dst = v[dst_t] if ri["full"] else nc.select_rows(v[dst_t], ri["dst_sel"])
            term = nc.add(nc.add(nc.matmul(dst, p[f"mp.{layer}.{rk}.W1"]),
                                 nc.matmul(agg, p[f"mp.{layer}.{rk}.W2"])),
                          p[f"mp.{layer}.{rk}.b"])
            if not ri["full"]:
                term = nc.scatter_rows(term, ri["dst_sel"], ri["n_dst_rows"])
            prev = out[dst_t]
            out[dst_t] = term if prev is None else nc.add(prev, term)
        v = {t: out[t].relu() for t in NODE_TYPES}
    feet = nc.select_rows(v[FOOT], idx["foot_rows"])
    return nc.add(nc.matmul(feet, p["dec.W"]), p["dec.b"])


def sample_type_arrays(model: HgnnModel, samples: list[GraphSample]) -> dict[str, np.ndarray]:
    """Stack per-node sample inputs into the sample-major per-type layout."""
    st = model.struct
    out = {}
    for t in NODE_TYPES:
        d = model.cfg.input_dims[t]
        rows = []
        for s in samples:
            for nid in st.type_nodes[t]:
                x = np.asarray(s.inputs[nid], float).reshape(-1)
                if x.size != d:
                    raise nc.ShapeMismatch(
                        f"node {nid} input has {x.size} values, expected {d}")
                rows.append(x)
        out[t] = np.vstack(rows) if rows else np.zeros((0, d))
    return out


def forward(model: HgnnModel, sample: GraphSample) -> np.ndarray:
    """Foot outputs (n_feet, output_dim) for one sample; raw logits for the
    contact task."""
    y = forward_tensor(model, sample_type_arrays(model, [sample]), 1)
    return y.data.copy()


def forward_batch(model: HgnnModel, samples: list[GraphSample]) -> np.ndarray:
    """Disjoint-union evaluation of several samples: (k, n_feet, output_dim)."""
    y = forward_tensor(model, sample_type_arrays(model, samples), len(samples))
    n_f = len(model.graph.foot_order)
    return y.data.reshape(len(samples), n_f, model.cfg.output_dim).copy()


def save_checkpoint(model: HgnnModel, path: str) -> None:
    doc = {
        "kind": "hgnn",
        "config": asdict(model.cfg),
        "graph_fingerprint": model.graph.fingerprint(),
        "params": {k: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
                   for k, t in model.params.items()},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path: str, graph: MorphologyGraph) -> HgnnModel:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("kind") != "hgnn":
        raise ValueError(f"not an hgnn checkpoint: kind={doc.get('kind')!r}")
    if doc["graph_fingerprint"] != graph.fingerprint():
        raise ValueError("checkpoint was saved for a different morphology graph")
    cfg = HgnnConfig(**doc["config"])
    params = {}
    for key, rows, cols, _ in _param_keys(graph.relations(), cfg):
        entry = doc["params"][key]
        if entry["shape"] != [rows, cols]:
            raise ValueError(f"parameter {key} has shape {entry['shape']}, "
                             f"expected {[rows, cols]}")
        params[key] = nc.Tensor(np.array(entry["data"]).reshape(rows, cols),
                                requires_grad=True)
    return HgnnModel(graph, cfg, params)
