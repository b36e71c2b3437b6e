"""URDF parsing and compilation into the typed robot-morphology graph.

A robot's kinematic tree maps to a heterogeneous graph: one Base node for
the trunk frame, one Joint node per revolute joint, one Foot node per fixed
joint whose child link is a leaf. Links become undirected connections
(stored as two directed edges) and every edge carries the ordered pair of
its endpoint types as its relation.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

BASE = "B"
JOINT = "J"
FOOT = "F"
NODE_TYPES = (BASE, JOINT, FOOT)


class MorphologyError(ValueError):
    pass


class MalformedXml(MorphologyError):
    pass


class UnsupportedJointType(MorphologyError):
    pass


class DisconnectedTree(MorphologyError):
    pass


class DuplicateName(MorphologyError):
    pass


class NoFootFound(MorphologyError):
    pass


class AmbiguousBase(MorphologyError):
    pass


@dataclass(frozen=True)
class Link:
    name: str
    mass: float = 0.0
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inertia: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str  # "revolute" | "fixed"
    parent_link: str
    child_link: str
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray
    axis: np.ndarray | None = None  # unit, revolute only


@dataclass
class RobotModel:
    name: str
    links: list[Link]
    joints: list[Joint]

    def __post_init__(self):
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise DuplicateName("duplicate link name")
        jnames = [j.name for j in self.joints]
        if len(set(jnames)) != len(jnames):
            raise DuplicateName("duplicate joint name")
        self.link_map = {l.name: l for l in self.links}
        self.joint_map = {j.name: j for j in self.joints}
        children: set[str] = set()
        for j in self.joints:
            if j.parent_link not in self.link_map or j.child_link not in self.link_map:
                raise DisconnectedTree(f"joint {j.name} references unknown link")
            if j.child_link in children:
                raise DisconnectedTree(f"link {j.child_link} has two parent joints")
            children.add(j.child_link)
        roots = [n for n in names if n not in children]
        if len(roots) != 1:
            raise DisconnectedTree(f"expected one root link, found {roots}")
        self.root = roots[0]
        # reachability from the root proves the single tree
        reached = {self.root}
        frontier = [self.root]
        while frontier:
            link = frontier.pop()
            for j in self.joints:
                if j.parent_link == link and j.child_link not in reached:
                    reached.add(j.child_link)
                    frontier.append(j.child_link)
        if reached != set(names):
            raise DisconnectedTree(f"links not reachable from root: {sorted(set(names) - reached)}")
        for j in self.joints:
            if j.kind == "revolute" and abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise MalformedXml(f"joint {j.name} axis is not unit length")

    def parent_joint(self, link: str) -> Joint | None:
        for j in self.joints:
            if j.child_link == link:
                return j
        return None

    def child_joints(self, link: str) -> list[Joint]:
        return [j for j in self.joints if j.parent_link == link]


def _floats(text: str | None, n: int, default: float = 0.0) -> np.ndarray:
    if text is None:
        return np.full(n, default)
    vals = [float(v) for v in text.split()]
    if len(vals) != n:
        raise MalformedXml(f"expected {n} numbers, got {text!r}")
    return np.array(vals)


def _rpy_matrix(rpy: np.ndarray) -> np.ndarray:
    r, p, y = rpy
    cr, sr, cp, sp, cy, sy = math.cos(r), math.sin(r), math.cos(p), math.sin(p), math.cos(y), math.sin(y)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def parse_urdf(text: str) -> RobotModel:
    """Parse the URDF subset: links with inertials, revolute/continuous/fixed
    joints with origin and axis. Meshes, limits, mimics, transmissions are
    ignored. Inertia tensors are re-expressed in the link frame about the COM.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise MalformedXml(str(e)) from e
    if root.tag != "robot":
        raise MalformedXml(f"root element is <{root.tag}>, expected <robot>")

    links = []
    for el in root.findall("link"):
        name = el.get("name")
        if name is None:
            raise MalformedXml("link without a name")
        mass, com, inertia = 0.0, np.zeros(3), np.zeros((3, 3))
        inertial = el.find("inertial")
        if inertial is not None:
            mel = inertial.find("mass")
            mass = float(mel.get("value")) if mel is not None else 0.0
            origin = inertial.find("origin")
            if origin is not None:
                com = _floats(origin.get("xyz"), 3)
                rot = _rpy_matrix(_floats(origin.get("rpy"), 3))
            else:
                rot = np.eye(3)
            iel = inertial.find("inertia")
            if iel is not None:
                ixx, ixy, ixz = (float(iel.get(k, "0")) for k in ("ixx", "ixy", "ixz"))
                iyy, iyz, izz = (float(iel.get(k, "0")) for k in ("iyy", "iyz", "izz"))
                raw = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
                inertia = rot @ raw @ rot.T
        links.append(Link(name, mass, com, inertia))

    joints = []
    for el in root.findall("joint"):
        name = el.get("name")
        kind = el.get("type")
        if kind in ("revolute", "continuous"):
            kind = "revolute"
        elif kind != "fixed":
            raise UnsupportedJointType(f"joint {name!r} has type {kind!r}")
        parent = el.find("parent")
        child = el.find("child")
        if parent is None or child is None:
            raise MalformedXml(f"joint {name!r} missing parent/child")
        origin = el.find("origin")
        xyz = _floats(origin.get("xyz") if origin is not None else None, 3)
        rpy = _floats(origin.get("rpy") if origin is not None else None, 3)
        axis = None
        if kind == "revolute":
            ael = el.find("axis")
            axis = _floats(ael.get("xyz"), 3) if ael is not None else np.array([1.0, 0.0, 0.0])
            norm = np.linalg.norm(axis)
            if norm < 1e-12:
                raise MalformedXml(f"joint {name!r} has a zero axis")
            axis = axis / norm
        joints.append(Joint(name, kind, parent.get("link"), child.get("link"), xyz, rpy, axis))

    return RobotModel(root.get("name", "robot"), links, joints)


@dataclass(frozen=True)
class GraphNode:
    id: int
    node_type: str
    name: str  # source joint name, or root link name for the Base


@dataclass(frozen=True)
class GraphEdge:
    src: int
    dst: int
    relation: tuple[str, str]


@dataclass
class MorphologyGraph:
    nodes: list[GraphNode]
    edges: list[GraphEdge]
    foot_order: list[int]
    joint_order: list[int]

    def node_type(self, node_id: int) -> str:
        return self.nodes[node_id].node_type

    def relations(self) -> list[tuple[str, str]]:
        return sorted({e.relation for e in self.edges})

    def neighbors(self, node_id: int) -> list[int]:
        return sorted(e.dst for e in self.edges if e.src == node_id)

    def base_id(self) -> int:
        return next(n.id for n in self.nodes if n.node_type == BASE)

    def to_json_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "type": n.node_type, "name": n.name} for n in self.nodes],
            "edges": [{"src": e.src, "dst": e.dst, "relation": f"{e.relation[0]}>{e.relation[1]}"}
                      for e in sorted(self.edges, key=lambda e: (e.src, e.dst))],
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def build_graph(model: RobotModel) -> MorphologyGraph:
    """Compile a RobotModel into its morphology graph.

    Foot rule: a fixed joint whose child link is a leaf becomes a Foot node;
    other fixed joints are collapsed into their parent link. Feet are ordered
    by the name of their leg's first revolute joint; ``joint_order`` walks
    each leg chain base-to-foot in that leg order.
    """
    roots = [l.name for l in model.links if model.parent_joint(l.name) is None]
    if len(roots) != 1:
        raise AmbiguousBase(f"candidate base links: {roots}")
    root = roots[0]

    nodes = [GraphNode(0, BASE, root)]
    node_of_joint: dict[str, int] = {}
    for j in model.joints:  # document order fixes node ids
        is_leaf = not model.child_joints(j.child_link)
        if j.kind == "revolute":
            node_of_joint[j.name] = len(nodes)
            nodes.append(GraphNode(len(nodes), JOINT, j.name))
        elif j.kind == "fixed" and is_leaf:
            node_of_joint[j.name] = len(nodes)
            nodes.append(GraphNode(len(nodes), FOOT, j.name))
    if not any(n.node_type == FOOT for n in nodes):
        raise NoFootFound("no fixed joint with a leaf child link")

    def anchor(link: str) -> int:
        """Node that carries this link: the joint above it, through collapsed
        fixed joints, or the Base."""
        while True:
            if link == root:
                return 0
            j = model.parent_joint(link)
            if j.name in node_of_joint:
                return node_of_joint[j.name]
            link = j.parent_link

    edges: list[GraphEdge] = []
    for j in model.joints:
        if j.name not in node_of_joint:
            continue
        u = anchor(j.parent_link)
        v = node_of_joint[j.name]
        tu, tv = nodes[u].node_type, nodes[v].node_type
        if {tu, tv} == {BASE, FOOT}:
            raise MorphologyError(f"foot joint {j.name} attaches directly to the base")
        edges.append(GraphEdge(u, v, (tu, tv)))
        edges.append(GraphEdge(v, u, (tv, tu)))

    def path_joints(foot_joint_name: str) -> list[str]:
        """Revolute joints on the base->foot path, base first."""
        out = []
        link = model.joint_map[foot_joint_name].parent_link
        while link != root:
            j = model.parent_joint(link)
            if j.kind == "revolute":
                out.append(j.name)
            link = j.parent_link
        return out[::-1]

    feet = [n for n in nodes if n.node_type == FOOT]
    chains = {n.id: path_joints(n.name) for n in feet}
    foot_order = sorted((n.id for n in feet),
                        key=lambda i: (chains[i][0] if chains[i] else "", nodes[i].name))

    joint_order: list[int] = []
    seen: set[int] = set()
    for fid in foot_order:
        for jname in chains[fid]:
            nid = node_of_joint[jname]
            if nid not in seen:
                seen.add(nid)
                joint_order.append(nid)
    for n in nodes:  # revolute joints on no foot path, in document order
        if n.node_type == JOINT and n.id not in seen:
            joint_order.append(n.id)

    return MorphologyGraph(nodes, edges, foot_order, joint_order)


def leg_automorphisms(graph: MorphologyGraph) -> list[list[int]]:
    """All node-type-preserving automorphisms fixing the Base node.

    Returned as permutation lists (``perm[node] = image``), identity first.
    Computed by canonical labeling of the rooted tree and recursive matching
    of isomorphic sibling subtrees; cost is the group order, fine at robot
    scale.
    """
    base = graph.base_id()
    children: dict[int, list[int]] = {n.id: [] for n in graph.nodes}
    parent: dict[int, int | None] = {base: None}
    order = [base]
    frontier = [base]
    while frontier:
        v = frontier.pop()
        for w in graph.neighbors(v):
            if w not in parent:
                parent[w] = v
                children[v].append(w)
                order.append(w)
                frontier.append(w)

    canon: dict[int, tuple] = {}
    for v in reversed(order):
        canon[v] = (graph.node_type(v), tuple(sorted(canon[c] for c in children[v])))

    def submaps(v: int, w: int):
        """Yield mappings of subtree(v) onto subtree(w); canon[v] == canon[w]."""
        groups: dict[tuple, list[int]] = {}
        for c in children[v]:
            groups.setdefault(canon[c], []).append(c)
        wgroups: dict[tuple, list[int]] = {}
        for c in children[w]:
            wgroups.setdefault(canon[c], []).append(c)

        def per_group(items: list[tuple[list[int], list[int]]]):
            if not items:
                yield {}
                return
            (vs, ws), rest = items[0], items[1:]
            for perm in itertools.permutations(ws):
                for submapping in itertools.product(*(list(submaps(a, b)) for a, b in zip(vs, perm))):
                    merged = {}
                    for m in submapping:
                        merged.update(m)
                    for a, b in zip(vs, perm):
                        merged[a] = b
                    for tail in per_group(rest):
                        yield {**merged, **tail}

        yield from per_group([(groups[k], wgroups[k]) for k in sorted(groups)])

    autos = []
    n = len(graph.nodes)
    for mapping in submaps(base, base):
        perm = list(range(n))
        for a, b in mapping.items():
            perm[a] = b
        perm[base] = base
        autos.append(perm)
    identity = list(range(n))
    autos.sort(key=lambda p: p != identity)
    return autos
