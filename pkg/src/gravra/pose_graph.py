"""View-graph data model and its line-oriented text format.

Text format (UTF-8, ``#`` starts a comment)::

    VERTEX <id> [gx gy gz]
    EDGE <i> <j> <qw> <qx> <qy> <qz> [kappa]

The quaternion is Hamilton, scalar first, and encodes ``R_ij`` (frame ``i``
to frame ``j``).  Ground-truth and estimate files use ``GT <id> <qw> <qx>
<qy> <qz>`` lines with the same numeric conventions.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

from .geometry import (
    ROTATION_TOL,
    gravity_alignment,
    is_rotation,
    quaternion_to_rotation,
    rotation_to_quaternion,
)

QUATERNION_NORM_TOL = 1e-3


class GraphFormatError(ValueError):
    """Raised for malformed graph or rotation files."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line


@dataclass(frozen=True)
class Vertex:
    id: int
    gravity: np.ndarray | None = None
    alignment: np.ndarray | None = None

    @property
    def has_gravity(self) -> bool:
        return self.gravity is not None


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    rel: np.ndarray
    kappa: float = 1.0
    # quaternion as read from disk, reused on write so files round-trip bit-exactly
    quat: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class GraphArrays:
    """Dense index view of a graph, used by the solvers."""

    ids: np.ndarray
    index: dict
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    kappa: np.ndarray


@dataclass
class PoseGraph:
    """Cameras as vertices, relative rotations as edges.

    Build the graph with :meth:`add_vertex` / :meth:`add_edge`; afterwards
    treat it as read-only (derived views are cached).
    """

    vertices: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)

    def __post_init__(self):
        self._pairs = {}
        self._adj = {vid: [] for vid in self.vertices}
        edges, self.edges = list(self.edges), []
        for e in edges:
            self.add_edge(e.src, e.dst, e.rel, e.kappa, e.quat)

    def add_vertex(self, vid: int, gravity=None) -> Vertex:
        vid = int(vid)
        if vid < 0:
            raise ValueError(f"vertex id must be non-negative, got {vid}")
        if vid in self.vertices:
            raise ValueError(f"duplicate vertex {vid}")
        alignment = None
        if gravity is not None:
            gravity = np.asarray(gravity, dtype=float).reshape(3)
            norm = np.linalg.norm(gravity)
            if not np.isfinite(norm) or abs(norm - 1.0) > ROTATION_TOL:
                raise ValueError(f"gravity of vertex {vid} is not unit-norm (norm {norm})")
            alignment = gravity_alignment(gravity)
        v = Vertex(vid, gravity, alignment)
        self.vertices[vid] = v
        self._adj[vid] = []
        self._invalidate()
        return v

    def add_edge(self, src: int, dst: int, rel, kappa: float = 1.0, quat=None) -> Edge:
        src, dst = int(src), int(dst)
        if src == dst:
            raise ValueError(f"self-loop on vertex {src}")
        for vid in (src, dst):
            if vid not in self.vertices:
                raise ValueError(f"edge ({src}, {dst}) references missing vertex {vid}")
        key = (min(src, dst), max(src, dst))
        if key in self._pairs:
            raise ValueError(f"duplicate edge between {src} and {dst}")
        rel = np.asarray(rel, dtype=float)
        if not is_rotation(rel):
            raise ValueError(f"edge ({src}, {dst}) measurement is not a rotation")
        kappa = float(kappa)
        if not kappa > 0.0 or not math.isfinite(kappa):
            raise ValueError(f"kappa must be positive, got {kappa}")
        e = Edge(src, dst, rel, kappa, quat)
        self._pairs[key] = len(self.edges)
        self.edges.append(e)
        self._adj[src].append((dst, e))
        self._adj[dst].append((src, e))
        self._invalidate()
        return e

    def _invalidate(self):
        self.__dict__.pop("arrays", None)

    def __len__(self) -> int:
        return len(self.vertices)

    def neighbors(self, vid: int) -> list:
        """``(neighbor id, edge)`` pairs in insertion order."""
        return list(self._adj[vid])

    def edge_between(self, a: int, b: int) -> Edge | None:
        idx = self._pairs.get((min(a, b), max(a, b)))
        return None if idx is None else self.edges[idx]

    def relative(self, i: int, j: int) -> np.ndarray:
        """Measured rotation mapping frame ``i`` to frame ``j``."""
        e = self.edge_between(i, j)
        if e is None:
            raise KeyError(f"no edge between {i} and {j}")
        return e.rel if e.src == i else e.rel.T

    def gravity(self, vid: int):
        return self.vertices[vid].gravity

    @property
    def ids(self) -> list:
        return sorted(self.vertices)

    def gravity_ids(self) -> list:
        return [vid for vid in self.ids if self.vertices[vid].has_gravity]

    @cached_property
    def arrays(self) -> GraphArrays:
        ids = np.array(self.ids, dtype=int)
        index = {int(v): k for k, v in enumerate(ids)}
        m = len(self.edges)
        src = np.fromiter((index[e.src] for e in self.edges), dtype=int, count=m)
        dst = np.fromiter((index[e.dst] for e in self.edges), dtype=int, count=m)
        rel = np.array([e.rel for e in self.edges]).reshape(m, 3, 3)
        kappa = np.fromiter((e.kappa for e in self.edges), dtype=float, count=m)
        return GraphArrays(ids, index, src, dst, rel, kappa)

    def subgraph(self, ids) -> "PoseGraph":
        keep = set(int(v) for v in ids)
        g = PoseGraph()
        for vid in sorted(keep):
            g.add_vertex(vid, self.vertices[vid].gravity)
        for e in self.edges:
            if e.src in keep and e.dst in keep:
                g.add_edge(e.src, e.dst, e.rel, e.kappa, e.quat)
        return g

    def with_gravities(self, updates: dict) -> "PoseGraph":
        """Copy of the graph with some gravity annotations replaced."""
        g = PoseGraph()
        for vid in self.ids:
            g.add_vertex(vid, updates.get(vid, self.vertices[vid].gravity))
        for e in self.edges:
            g.add_edge(e.src, e.dst, e.rel, e.kappa, e.quat)
        return g


def connected_components(graph: PoseGraph, filter: str = "all") -> list:
    """Maximal connected vertex sets, ordered by their smallest id.

    With ``filter="gravity_only"`` only vertices with gravity and edges
    between two such vertices are considered.
    """
    if filter == "all":
        keep = graph.ids
    elif filter == "gravity_only":
        keep = graph.gravity_ids()
    else:
        raise ValueError(f"unknown filter {filter!r}")
    if not keep:
        return []
    index = {vid: k for k, vid in enumerate(keep)}
    rows, cols = [], []
    for e in graph.edges:
        if e.src in index and e.dst in index:
            rows.append(index[e.src])
            cols.append(index[e.dst])
    n = len(keep)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = _cc(adj, directed=False)
    groups = {}
    for vid, lab in zip(keep, labels):
        groups.setdefault(lab, set()).add(vid)
    return sorted(groups.values(), key=min)


def is_connected(graph: PoseGraph) -> bool:
    return len(connected_components(graph)) == 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _parse_float(tok: str, path, lineno: int) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise GraphFormatError(f"invalid number {tok!r}", path, lineno) from None
    if not math.isfinite(value):
        raise GraphFormatError(f"non-finite number {tok!r}", path, lineno)
    return value


def _parse_int(tok: str, path, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise GraphFormatError(f"invalid integer {tok!r}", path, lineno) from None


def _unit(v: np.ndarray, what: str, path, lineno: int) -> np.ndarray:
    """Renormalize ``v``; values within text round-off of unit norm are kept as read."""
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > QUATERNION_NORM_TOL:
        raise GraphFormatError(f"{what} norm {norm:.6g} is not close to 1", path, lineno)
    return v if abs(norm - 1.0) <= 1e-12 else v / norm


def _parse_quaternion(toks, path, lineno: int):
    q = _unit(np.array([_parse_float(t, path, lineno) for t in toks]), "quaternion", path, lineno)
    return quaternion_to_rotation(q / np.linalg.norm(q)), q


def _content_lines(text: str):
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_graph(text: str, path=None) -> PoseGraph:
    graph = PoseGraph()
    for lineno, toks in _content_lines(text):
        tag = toks[0]
        try:
            if tag == "VERTEX":
                if len(toks) not in (2, 5):
                    raise GraphFormatError("VERTEX expects an id and optional gravity", path, lineno)
                vid = _parse_int(toks[1], path, lineno)
                gravity = None
                if len(toks) == 5:
                    gravity = np.array([_parse_float(t, path, lineno) for t in toks[2:]])
                    gravity = _unit(gravity, "gravity", path, lineno)
                graph.add_vertex(vid, gravity)
            elif tag == "EDGE":
                if len(toks) not in (7, 8):
                    raise GraphFormatError("EDGE expects i j qw qx qy qz [kappa]", path, lineno)
                i = _parse_int(toks[1], path, lineno)
                j = _parse_int(toks[2], path, lineno)
                rel, q = _parse_quaternion(toks[3:7], path, lineno)
                kappa = _parse_float(toks[7], path, lineno) if len(toks) == 8 else 1.0
                graph.add_edge(i, j, rel, kappa, q)
            else:
                raise GraphFormatError(f"unknown record tag {tag!r}", path, lineno)
        except GraphFormatError:
            raise
        except ValueError as exc:
            raise GraphFormatError(str(exc), path, lineno) from None
    return graph


def format_graph(graph: PoseGraph) -> str:
    lines = []
    for vid in graph.ids:
        g = graph.vertices[vid].gravity
        if g is None:
            lines.append(f"VERTEX {vid}")
        else:
            lines.append(f"VERTEX {vid} " + " ".join(_fmt(c) for c in g))
    for e in graph.edges:
        quat = e.quat if e.quat is not None else rotation_to_quaternion(e.rel)
        q = " ".join(_fmt(c) for c in quat)
        line = f"EDGE {e.src} {e.dst} {q}"
        if e.kappa != 1.0:
            line += f" {_fmt(e.kappa)}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _read_text(path) -> str:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return fh.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"no such file: {path}") from None


def read_graph(path) -> PoseGraph:
    return parse_graph(_read_text(path), path)


def write_graph(graph: PoseGraph, path) -> None:
    _atomic_write(path, format_graph(graph))


def format_rotations(rotations: dict) -> str:
    lines = []
    for vid in sorted(rotations):
        q = " ".join(_fmt(c) for c in rotation_to_quaternion(rotations[vid]))
        lines.append(f"GT {vid} {q}")
    return "\n".join(lines) + "\n"


def parse_rotations(text: str, path=None) -> dict:
    out = {}
    for lineno, toks in _content_lines(text):
        if toks[0] != "GT":
            raise GraphFormatError(f"unknown record tag {toks[0]!r}", path, lineno)
        if len(toks) != 6:
            raise GraphFormatError("GT expects id qw qx qy qz", path, lineno)
        vid = _parse_int(toks[1], path, lineno)
        if vid in out:
            raise GraphFormatError(f"duplicate rotation for vertex {vid}", path, lineno)
        out[vid] = _parse_quaternion(toks[2:], path, lineno)[0]
    return out


def read_rotations(path) -> dict:
    return parse_rotations(_read_text(path), path)


def write_rotations(rotations: dict, path) -> None:
    _atomic_write(path, format_rotations(rotations))
