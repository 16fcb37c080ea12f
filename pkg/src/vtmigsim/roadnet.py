"""Planar road network: CSV loading, nearest-segment projection, shortest paths.

Coordinates are planar meters (x east, y north). Undirected road segments are
stored as two directed arcs so adjacency stays a plain outgoing-edge list.
The network is immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


class RoadNetworkError(ValueError):
    """Base class for road-network loading and query errors."""


class ParseError(RoadNetworkError):
    """A CSV row could not be parsed; the message carries the line number."""


class ValidationError(RoadNetworkError):
    """Structurally invalid network (dangling endpoint, duplicate id, ...)."""


class NoEdgesError(RoadNetworkError):
    """A query needed at least one edge but the network has none."""


class UnreachableError(RoadNetworkError):
    """No path exists between the requested nodes."""


@dataclass(frozen=True)
class GeoPoint:
    """Planar position in meters."""

    x: float
    y: float

    def dist_to(self, other: "GeoPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class RoadNode:
    id: int
    pos: GeoPoint


@dataclass(frozen=True)
class RoadEdge:
    """Directed arc; an undirected input segment becomes two arcs."""

    from_node: int
    to_node: int
    length: float        # meters, > 0
    speed_limit: float   # meters/second, > 0


@dataclass(frozen=True)
class Projection:
    """Nearest point of a query on some arc.

    offset is the fraction along the arc (0 at from_node, 1 at to_node),
    clamped to the segment; distance is from the query to the projected point.
    """

    edge_id: int
    point: GeoPoint
    offset: float
    distance: float


class RoadNetwork:
    """Immutable graph of RoadNodes and directed arcs with adjacency lists."""

    def __init__(self, nodes: Sequence[RoadNode], arcs: Sequence[RoadEdge]):
        self.nodes: dict[int, RoadNode] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise ValidationError(f"duplicate node id {node.id}")
            if not (math.isfinite(node.pos.x) and math.isfinite(node.pos.y)):
                raise ValidationError(f"node {node.id} has non-finite coordinates")
            self.nodes[node.id] = node
        self.edges: list[RoadEdge] = list(arcs)
        self.adjacency: dict[int, list[int]] = {nid: [] for nid in self.nodes}
        for eid, edge in enumerate(self.edges):
            for endpoint in (edge.from_node, edge.to_node):
                if endpoint not in self.nodes:
                    raise ValidationError(
                        f"edge {eid} references unknown node {endpoint}"
                    )
            if not edge.length > 0:
                raise ValidationError(f"edge {eid} has non-positive length")
            if not edge.speed_limit > 0:
                raise ValidationError(f"edge {eid} has non-positive speed limit")
            self.adjacency[edge.from_node].append(eid)
        self._build_segment_arrays()

    @classmethod
    def from_undirected(
        cls,
        nodes: Sequence[tuple[int, float, float]],
        edges: Sequence[tuple[int, int, Optional[float], float]],
    ) -> "RoadNetwork":
        """Build from (id, x, y) nodes and (u, v, length|None, speed) segments.

        A None length is filled in with the endpoint Euclidean distance.
        Every segment is doubled into arcs u->v and v->u.
        """
        node_objs = [RoadNode(nid, GeoPoint(float(x), float(y))) for nid, x, y in nodes]
        pos = {n.id: n.pos for n in node_objs}
        arcs: list[RoadEdge] = []
        for u, v, length, speed in edges:
            if u not in pos or v not in pos:
                missing = u if u not in pos else v
                raise ValidationError(f"edge ({u},{v}) references unknown node {missing}")
            if length is None:
                length = pos[u].dist_to(pos[v])
            arcs.append(RoadEdge(u, v, float(length), float(speed)))
            arcs.append(RoadEdge(v, u, float(length), float(speed)))
        return cls(node_objs, arcs)

    def _build_segment_arrays(self) -> None:
        # Cached per-arc geometry for vectorized projection queries.
        n = len(self.edges)
        ax = np.empty(n)
        ay = np.empty(n)
        bx = np.empty(n)
        by = np.empty(n)
        for i, e in enumerate(self.edges):
            a = self.nodes[e.from_node].pos
            b = self.nodes[e.to_node].pos
            ax[i], ay[i], bx[i], by[i] = a.x, a.y, b.x, b.y
        self._ax, self._ay = ax, ay
        self._dx, self._dy = bx - ax, by - ay
        self._len2 = np.maximum(self._dx**2 + self._dy**2, 1e-300)


def _parse_float(field: str, what: str, line_no: int) -> float:
    try:
        value = float(field)
    except ValueError:
        raise ParseError(f"line {line_no}: cannot parse {what} from {field!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"line {line_no}: non-finite {what}")
    return value


def load_network(nodes_source: Iterable[str], edges_source: Iterable[str]) -> RoadNetwork:
    """Load a network from node and edge CSV sources (file objects or line lists).

    Node schema: ``node_id,x,y``. Edge schema: ``from,to,length_m,speed_mps``
    where an empty length field means "use the endpoint Euclidean distance".
    """
    nodes: list[tuple[int, float, float]] = []
    reader = csv.reader(nodes_source)
    for line_no, row in enumerate(reader, start=1):
        if line_no == 1:
            if [c.strip() for c in row] != ["node_id", "x", "y"]:
                raise ParseError(f"line 1: expected header node_id,x,y, got {row}")
            continue
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise ParseError(f"line {line_no}: expected 3 node fields, got {len(row)}")
        try:
            nid = int(row[0])
        except ValueError:
            raise ParseError(f"line {line_no}: bad node id {row[0]!r}") from None
        nodes.append((nid, _parse_float(row[1], "x", line_no), _parse_float(row[2], "y", line_no)))

    edges: list[tuple[int, int, Optional[float], float]] = []
    reader = csv.reader(edges_source)
    for line_no, row in enumerate(reader, start=1):
        if line_no == 1:
            if [c.strip() for c in row] != ["from", "to", "length_m", "speed_mps"]:
                raise ParseError(
                    f"line 1: expected header from,to,length_m,speed_mps, got {row}"
                )
            continue
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise ParseError(f"line {line_no}: expected 4 edge fields, got {len(row)}")
        try:
            u, v = int(row[0]), int(row[1])
        except ValueError:
            raise ParseError(f"line {line_no}: bad edge endpoints {row[:2]}") from None
        length = None if row[2].strip() == "" else _parse_float(row[2], "length", line_no)
        speed = _parse_float(row[3], "speed", line_no)
        edges.append((u, v, length, speed))

    seen: set[int] = set()
    for nid, _, _ in nodes:
        if nid in seen:
            raise ValidationError(f"duplicate node id {nid}")
        seen.add(nid)
    return RoadNetwork.from_undirected(nodes, edges)


def map_match(net: RoadNetwork, p: GeoPoint) -> Projection:
    """Project a point onto the nearest arc segment (ties: lowest arc id)."""
    if not net.edges:
        raise NoEdgesError("cannot map-match on a network with no edges")
    t = ((p.x - net._ax) * net._dx + (p.y - net._ay) * net._dy) / net._len2
    t = np.clip(t, 0.0, 1.0)
    qx = net._ax + t * net._dx
    qy = net._ay + t * net._dy
    d2 = (p.x - qx) ** 2 + (p.y - qy) ** 2
    best = int(np.argmin(d2))  # argmin keeps the first (lowest-id) minimum
    return Projection(
        edge_id=best,
        point=GeoPoint(float(qx[best]), float(qy[best])),
        offset=float(t[best]),
        distance=float(math.sqrt(d2[best])),
    )


def shortest_path(net: RoadNetwork, src: int, dst: int) -> tuple[list[int], float]:
    """Minimum-length node path from src to dst.

    Classic label-setting search with a binary heap and lazy deletion; the
    relaxation step is dist[v] = min(dist[v], dist[u] + w(u, v)). Heap entries
    are (distance, node id) so equal-distance nodes settle in id order, which
    makes results deterministic.
    """
    for nid in (src, dst):
        if nid not in net.nodes:
            raise ValidationError(f"unknown node {nid}")
    if src == dst:
        return [src], 0.0
    dist: dict[int, float] = {src: 0.0}
    parent: dict[int, int] = {}
    done: set[int] = set()
    heap: list[tuple[float, int]] = [(0.0, src)]
    while heap:
        d_u, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dst:
            break
        for eid in net.adjacency[u]:
            edge = net.edges[eid]
            v = edge.to_node
            cand = d_u + edge.length
            if cand < dist.get(v, math.inf):
                dist[v] = cand
                parent[v] = u
                heapq.heappush(heap, (cand, v))
    if dst not in done:
        raise UnreachableError(f"node {dst} is not reachable from {src}")
    path = [dst]
    while path[-1] != src:
        path.append(parent[path[-1]])
    path.reverse()
    return path, dist[dst]
