"""The unweighted actor-CAPEC bimodal graph.

Edges are set-semantic: an actor mentioning a CAPEC once or more yields one
edge. The popularity filter removes CAPEC nodes shared by more than a
threshold number of actors and then prunes actors left without edges; one
CAPEC pass followed by one actor pass suffices because removing actors can
only lower CAPEC degrees.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING
from xml.etree import ElementTree

from .catalog import CatalogSnapshot, map_cve_to_capecs
from .errors import ValidationError
from .ingest import Corpus
from .stats import SummaryStats

if TYPE_CHECKING:
    from .community import Partition

EXPORT_FORMATS = ("graphml", "dot", "csv")


@dataclass(frozen=True)
class BimodalGraph:
    """Bipartite actor-CAPEC graph; edges only connect the two modes."""

    actor_ids: frozenset[str]
    capec_ids: frozenset[int]
    edges: frozenset[tuple[str, int]]

    def __post_init__(self) -> None:
        for actor, capec in self.edges:
            if actor not in self.actor_ids or capec not in self.capec_ids:
                raise ValidationError(f"edge ({actor!r}, {capec}) references unknown node")

    @property
    def n_nodes(self) -> int:
        return len(self.actor_ids) + len(self.capec_ids)

    def actor_adjacency(self) -> dict[str, set[int]]:
        adj: dict[str, set[int]] = {a: set() for a in self.actor_ids}
        for actor, capec in self.edges:
            adj[actor].add(capec)
        return adj

    def capec_adjacency(self) -> dict[int, set[str]]:
        adj: dict[int, set[str]] = {c: set() for c in self.capec_ids}
        for actor, capec in self.edges:
            adj[capec].add(actor)
        return adj


def post_capec_sets(corpus: Corpus, snapshot: CatalogSnapshot) -> dict[str, frozenset[int]]:
    """Map each post to the union of CAPECs its CVE mentions resolve to."""
    result: dict[str, frozenset[int]] = {}
    for post in corpus.posts:
        capecs: set[int] = set()
        for cve in post.mentions:
            capecs.update(map_cve_to_capecs(snapshot, cve))
        result[post.post_id] = frozenset(capecs)
    return result


def build_graph(corpus: Corpus, snapshot: CatalogSnapshot) -> BimodalGraph:
    """Build the bimodal graph; actors whose CVEs map to no CAPEC are dropped."""
    edges: set[tuple[str, int]] = set()
    per_post = post_capec_sets(corpus, snapshot)
    for post in corpus.posts:
        for capec in per_post[post.post_id]:
            edges.add((post.actor_id, capec))
    actors = frozenset(a for a, _ in edges)
    capecs = frozenset(c for _, c in edges)
    return BimodalGraph(actor_ids=actors, capec_ids=capecs, edges=frozenset(edges))


def surviving_post_counts(
    corpus: Corpus, snapshot: CatalogSnapshot, graph: BimodalGraph
) -> dict[str, int]:
    """Per actor in the graph: posts whose CAPECs intersect the graph's CAPEC set."""
    per_post = post_capec_sets(corpus, snapshot)
    counts: dict[str, int] = {a: 0 for a in graph.actor_ids}
    for post in corpus.posts:
        if post.actor_id not in counts:
            continue
        if per_post[post.post_id] & graph.capec_ids:
            counts[post.actor_id] += 1
    return counts


@dataclass(frozen=True)
class RemovalReport:
    """What the popularity filter removed: CAPECs (with degree) and orphaned actors."""

    threshold: int
    removed_capecs: dict[int, int]
    removed_actors: frozenset[str]

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "removed_capecs": {str(c): d for c, d in sorted(self.removed_capecs.items())},
            "removed_actors": sorted(self.removed_actors),
            "n_removed_capecs": len(self.removed_capecs),
            "n_removed_actors": len(self.removed_actors),
        }


def filter_popular_capecs(
    graph: BimodalGraph,
    threshold: int = 500,
    *,
    fraction: float | None = None,
) -> tuple[BimodalGraph, RemovalReport]:
    """Remove CAPECs mentioned by strictly more than ``threshold`` actors.

    ``fraction`` switches to a relative threshold: ``floor(fraction * n_actors)``.
    Actors left without any edge afterwards are removed as well.
    """
    if fraction is not None:
        if not 0 < fraction <= 1:
            raise ValidationError(f"fraction must be in (0, 1]: {fraction}")
        threshold = int(fraction * len(graph.actor_ids))
    if threshold < 1:
        raise ValidationError(f"threshold must be >= 1: {threshold}")

    capec_deg = {c: len(actors) for c, actors in graph.capec_adjacency().items()}
    removed_capecs = {c: d for c, d in capec_deg.items() if d > threshold}
    kept_capecs = graph.capec_ids - removed_capecs.keys()
    kept_edges = frozenset((a, c) for a, c in graph.edges if c in kept_capecs)
    kept_actors = frozenset(a for a, _ in kept_edges)
    removed_actors = graph.actor_ids - kept_actors

    filtered = BimodalGraph(actor_ids=kept_actors, capec_ids=kept_capecs, edges=kept_edges)
    report = RemovalReport(
        threshold=threshold,
        removed_capecs=removed_capecs,
        removed_actors=removed_actors,
    )
    return filtered, report


@dataclass(frozen=True)
class DegreeStats:
    """Per-mode degree statistics plus both density conventions.

    ``density`` uses bipartite-possible pairs (|E| / |actors|*|capecs|);
    ``density_all_pairs`` uses all node pairs, the convention under which the
    2,584-node reference network has density 0.009.
    """

    n_actors: int
    n_capecs: int
    n_edges: int
    actor_degree: SummaryStats
    capec_degree: SummaryStats
    density: float
    density_all_pairs: float
    posts: SummaryStats | None = None
    posts_non_one_timers: SummaryStats | None = None
    one_timer_share: float | None = None

    def as_dict(self) -> dict:
        out = {
            "n_actors": self.n_actors,
            "n_capecs": self.n_capecs,
            "n_edges": self.n_edges,
            "actor_degree": self.actor_degree.as_dict(),
            "capec_degree": self.capec_degree.as_dict(),
            "density": self.density,
            "density_all_pairs": self.density_all_pairs,
        }
        if self.posts is not None:
            out["posts"] = self.posts.as_dict()
        if self.posts_non_one_timers is not None:
            out["posts_non_one_timers"] = self.posts_non_one_timers.as_dict()
        if self.one_timer_share is not None:
            out["one_timer_share"] = self.one_timer_share
        return out


def degree_stats(
    graph: BimodalGraph, post_counts: dict[str, int] | None = None
) -> DegreeStats:
    """Degree statistics; pass per-actor post counts to add the one-timer block."""
    actor_degrees = [len(s) for s in graph.actor_adjacency().values()]
    capec_degrees = [len(s) for s in graph.capec_adjacency().values()]
    n_actors, n_capecs, n_edges = len(graph.actor_ids), len(graph.capec_ids), len(graph.edges)

    density = n_edges / (n_actors * n_capecs) if n_actors and n_capecs else 0.0
    n_nodes = n_actors + n_capecs
    all_pairs = n_nodes * (n_nodes - 1) / 2
    density_all = n_edges / all_pairs if all_pairs else 0.0

    posts = posts_multi = None
    one_timer_share = None
    if post_counts is not None:
        counts = [post_counts.get(a, 0) for a in sorted(graph.actor_ids)]
        posts = SummaryStats.describe(counts)
        multi = [c for c in counts if c > 1]
        posts_multi = SummaryStats.describe(multi)
        one_timer_share = (
            sum(1 for c in counts if c == 1) / len(counts) if counts else 0.0
        )

    return DegreeStats(
        n_actors=n_actors,
        n_capecs=n_capecs,
        n_edges=n_edges,
        actor_degree=SummaryStats.describe(actor_degrees),
        capec_degree=SummaryStats.describe(capec_degrees),
        density=density,
        density_all_pairs=density_all,
        posts=posts,
        posts_non_one_timers=posts_multi,
        one_timer_share=one_timer_share,
    )


# --- serialization -----------------------------------------------------------

def node_key(mode: str, node_id: str | int) -> str:
    """Stable string key for a node: 'actor:<id>' or 'capec:<id>'."""
    return f"{mode}:{node_id}"


def save_graph(graph: BimodalGraph, path: str | Path) -> None:
    payload = {
        "actors": sorted(graph.actor_ids),
        "capecs": sorted(graph.capec_ids),
        "edges": sorted([a, c] for a, c in graph.edges),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_graph(path: str | Path) -> BimodalGraph:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return BimodalGraph(
        actor_ids=frozenset(payload["actors"]),
        capec_ids=frozenset(int(c) for c in payload["capecs"]),
        edges=frozenset((a, int(c)) for a, c in payload["edges"]),
    )


def _community_of(partition: "Partition | None", key: str) -> int | None:
    if partition is None:
        return None
    return partition.assignment.get(key)


def export_graph(
    graph: BimodalGraph,
    fmt: str,
    path: str | Path,
    partition: "Partition | None" = None,
) -> None:
    """Serialize the graph for external tools: 'graphml', 'dot' or 'csv'.

    Every node carries a ``mode`` attribute and, when a partition is given,
    its ``community`` id. Exports of all three formats round-trip through
    :func:`import_graph`.
    """
    if fmt not in EXPORT_FORMATS:
        raise ValidationError(f"unknown export format {fmt!r}; expected one of {EXPORT_FORMATS}")
    text = {
        "graphml": _to_graphml,
        "dot": _to_dot,
        "csv": _to_csv,
    }[fmt](graph, partition)
    Path(path).write_text(text, encoding="utf-8")


def import_graph(path: str | Path, fmt: str) -> BimodalGraph:
    """Read back a graph exported by :func:`export_graph`."""
    if fmt not in EXPORT_FORMATS:
        raise ValidationError(f"unknown export format {fmt!r}; expected one of {EXPORT_FORMATS}")
    text = Path(path).read_text(encoding="utf-8")
    return {
        "graphml": _from_graphml,
        "dot": _from_dot,
        "csv": _from_csv,
    }[fmt](text)


def _sorted_nodes(graph: BimodalGraph) -> list[tuple[str, str]]:
    nodes = [("actor", a) for a in sorted(graph.actor_ids)]
    nodes += [("capec", str(c)) for c in sorted(graph.capec_ids)]
    return nodes


def _to_graphml(graph: BimodalGraph, partition: "Partition | None") -> str:
    root = ElementTree.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
    for key_id, attr in (("d_mode", "mode"), ("d_comm", "community")):
        key = ElementTree.SubElement(root, "key")
        key.set("id", key_id)
        key.set("for", "node")
        key.set("attr.name", attr)
        key.set("attr.type", "string" if attr == "mode" else "long")
    g = ElementTree.SubElement(root, "graph", edgedefault="undirected")
    for mode, raw in _sorted_nodes(graph):
        key = node_key(mode, raw)
        node = ElementTree.SubElement(g, "node", id=key)
        data = ElementTree.SubElement(node, "data", key="d_mode")
        data.text = mode
        comm = _community_of(partition, key)
        if comm is not None:
            data = ElementTree.SubElement(node, "data", key="d_comm")
            data.text = str(comm)
    for actor, capec in sorted(graph.edges):
        ElementTree.SubElement(
            g, "edge", source=node_key("actor", actor), target=node_key("capec", capec)
        )
    return ElementTree.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


def _from_graphml(text: str) -> BimodalGraph:
    root = ElementTree.fromstring(text)
    actors: set[str] = set()
    capecs: set[int] = set()
    edges: set[tuple[str, int]] = set()
    for node in root.iter():
        local = node.tag.rsplit("}", 1)[-1]
        if local == "node":
            mode, _, raw = node.get("id", "").partition(":")
            if mode == "actor":
                actors.add(raw)
            elif mode == "capec":
                capecs.add(int(raw))
        elif local == "edge":
            _, _, actor = node.get("source", "").partition(":")
            _, _, capec = node.get("target", "").partition(":")
            edges.add((actor, int(capec)))
    return BimodalGraph(frozenset(actors), frozenset(capecs), frozenset(edges))


def _dot_quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _to_dot(graph: BimodalGraph, partition: "Partition | None") -> str:
    lines = ["graph bimodal {"]
    for mode, raw in _sorted_nodes(graph):
        key = node_key(mode, raw)
        attrs = [f"mode={mode}"]
        comm = _community_of(partition, key)
        if comm is not None:
            attrs.append(f"community={comm}")
        lines.append(f"  {_dot_quote(key)} [{', '.join(attrs)}];")
    for actor, capec in sorted(graph.edges):
        lines.append(
            f"  {_dot_quote(node_key('actor', actor))} -- {_dot_quote(node_key('capec', capec))};"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


_DOT_NODE_RE = re.compile(r'^\s*"((?:[^"\\]|\\.)*)"\s*\[([^\]]*)\];\s*$')
_DOT_EDGE_RE = re.compile(r'^\s*"((?:[^"\\]|\\.)*)"\s*--\s*"((?:[^"\\]|\\.)*)"\s*;\s*$')


def _dot_unquote(value: str) -> str:
    return value.replace('\\"', '"').replace("\\\\", "\\")


def _from_dot(text: str) -> BimodalGraph:
    actors: set[str] = set()
    capecs: set[int] = set()
    edges: set[tuple[str, int]] = set()
    for line in text.splitlines():
        m = _DOT_NODE_RE.match(line)
        if m:
            mode, _, raw = _dot_unquote(m.group(1)).partition(":")
            if mode == "actor":
                actors.add(raw)
            elif mode == "capec":
                capecs.add(int(raw))
            continue
        m = _DOT_EDGE_RE.match(line)
        if m:
            _, _, actor = _dot_unquote(m.group(1)).partition(":")
            _, _, capec = _dot_unquote(m.group(2)).partition(":")
            edges.add((actor, int(capec)))
    return BimodalGraph(frozenset(actors), frozenset(capecs), frozenset(edges))


def _to_csv(graph: BimodalGraph, partition: "Partition | None") -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["actor_id", "capec_id", "actor_community", "capec_community"])
    for actor, capec in sorted(graph.edges):
        a_comm = _community_of(partition, node_key("actor", actor))
        c_comm = _community_of(partition, node_key("capec", capec))
        writer.writerow(
            [actor, capec, "" if a_comm is None else a_comm, "" if c_comm is None else c_comm]
        )
    return buffer.getvalue()


def _from_csv(text: str) -> BimodalGraph:
    reader = csv.DictReader(io.StringIO(text))
    edges: set[tuple[str, int]] = set()
    for row in reader:
        edges.add((row["actor_id"], int(row["capec_id"])))
    return BimodalGraph(
        actor_ids=frozenset(a for a, _ in edges),
        capec_ids=frozenset(c for _, c in edges),
        edges=frozenset(edges),
    )
