"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import random
from datetime import datetime, timezone

import pytest

from forumlens.catalog import CapecEntry, CatalogSnapshot, CveEntry, SkillLevel, build_snapshot
from forumlens.graph import BimodalGraph
from forumlens.ingest import CveId, PostRecord


def ts(text: str) -> datetime:
    """Short UTC timestamp builder: ts('2021-03-20') or full ISO."""
    if len(text) == 10:
        text += "T00:00:00"
    return datetime.fromisoformat(text).replace(tzinfo=timezone.utc)


def post(
    post_id: str,
    actor: str,
    when: str,
    content: str = "",
    forum: str = "f1",
) -> PostRecord:
    return PostRecord(
        post_id=post_id,
        actor_id=actor,
        forum_id=forum,
        timestamp=ts(when),
        content=content,
        mentions=frozenset(),
    )


def snapshot_from(
    cve_to_cwes: dict[str, list[str]],
    capecs: list[tuple[int, str, list[str]]],
    skills: dict[int, str] | None = None,
    parents: dict[int, list[int]] | None = None,
) -> CatalogSnapshot:
    """Compact snapshot builder: capecs as (id, name, related CWEs)."""
    skills = skills or {}
    parents = parents or {}
    cve_entries = [
        CveEntry(cve_id=CveId.parse(cve), cwe_ids=frozenset(cwes))
        for cve, cwes in cve_to_cwes.items()
    ]
    capec_entries = [
        CapecEntry(
            capec_id=cid,
            name=name,
            related_cwes=frozenset(cwes),
            parent_ids=frozenset(parents.get(cid, [])),
            child_ids=frozenset(),
            skill_scenarios=(
                (SkillLevel.parse(skills[cid]),) if cid in skills else ()
            ),
        )
        for cid, name, cwes in capecs
    ]
    return build_snapshot(cve_entries, capec_entries)


def bigraph(edges: list[tuple[str, int]]) -> BimodalGraph:
    return BimodalGraph(
        actor_ids=frozenset(a for a, _ in edges),
        capec_ids=frozenset(c for _, c in edges),
        edges=frozenset(edges),
    )


def two_bicliques() -> BimodalGraph:
    """Two disjoint complete 2x2 bicliques: the Q = 0.5 hand example."""
    edges = [
        ("a1", 1), ("a1", 2), ("a2", 1), ("a2", 2),
        ("b1", 3), ("b1", 4), ("b2", 3), ("b2", 4),
    ]
    return bigraph(edges)


def random_bigraph(rng: random.Random, max_actors: int = 4, max_capecs: int = 4) -> BimodalGraph:
    """Random connected-ish bipartite graph with at least one edge."""
    n_a = rng.randint(1, max_actors)
    n_c = rng.randint(1, max_capecs)
    actors = [f"a{i}" for i in range(n_a)]
    capecs = list(range(1, n_c + 1))
    edges = {(rng.choice(actors), rng.choice(capecs))}
    for a in actors:
        for c in capecs:
            if rng.random() < 0.45:
                edges.add((a, c))
    return bigraph(sorted(edges))


def random_bigraph_exact(rng: random.Random, n_actors: int, n_capecs: int) -> BimodalGraph:
    """Random bipartite graph with exactly the requested node counts."""
    actors = [f"a{i}" for i in range(n_actors)]
    capecs = list(range(1, n_capecs + 1))
    edges = set()
    for a in actors:
        edges.add((a, rng.choice(capecs)))
    for c in capecs:
        edges.add((rng.choice(actors), c))
    for a in actors:
        for c in capecs:
            if rng.random() < 0.35:
                edges.add((a, c))
    return bigraph(sorted(edges))


def modularity_oracle(graph: BimodalGraph, assignment: dict[str, int]) -> float:
    """Direct-formula modularity computed straight off the edge list.

    Independent of the package's adjacency-based implementation: accumulates
    intra-community edges and community degree sums in one pass over edges.
    """
    m = len(graph.edges)
    if m == 0:
        return 0.0
    intra: dict[int, int] = {}
    degree_sum: dict[int, int] = {}
    for actor, capec in graph.edges:
        ca = assignment[f"actor:{actor}"]
        cc = assignment[f"capec:{capec}"]
        degree_sum[ca] = degree_sum.get(ca, 0) + 1
        degree_sum[cc] = degree_sum.get(cc, 0) + 1
        if ca == cc:
            intra[ca] = intra.get(ca, 0) + 1
    return sum(
        intra.get(c, 0) / m - (d / (2 * m)) ** 2 for c, d in degree_sum.items()
    )


def lloyd_reference(X, centroids, max_iter: int = 300, tol: float = 1e-8):
    """Pure-python Lloyd iteration from explicit starting centroids.

    Follows the documented update policy (assign, revive empty clusters at the
    farthest point, recompute means, stop on label fixpoint or a relative
    inertia change below ``tol``) without any numpy, as an independent check.
    Returns (labels, inertia).
    """
    points = [list(map(float, row)) for row in X]
    cents = [list(map(float, row)) for row in centroids]
    n, k = len(points), len(cents)

    def d2(p, q):
        return sum((a - b) ** 2 for a, b in zip(p, q))

    prev_labels = None
    prev_inertia = None
    labels = [0] * n
    inertia = 0.0
    for _ in range(max_iter):
        dists = [[d2(p, c) for c in cents] for p in points]
        labels = [min(range(k), key=lambda c: dists[i][c]) for i in range(n)]
        for _attempt in range(k):
            empties = [c for c in range(k) if c not in labels]
            if not empties:
                break
            to_own = [dists[i][labels[i]] for i in range(n)]
            for c in empties:
                far = max(range(n), key=lambda i: to_own[i])
                cents[c] = list(points[far])
                to_own[far] = -1.0
            dists = [[d2(p, c) for c in cents] for p in points]
            labels = [min(range(k), key=lambda c: dists[i][c]) for i in range(n)]
        for c in range(k):
            members = [points[i] for i in range(n) if labels[i] == c]
            if members:
                cents[c] = [sum(col) / len(members) for col in zip(*members)]
        inertia = sum(d2(points[i], cents[labels[i]]) for i in range(n))
        if prev_labels is not None and labels == prev_labels:
            break
        if prev_inertia is not None and abs(prev_inertia - inertia) < tol * max(prev_inertia, 1e-12):
            break
        prev_labels, prev_inertia = list(labels), inertia
    return labels, inertia


def silhouette_oracle(X, labels) -> float:
    """Definitional O(n^2) silhouette: per-point loops, no vectorization."""
    points = [list(map(float, row)) for row in X]
    labels = [int(lab) for lab in labels]
    n = len(points)

    def dist(i, j):
        return sum((a - b) ** 2 for a, b in zip(points[i], points[j])) ** 0.5

    clusters = sorted(set(labels))
    scores = []
    for i in range(n):
        own = labels[i]
        own_others = [j for j in range(n) if labels[j] == own and j != i]
        if not own_others:
            scores.append(0.0)
            continue
        a = sum(dist(i, j) for j in own_others) / len(own_others)
        b = min(
            sum(dist(i, j) for j in range(n) if labels[j] == c)
            / sum(1 for j in range(n) if labels[j] == c)
            for c in clusters
            if c != own
        )
        top = max(a, b)
        scores.append(0.0 if top == 0.0 else (b - a) / top)
    return sum(scores) / n


def community_members_connected(graph: BimodalGraph, members: set[str]) -> bool:
    """Whether the subgraph induced by a set of node keys is connected."""
    if not members:
        return True
    adjacency: dict[str, set[str]] = {key: set() for key in members}
    for actor, capec in graph.edges:
        a_key, c_key = f"actor:{actor}", f"capec:{capec}"
        if a_key in adjacency and c_key in adjacency:
            adjacency[a_key].add(c_key)
            adjacency[c_key].add(a_key)
    start = next(iter(members))
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for other in adjacency[node]:
            if other not in seen:
                seen.add(other)
                frontier.append(other)
    return seen == members


@pytest.fixture
def mapping_snapshot() -> CatalogSnapshot:
    """Catalog fixture reproducing the documented CVE-to-CAPEC worked example."""
    return snapshot_from(
        cve_to_cwes={"CVE-2022-45451": ["CWE-269"]},
        capecs=[(233, "Privilege Escalation", ["CWE-269"])],
        skills={233: "High"},
    )
