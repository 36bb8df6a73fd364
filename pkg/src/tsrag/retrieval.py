"""Hybrid top-k retrieval over the prototype tree.

Scoring uses a compound similarity: cosine plus inverse Euclidean distance,
each stabilized with a small epsilon. A query is answered by ranking cluster
prototypes, fully scanning the best ``probes`` clusters, and blending a
same-domain arm with a cross-domain arm: round(rho * k) hits come from the
query's own domain and the remainder from a global scan that excludes them.
Queries with no (or unknown) domain fall back to the global arm alone.

All score arithmetic is elementwise multiply + sum along the last axis, not
BLAS matmul, so a window's score is bit-identical whether it is computed
scalar, per cluster, or over the whole corpus in one batch. That is what
makes exact agreement with the linear-scan oracle a testable property.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, DataError
from .tree import ClusterNode, SeriesTree, WindowEntry

SIM_EPS = 1e-8

DEFAULT_K = 8
DEFAULT_RHO = 0.6
DEFAULT_PROBES = 4

LOCAL_ARM = "local"
GLOBAL_ARM = "global"


@dataclass(frozen=True)
class Hit:
    window_id: str
    score: float
    domain: str
    arm: str = GLOBAL_ARM


@dataclass
class SearchStats:
    """Work counters for one query: similarity evaluations and probed clusters."""

    evaluations: int = 0
    clusters_probed: int = 0


@dataclass
class RetrievalResult:
    hits: list[Hit]
    stats: SearchStats = field(default_factory=SearchStats)


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Compound similarity: cosine + 1 / (Euclidean distance + eps).

    Identical vectors score cosine + 1/eps, so exact matches dominate any
    ranking they appear in.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("similarity expects two 1-D vectors of equal length")
    dot = float((a * b).sum())
    na = float(np.sqrt((a * a).sum()))
    nb = float(np.sqrt((b * b).sum()))
    diff = a - b
    dist = float(np.sqrt((diff * diff).sum()))
    return dot / (na * nb + SIM_EPS) + 1.0 / (dist + SIM_EPS)


def similarity_batch(target: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Score every row of ``matrix`` against ``target``; bit-equal to the scalar op."""
    target = np.asarray(target, dtype=np.float64)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or target.ndim != 1 or matrix.shape[1] != target.size:
        raise DataError("similarity_batch expects (n, w) rows against a length-w target")
    dots = (matrix * target).sum(axis=1)
    norms = np.sqrt((matrix * matrix).sum(axis=1))
    tnorm = np.sqrt((target * target).sum())
    diff = matrix - target
    dists = np.sqrt((diff * diff).sum(axis=1))
    return dots / (norms * tnorm + SIM_EPS) + 1.0 / (dists + SIM_EPS)


def _top_hits(
    ids: list[str],
    scores: np.ndarray,
    domains: list[str],
    k: int,
    arm: str,
) -> list[Hit]:
    if not ids:
        return []
    order = np.lexsort((np.asarray(ids), -scores))[:k]
    return [
        Hit(window_id=ids[i], score=float(scores[i]), domain=domains[i], arm=arm)
        for i in order
    ]


def _ranked_clusters(
    target: np.ndarray,
    clusters: list[tuple[str, int, ClusterNode]],
    tree: SeriesTree,
    stats: SearchStats,
) -> list[tuple[str, int, ClusterNode]]:
    protos = np.stack([tree.entries[c.prototype_id].vector for _, _, c in clusters])
    scores = similarity_batch(target, protos)
    stats.evaluations += len(clusters)
    proto_ids = np.asarray([c.prototype_id for _, _, c in clusters])
    order = np.lexsort((proto_ids, -scores))
    return [clusters[i] for i in order]


def _scan(
    target: np.ndarray,
    clusters: Iterable[tuple[str, int, ClusterNode]],
    tree: SeriesTree,
    k: int,
    exclude: frozenset[str],
    stats: SearchStats,
    arm: str,
) -> list[Hit]:
    ids: list[str] = []
    domains: list[str] = []
    chunks: list[np.ndarray] = []
    for domain, _, cluster in clusters:
        matrix = tree.member_matrix(cluster)
        scores = similarity_batch(target, matrix)
        stats.evaluations += cluster.size
        stats.clusters_probed += 1
        for j, wid in enumerate(cluster.member_ids):
            if wid in exclude:
                continue
            ids.append(wid)
            domains.append(domain)
            chunks.append(scores[j : j + 1])
    if not ids:
        return []
    return _top_hits(ids, np.concatenate(chunks), domains, k, arm)


def _validate(k: int, probes: int) -> None:
    if k < 1:
        raise ConfigError(f"k={k} must be >= 1")
    if probes < 1:
        raise ConfigError(f"probes={probes} must be >= 1")


def retrieve_global(
    target: np.ndarray,
    tree: SeriesTree,
    k: int = DEFAULT_K,
    probes: int = DEFAULT_PROBES,
    *,
    exclude: frozenset[str] = frozenset(),
    stats: SearchStats | None = None,
) -> list[Hit]:
    """Rank all prototypes, fully scan the best ``probes`` clusters, keep top k."""
    _validate(k, probes)
    if stats is None:
        stats = SearchStats()
    clusters = list(tree.iter_clusters())
    if not clusters:
        return []
    ranked = _ranked_clusters(target, clusters, tree, stats)
    return _scan(target, ranked[:probes], tree, k, exclude, stats, GLOBAL_ARM)


def retrieve_local(
    target: np.ndarray,
    tree: SeriesTree,
    domain: str,
    k: int = DEFAULT_K,
    probes: int = DEFAULT_PROBES,
    *,
    stats: SearchStats | None = None,
) -> list[Hit]:
    """Same procedure as the global arm, restricted to one domain's clusters."""
    _validate(k, probes)
    if stats is None:
        stats = SearchStats()
    clusters = list(tree.iter_clusters(domain))  # raises DataError when unknown
    ranked = _ranked_clusters(target, clusters, tree, stats)
    return _scan(target, ranked[:probes], tree, k, frozenset(), stats, LOCAL_ARM)


def local_share(k: int, rho: float) -> int:
    """Number of hits the same-domain arm contributes: round(rho * k), half up."""
    return int(np.floor(rho * k + 0.5))


def retrieve_topk(
    target: np.ndarray,
    tree: SeriesTree,
    domain: str | None = None,
    k: int = DEFAULT_K,
    rho: float = DEFAULT_RHO,
    probes: int = DEFAULT_PROBES,
) -> RetrievalResult:
    """Hybrid retrieval: blend same-domain and global hits by the rho split.

    With rho = 0 the result is bit-identical to :func:`retrieve_global`; with
    rho = 1 every hit comes from the query's domain. A missing or unknown
    domain routes the whole budget to the global arm. The merged hits are
    sorted by (score desc, window_id asc) and contain no duplicate ids.
    """
    _validate(k, probes)
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho={rho} must lie in [0, 1]")
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1 or target.size != tree.window_size:
        raise DataError(
            f"query length {target.size} does not match index window size {tree.window_size}"
        )
    stats = SearchStats()
    if domain is None or domain not in tree.domains:
        hits = retrieve_global(target, tree, k, probes, stats=stats)
        return RetrievalResult(hits=hits, stats=stats)

    k_local = local_share(k, rho)
    k_global = k - k_local
    local_hits: list[Hit] = []
    if k_local > 0:
        local_hits = retrieve_local(target, tree, domain, k_local, probes, stats=stats)
    global_hits: list[Hit] = []
    if k_global > 0:
        taken = frozenset(h.window_id for h in local_hits)
        global_hits = retrieve_global(
            target, tree, k_global, probes, exclude=taken, stats=stats
        )
    merged = local_hits + global_hits
    merged.sort(key=lambda h: (-h.score, h.window_id))
    return RetrievalResult(hits=merged, stats=stats)


def linear_scan_oracle(
    target: np.ndarray,
    windows: Mapping[str, WindowEntry] | Iterable[tuple[str, np.ndarray, str]],
    k: int = DEFAULT_K,
    *,
    stats: SearchStats | None = None,
) -> list[Hit]:
    """Exact top-k by brute force, with the same (score desc, id asc) order.

    Accepts either a tree's entries mapping or (id, vector, domain) triples;
    it never touches cluster structure, so it independently checks any
    tree-guided search path.
    """
    if k < 1:
        raise ConfigError(f"k={k} must be >= 1")
    if isinstance(windows, Mapping):
        items = [(wid, e.vector, e.domain) for wid, e in windows.items()]
    else:
        items = [(wid, np.asarray(vec, dtype=np.float64), dom) for wid, vec, dom in windows]
    if not items:
        return []
    ids = [wid for wid, _, _ in items]
    domains = [dom for _, _, dom in items]
    matrix = np.stack([vec for _, vec, _ in items])
    target = np.asarray(target, dtype=np.float64)
    scores = similarity_batch(target, matrix)
    if stats is not None:
        stats.evaluations += len(ids)
    return _top_hits(ids, scores, domains, k, GLOBAL_ARM)
