"""Domain-partitioned prototype tree over z-normalized windows.

Layout: root -> one node per domain -> capped clusters of window ids. Each
cluster keeps a centroid and a prototype (the member closest to the
centroid). A domain with n windows is built with ceil(n / cap) clusters;
inserting into a full cluster triggers a local re-clustering that replaces
only that cluster, leaving siblings untouched.

The tree stores z-normalized copies of the windows it indexes, so every
similarity comparison downstream happens in normalized space.
"""

from __future__ import annotations

import json
import math
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DataError
from .kmeans import kmeans
from .series import SeriesWindow, normalize

TREE_EXTENSION = ".crbtree"
TREE_FORMAT = "crbtree"
TREE_VERSION = 1
DEFAULT_CAP = 256


class RWLock:
    """Reader-writer lock: many concurrent readers, one exclusive writer."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read_lock(self) -> Iterator[None]:
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write_lock(self) -> Iterator[None]:
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


class WindowEntry(NamedTuple):
    vector: np.ndarray
    domain: str


class ClusterNode:
    """One capped cluster: centroid, prototype id, and member window ids."""

    __slots__ = ("centroid", "prototype_id", "member_ids", "_matrix")

    def __init__(self, centroid: np.ndarray, prototype_id: str, member_ids: list[str]):
        self.centroid = centroid
        self.prototype_id = prototype_id
        self.member_ids = member_ids
        self._matrix: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.member_ids)

    def invalidate(self) -> None:
        self._matrix = None


@dataclass
class DomainNode:
    name: str
    clusters: list[ClusterNode] = field(default_factory=list)


@dataclass
class InsertReport:
    """What one insert touched: the domain and post-insert cluster indices."""

    window_id: str
    domain: str
    new_domain: bool
    split: bool
    touched: list[int]


class SeriesTree:
    """The index. Build once from windows, then query and insert online."""

    def __init__(self, window_size: int, cap: int = DEFAULT_CAP, seed: int = 0):
        if window_size < 1:
            raise DataError("window_size must be positive")
        if cap < 1:
            raise DataError("cap must be positive")
        self.window_size = window_size
        self.cap = cap
        self.seed = seed
        self.entries: dict[str, WindowEntry] = {}
        self.domains: dict[str, DomainNode] = {}
        self.lock = RWLock()
        self._op_counter = 0

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def build(
        cls, windows: list[SeriesWindow], cap: int = DEFAULT_CAP, seed: int = 0
    ) -> "SeriesTree":
        """Index a batch of windows, partitioned by domain.

        Each domain gets ceil(n / cap) clusters from seeded k-means; any
        cluster the solver left over the cap is split locally until every
        cluster fits.
        """
        if not windows:
            raise DataError("cannot build a tree from zero windows")
        tree = cls(window_size=windows[0].values.size, cap=cap, seed=seed)
        by_domain: dict[str, list[str]] = {}
        for w in windows:
            if w.values.size != tree.window_size:
                raise DataError(
                    f"window {w.window_id!r} has length {w.values.size}, "
                    f"expected {tree.window_size}"
                )
            wid = w.window_id
            if wid in tree.entries:
                raise DataError(f"duplicate window id {wid!r}")
            vec, _ = normalize(w.values)
            tree.entries[wid] = WindowEntry(vector=vec, domain=w.domain)
            by_domain.setdefault(w.domain, []).append(wid)

        for name in sorted(by_domain):
            ids = by_domain[name]
            node = DomainNode(name=name)
            tree.domains[name] = node
            matrix = np.stack([tree.entries[i].vector for i in ids])
            m = math.ceil(len(ids) / tree.cap)
            if m == 1:
                cluster = ClusterNode(
                    centroid=matrix.mean(axis=0), prototype_id="", member_ids=list(ids)
                )
                node.clusters.append(cluster)
                tree.select_prototype(cluster)
            else:
                res = kmeans(matrix, m, seed=tree._derive_seed())
                for c in range(m):
                    members = [ids[i] for i in np.flatnonzero(res.assignments == c)]
                    cluster = ClusterNode(
                        centroid=res.centroids[c].copy(),
                        prototype_id="",
                        member_ids=members,
                    )
                    node.clusters.append(cluster)
                    tree.select_prototype(cluster)
            # Enforce the cap on any oversized solver output.
            i = 0
            while i < len(node.clusters):
                if node.clusters[i].size > tree.cap:
                    got = tree.local_recluster(name, i)
                    i = got[-1] + 1
                else:
                    i += 1
        return tree

    def _derive_seed(self) -> int:
        self._op_counter += 1
        return (self.seed * 0x9E3779B97F4A7C15 + self._op_counter) & (2**63 - 1)

    # ------------------------------------------------------------------
    # maintenance

    def member_matrix(self, cluster: ClusterNode) -> np.ndarray:
        """Stacked member vectors, row i matching member_ids[i]. Cached."""
        if cluster._matrix is None:
            cluster._matrix = np.stack([self.entries[i].vector for i in cluster.member_ids])
        return cluster._matrix

    def select_prototype(self, cluster: ClusterNode) -> str:
        """Pick the member closest to the centroid; ties take the smaller id."""
        matrix = self.member_matrix(cluster)
        diff = matrix - cluster.centroid
        d2 = (diff * diff).sum(axis=1)
        best = d2.min()
        winner = min(cluster.member_ids[i] for i in np.flatnonzero(d2 == best))
        cluster.prototype_id = winner
        return winner

    def insert(self, window: SeriesWindow) -> InsertReport:
        """Insert one window: route to the nearest prototype, split on overflow.

        An unseen domain bootstraps a new single-cluster domain node. Ties on
        prototype distance go to the lowest cluster index.
        """
        if window.values.size != self.window_size:
            raise DataError(
                f"window {window.window_id!r} has length {window.values.size}, "
                f"expected {self.window_size}"
            )
        wid = window.window_id
        if wid in self.entries:
            raise DataError(f"duplicate window id {wid!r}")
        vec, _ = normalize(window.values)
        self.entries[wid] = WindowEntry(vector=vec, domain=window.domain)

        node = self.domains.get(window.domain)
        if node is None:
            node = DomainNode(name=window.domain)
            node.clusters.append(
                ClusterNode(centroid=vec.copy(), prototype_id=wid, member_ids=[wid])
            )
            self.domains[window.domain] = node
            return InsertReport(
                window_id=wid, domain=window.domain, new_domain=True, split=False, touched=[0]
            )

        protos = np.stack([self.entries[c.prototype_id].vector for c in node.clusters])
        diff = protos - vec
        idx = int(np.argmin((diff * diff).sum(axis=1)))
        cluster = node.clusters[idx]
        cluster.member_ids.append(wid)
        cluster.invalidate()
        cluster.centroid = cluster.centroid + (vec - cluster.centroid) / cluster.size
        self.select_prototype(cluster)
        if cluster.size > self.cap:
            touched = self.local_recluster(window.domain, idx)
            return InsertReport(
                window_id=wid, domain=window.domain, new_domain=False, split=True,
                touched=touched,
            )
        return InsertReport(
            window_id=wid, domain=window.domain, new_domain=False, split=False, touched=[idx]
        )

    def local_recluster(self, domain: str, index: int) -> list[int]:
        """Re-cluster one cluster into ceil(size / cap) pieces, in place.

        The pieces replace the original at the same position; sibling
        clusters are not touched. Oversized pieces are resolved recursively.
        Returns the post-op indices of the resulting clusters (ascending).
        """
        node = self.domains[domain]
        cluster = node.clusters[index]
        m = math.ceil(cluster.size / self.cap)
        if m == 1:
            cluster.centroid = self.member_matrix(cluster).mean(axis=0)
            self.select_prototype(cluster)
            return [index]
        ids = list(cluster.member_ids)
        matrix = self.member_matrix(cluster)
        res = kmeans(matrix, m, seed=self._derive_seed())
        children = []
        for c in range(m):
            members = [ids[i] for i in np.flatnonzero(res.assignments == c)]
            child = ClusterNode(
                centroid=res.centroids[c].copy(), prototype_id="", member_ids=members
            )
            children.append(child)
        node.clusters[index : index + 1] = children
        for child in children:
            self.select_prototype(child)
        out: list[int] = []
        i = index
        for _ in range(len(children)):
            if node.clusters[i].size > self.cap:
                got = self.local_recluster(domain, i)
                out.extend(got)
                i = got[-1] + 1
            else:
                out.append(i)
                i += 1
        return out

    # ------------------------------------------------------------------
    # inspection

    @property
    def total_windows(self) -> int:
        return len(self.entries)

    def iter_clusters(
        self, domain: str | None = None
    ) -> Iterator[tuple[str, int, ClusterNode]]:
        """Yield (domain, index, cluster) in canonical (sorted-domain) order."""
        if domain is not None:
            node = self.domains.get(domain)
            if node is None:
                raise DataError(f"unknown domain {domain!r}")
            for i, c in enumerate(node.clusters):
                yield domain, i, c
            return
        for name in sorted(self.domains):
            for i, c in enumerate(self.domains[name].clusters):
                yield name, i, c

    def cluster_count(self) -> int:
        return sum(len(n.clusters) for n in self.domains.values())

    def summary(self) -> dict:
        return {
            "window_size": self.window_size,
            "cap": self.cap,
            "seed": self.seed,
            "total_windows": self.total_windows,
            "domains": {
                name: [c.size for c in self.domains[name].clusters]
                for name in sorted(self.domains)
            },
        }

    # ------------------------------------------------------------------
    # persistence

    def save(self, path: str | Path) -> None:
        """Serialize to a versioned JSON document (atomic replace on write).

        Identical build inputs and seed produce byte-identical files: floats
        use shortest round-trip form and every collection order is a
        deterministic function of the operation sequence.
        """
        path = Path(path)
        doc = {
            "format": TREE_FORMAT,
            "version": TREE_VERSION,
            "window_size": self.window_size,
            "cap": self.cap,
            "seed": self.seed,
            "op_counter": self._op_counter,
            "windows": [
                [wid, entry.domain, [float(v) for v in entry.vector]]
                for wid, entry in self.entries.items()
            ],
            "domains": [
                [
                    name,
                    [
                        [
                            [float(v) for v in c.centroid],
                            c.prototype_id,
                            list(c.member_ids),
                        ]
                        for c in self.domains[name].clusters
                    ],
                ]
                for name in sorted(self.domains)
            ],
        }
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_text(
                json.dumps(doc, separators=(",", ":"), allow_nan=False), encoding="utf-8"
            )
            os.replace(tmp, path)
        except OSError as exc:
            raise DataError(f"cannot write tree {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "SeriesTree":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read tree {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed tree file: {exc.msg}") from exc
        if not isinstance(doc, dict) or doc.get("format") != TREE_FORMAT:
            raise DataError(f"{path}: not a {TREE_FORMAT} file")
        if doc.get("version") != TREE_VERSION:
            raise DataError(f"{path}: unsupported tree version {doc.get('version')!r}")
        try:
            tree = cls(window_size=doc["window_size"], cap=doc["cap"], seed=doc["seed"])
            tree._op_counter = doc["op_counter"]
            for wid, domain, values in doc["windows"]:
                tree.entries[wid] = WindowEntry(
                    vector=np.asarray(values, dtype=np.float64), domain=domain
                )
            for name, clusters in doc["domains"]:
                node = DomainNode(name=name)
                for centroid, proto, members in clusters:
                    node.clusters.append(
                        ClusterNode(
                            centroid=np.asarray(centroid, dtype=np.float64),
                            prototype_id=proto,
                            member_ids=list(members),
                        )
                    )
                tree.domains[name] = node
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: invalid tree structure: {exc}") from exc
        return tree
