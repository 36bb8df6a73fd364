"""Retrieval quality and cost evaluation against the linear-scan oracle."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .retrieval import linear_scan_oracle, retrieve_topk
from .tree import SeriesTree


@dataclass
class EvalRow:
    """Aggregated retrieval metrics for one (probes, k) setting."""

    probes: str
    k: int
    queries: int
    recall: float
    mean_evaluations: float
    oracle_evaluations: int
    mean_seconds: float


CSV_HEADER = "probes,k,queries,recall,mean_evaluations,oracle_evaluations,mean_seconds"


def rows_to_csv(rows: list[EvalRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.probes},{r.k},{r.queries},{r.recall!r},{r.mean_evaluations!r},"
            f"{r.oracle_evaluations},{r.mean_seconds!r}"
        )
    return "\n".join(lines) + "\n"


def resolve_probes(label: str | int, tree: SeriesTree) -> int:
    """Turn a probes setting into a cluster count; "all" means every cluster."""
    if isinstance(label, str):
        if label == "all":
            return max(tree.cluster_count(), 1)
        try:
            label = int(label)
        except ValueError:
            raise ConfigError(f"probes value {label!r} must be an integer or 'all'") from None
    if label < 1:
        raise ConfigError(f"probes={label} must be >= 1")
    return label


def run_eval(
    tree: SeriesTree,
    queries: list[tuple[np.ndarray, str | None]],
    k_values: list[int],
    probes_values: list[str | int],
    rho: float = 0.6,
    workers: int = 1,
) -> list[EvalRow]:
    """Sweep (probes, k) over the query set; recall is against the oracle.

    The oracle ranking for each (query, k) is computed once and reused across
    the probes sweep. Queries run in submission order, optionally fanned out
    over threads (the tree is only read).
    """
    if not queries:
        raise ConfigError("eval needs at least one query")
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    rows: list[EvalRow] = []
    corpus_size = tree.total_windows
    for k in k_values:
        oracle_ids: list[set[str]] = [
            {h.window_id for h in linear_scan_oracle(target, tree.entries, k)}
            for target, _ in queries
        ]
        for label in probes_values:
            probes = resolve_probes(label, tree)

            def one(idx: int) -> tuple[float, int, float]:
                target, domain = queries[idx]
                begin = time.perf_counter()
                result = retrieve_topk(
                    target, tree, domain, k=k, rho=rho, probes=probes
                )
                elapsed = time.perf_counter() - begin
                got = {h.window_id for h in result.hits}
                want = oracle_ids[idx]
                recall = len(got & want) / max(len(want), 1)
                return recall, result.stats.evaluations, elapsed

            if workers == 1:
                outcomes = [one(i) for i in range(len(queries))]
            else:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    outcomes = list(pool.map(one, range(len(queries))))
            rows.append(
                EvalRow(
                    probes=str(label),
                    k=k,
                    queries=len(queries),
                    recall=float(np.mean([o[0] for o in outcomes])),
                    mean_evaluations=float(np.mean([o[1] for o in outcomes])),
                    oracle_evaluations=corpus_size,
                    mean_seconds=float(np.mean([o[2] for o in outcomes])),
                )
            )
    return rows
