"""High-level operations shared by the HTTP service and the CLI.

Each function here is one user-visible verb (ingest, build, query, insert,
eval, forecast, synth, stats) working on plain paths and values, so the
service layer stays a thin request/response shell.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .bench import EvalRow, rows_to_csv, run_eval
from .config import RunConfig
from .errors import ConfigError, DataError
from .forecast import ExternalBackend, LinearHead
from .fusion import FusionParams
from .retrieval import RetrievalResult, retrieve_topk
from .series import SeriesWindow, interpolate_missing, normalize, segment_windows
from .store import StoreRecord, ingest_csv, read_store, write_store
from .synth import clustered_windows, forecast_benchmark
from .training import (
    attach_retrieval,
    evaluate_external,
    evaluate_numeric,
    make_samples,
    train_forecaster,
)
from .tree import SeriesTree

REPORT_HEADER = "split,samples,mse,mse_normalized"


def do_ingest(
    csv_paths: list[str], domain: str, freq: str, out_store: str
) -> dict:
    """Ingest CSV files into a store, appending when the store exists."""
    if not csv_paths:
        raise ConfigError("ingest needs at least one CSV path")
    out = Path(out_store)
    records: list[StoreRecord] = list(read_store(out)) if out.exists() else []
    added = 0
    for path in csv_paths:
        got = ingest_csv(path, domain=domain, freq=freq)
        records.extend(got)
        added += len(got)
    write_store(records, out)
    return {"store_path": str(out), "records_added": added, "records_total": len(records)}


def read_stores(store_paths: list[str]) -> list[StoreRecord]:
    """Read and concatenate stores, rejecting duplicate keys across files."""
    if not store_paths:
        raise ConfigError("at least one store path is required")
    records: list[StoreRecord] = []
    seen: set[tuple[str, str]] = set()
    for path in store_paths:
        for rec in read_store(path):
            if rec.key in seen:
                raise DataError(
                    f"duplicate record key across stores: domain_category="
                    f"{rec.domain_category!r}, item_id={rec.item_id!r}"
                )
            seen.add(rec.key)
            records.append(rec)
    return records


def windows_from_records(
    records: list[StoreRecord], window: int, stride: int
) -> list[SeriesWindow]:
    windows: list[SeriesWindow] = []
    for rec in records:
        series = rec.to_series()
        series.values = interpolate_missing(series.values)
        windows.extend(segment_windows(series, window, stride))
    return windows


def tree_summary(tree: SeriesTree, path: str | Path | None = None) -> dict:
    info = tree.summary()
    if path is not None:
        info["tree_path"] = str(path)
    info["domains"] = [
        {"domain": name, "clusters": len(sizes), "sizes": sizes}
        for name, sizes in info["domains"].items()
    ]
    return info


def do_build(store_paths: list[str], out_tree: str, cfg: RunConfig) -> dict:
    records = read_stores(store_paths)
    windows = windows_from_records(records, cfg.window, cfg.stride)
    tree = SeriesTree.build(windows, cap=cfg.cap, seed=cfg.seed)
    tree.save(out_tree)
    info = tree_summary(tree, out_tree)
    info["windows_indexed"] = tree.total_windows
    return info


def do_query(
    tree: SeriesTree,
    values: list[float] | np.ndarray,
    domain: str | None,
    cfg: RunConfig,
    *,
    already_normalized: bool = False,
) -> RetrievalResult:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size != tree.window_size:
        raise DataError(
            f"query needs {tree.window_size} values, got {arr.size}"
        )
    if not already_normalized:
        arr, _ = normalize(arr)
    return retrieve_topk(arr, tree, domain, k=cfg.k, rho=cfg.rho, probes=cfg.probes)


def do_insert(
    tree: SeriesTree,
    store_paths: list[str],
    stride: int,
) -> dict:
    """Segment every series in the stores and insert each window."""
    records = read_stores(store_paths)
    windows = windows_from_records(records, tree.window_size, stride)
    reports = [tree.insert(w) for w in windows]
    return {
        "inserted": len(reports),
        "new_domains": sorted({r.domain for r in reports if r.new_domain}),
        "splits": sum(1 for r in reports if r.split),
    }


def do_eval(
    tree: SeriesTree,
    cfg: RunConfig,
    *,
    n_queries: int = 100,
    probes_values: list[str | int] | None = None,
    noise: float = 0.05,
    workers: int = 1,
    report_path: str | None = None,
) -> tuple[list[EvalRow], str | None]:
    """Recall/cost sweep with queries perturbed from the indexed corpus."""
    if n_queries < 1:
        raise ConfigError("n_queries must be >= 1")
    if probes_values is None:
        probes_values = [cfg.probes]
    entries = list(tree.entries.items())
    if not entries:
        raise DataError("tree has no windows to sample queries from")
    rng = np.random.default_rng(cfg.seed)
    picks = rng.integers(0, len(entries), size=n_queries)
    queries: list[tuple[np.ndarray, str | None]] = []
    for i in picks:
        _, entry = entries[int(i)]
        vec, _ = normalize(entry.vector + noise * rng.standard_normal(tree.window_size))
        queries.append((vec, None))
    rows = run_eval(
        tree, queries, k_values=[cfg.k], probes_values=probes_values,
        rho=cfg.rho, workers=workers,
    )
    written = None
    if report_path:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(rows_to_csv(rows), encoding="utf-8")
        written = report_path
    return rows, written


def _report_csv(rows: list[tuple[str, int, float, float]]) -> str:
    lines = [REPORT_HEADER]
    for split, count, mse, mse_norm in rows:
        lines.append(f"{split},{count},{mse!r},{mse_norm!r}")
    return "\n".join(lines) + "\n"


def do_forecast(
    store_paths: list[str],
    cfg: RunConfig,
    *,
    tree: SeriesTree | None,
    ablate_rag: bool = False,
    backend: str | None = None,
    epochs: int = 30,
    lr: float = 0.01,
    batch_size: int = 32,
    sample_stride: int | None = None,
    limit: int | None = None,
    report_path: str | None = None,
    params_out: str | None = None,
    params_in: str | None = None,
) -> dict:
    """Train/evaluate the numeric path, or drive an external text backend.

    The numeric path fits the fusion weights and linear head on the train
    split and reports MSE (original scale and normalized) on all three
    splits. The external path prompts the backend on the test split only.
    """
    records = read_stores(store_paths)
    if not ablate_rag and tree is None:
        raise ConfigError("forecast needs a tree unless --ablate-rag is set")
    splits = make_samples(records, cfg.window, cfg.horizon, sample_stride)
    if not ablate_rag and tree is not None:
        for name in splits:
            attach_retrieval(splits[name], tree, cfg.k, cfg.rho, cfg.probes)

    if backend is not None:
        samples = splits["test"]
        if limit is not None:
            samples = samples[: max(limit, 0)]
        if not samples:
            raise DataError("no test samples to forecast")
        mse, mse_norm = evaluate_external(
            samples, ExternalBackend(command=backend), cfg.horizon, ablate_rag
        )
        rows = [("test", len(samples), mse, mse_norm)]
        out = {
            "mode": "external",
            "ablate_rag": ablate_rag,
            "rows": [
                {"split": s, "samples": n, "mse": a, "mse_normalized": b}
                for s, n, a, b in rows
            ],
        }
    else:
        if params_in is not None:
            params = FusionParams.load(params_in)
        else:
            params = FusionParams.init(cfg.d, cfg.h, seed=cfg.seed)
        head = LinearHead.init(cfg.window, cfg.horizon, seed=cfg.seed + 1)
        history = train_forecaster(
            splits, params, head, cfg,
            epochs=epochs, lr=lr, batch_size=batch_size, ablate=ablate_rag,
        )
        rows = []
        for name in ("train", "val", "test"):
            if splits[name]:
                mse, mse_norm = evaluate_numeric(splits[name], params, head, ablate_rag)
                rows.append((name, len(splits[name]), mse, mse_norm))
        if params_out:
            params.save(params_out)
            head.save(str(params_out) + ".head")
        out = {
            "mode": "numeric",
            "ablate_rag": ablate_rag,
            "epochs": epochs,
            "history": [
                {
                    "epoch": h.epoch,
                    "train_loss": h.train_loss,
                    "val_mse_normalized": h.val_mse_norm,
                }
                for h in history
            ],
            "rows": [
                {"split": s, "samples": n, "mse": a, "mse_normalized": b}
                for s, n, a, b in rows
            ],
        }
    if report_path:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(_report_csv(rows), encoding="utf-8")
        out["report_path"] = report_path
    if params_out and backend is None:
        out["params_path"] = params_out
    return out


def do_synth(
    kind: str,
    seed: int,
    out_base: str,
    out_targets: str | None = None,
    *,
    n_windows: int = 10000,
    width: int = 64,
    n_domains: int = 4,
    clusters_per_domain: int = 10,
    noise: float = 0.15,
    length: int = 512,
    motifs_per_domain: int = 4,
    base_per_motif: int = 6,
    targets_per_motif: int = 2,
) -> dict:
    """Materialize one of the built-in synthetic benchmarks as store files."""
    if kind == "windows":
        windows = clustered_windows(
            n_windows, width=width, n_domains=n_domains,
            clusters_per_domain=clusters_per_domain, noise=noise, seed=seed,
        )
        records = [
            StoreRecord(
                domain_category=w.domain,
                item_id=w.parent_id,
                start="0",
                end=str(w.values.size - 1),
                freq="-",
                target=w.values,
            )
            for w in windows
        ]
        write_store(records, out_base)
        return {"kind": kind, "base_store": out_base, "records": len(records)}
    if kind == "forecast":
        if not out_targets:
            raise ConfigError("synth forecast needs an output path for targets")
        base, targets = forecast_benchmark(
            seed=seed, n_domains=n_domains, motifs_per_domain=motifs_per_domain,
            base_per_motif=base_per_motif, targets_per_motif=targets_per_motif,
            length=length, noise=noise,
        )
        write_store(base, out_base)
        write_store(targets, out_targets)
        return {
            "kind": kind,
            "base_store": out_base,
            "target_store": out_targets,
            "base_records": len(base),
            "target_records": len(targets),
        }
    raise ConfigError(f"unknown synth kind {kind!r}; use 'windows' or 'forecast'")
