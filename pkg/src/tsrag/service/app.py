"""FastAPI service exposing the retrieval engine and forecasting pipeline.

Loaded trees are cached in a registry keyed by resolved path and guarded by
per-tree reader-writer locks: queries and evals take the read side, inserts
take the write side and persist back to disk. Engine errors map onto a
stable JSON error shape carrying the error kind (config/data/backend) that
the CLI translates into exit codes.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..config import RunConfig, load_config
from ..errors import BackendError, ConfigError, DataError, EngineError
from ..pipeline import (
    do_build,
    do_eval,
    do_forecast,
    do_ingest,
    do_insert,
    do_query,
    do_synth,
    tree_summary,
)
from ..tree import SeriesTree
from . import schemas as sm

ERROR_KINDS = {ConfigError: "config", DataError: "data", BackendError: "backend"}
ERROR_STATUS = {ConfigError: 422, DataError: 400, BackendError: 502}


class TreeRegistry:
    """Cache of loaded trees, reloaded when the file changes on disk."""

    def __init__(self) -> None:
        self._guard = threading.Lock()
        self._cache: dict[str, tuple[SeriesTree, float]] = {}

    def get(self, path: str) -> SeriesTree:
        key = str(Path(path).resolve())
        try:
            mtime = Path(key).stat().st_mtime
        except OSError as exc:
            raise DataError(f"cannot read tree {path}: {exc}") from exc
        with self._guard:
            cached = self._cache.get(key)
            if cached is not None and cached[1] == mtime:
                return cached[0]
        tree = SeriesTree.load(key)
        with self._guard:
            self._cache[key] = (tree, mtime)
        return tree

    def put(self, path: str, tree: SeriesTree) -> None:
        key = str(Path(path).resolve())
        try:
            mtime = Path(key).stat().st_mtime
        except OSError:
            return
        with self._guard:
            self._cache[key] = (tree, mtime)


def _config_from(payload_cfg: sm.ConfigFields, config_path: str | None) -> RunConfig:
    overrides = payload_cfg.model_dump(exclude_none=True)
    return load_config(config_path, overrides)


def create_app() -> FastAPI:
    app = FastAPI(title="tsrag", version="0.1.0")
    registry = TreeRegistry()
    app.state.registry = registry

    @app.exception_handler(EngineError)
    async def engine_error_handler(request: Request, exc: EngineError):
        kind = ERROR_KINDS.get(type(exc), "config")
        status = ERROR_STATUS.get(type(exc), 422)
        return JSONResponse(
            status_code=status,
            content={"detail": {"kind": kind, "message": str(exc)}},
        )

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/ingest", response_model=sm.IngestResponse)
    def ingest(req: sm.IngestRequest) -> sm.IngestResponse:
        out = do_ingest(req.csv_paths, req.domain, req.freq, req.out_store)
        return sm.IngestResponse(**out)

    @app.post("/build", response_model=sm.BuildResponse)
    def build(req: sm.BuildRequest) -> sm.BuildResponse:
        cfg = _config_from(req.config, req.config_path)
        info = do_build(req.store_paths, req.out_tree, cfg)
        registry.put(req.out_tree, SeriesTree.load(req.out_tree))
        return sm.BuildResponse(**info)

    @app.post("/query", response_model=sm.QueryResponse)
    def query(req: sm.QueryRequest) -> sm.QueryResponse:
        cfg = _config_from(req.config, req.config_path)
        tree = registry.get(req.tree_path)
        with tree.lock.read_lock():
            result = do_query(
                tree, req.values, req.domain, cfg,
                already_normalized=req.already_normalized,
            )
        return sm.QueryResponse(
            hits=[
                sm.HitModel(
                    window_id=h.window_id, score=h.score, domain=h.domain, arm=h.arm
                )
                for h in result.hits
            ],
            evaluations=result.stats.evaluations,
            clusters_probed=result.stats.clusters_probed,
        )

    @app.post("/insert", response_model=sm.InsertResponse)
    def insert(req: sm.InsertRequest) -> sm.InsertResponse:
        tree = registry.get(req.tree_path)
        with tree.lock.write_lock():
            stride = req.stride if req.stride is not None else tree.window_size
            out = do_insert(tree, req.store_paths, stride)
            if req.save:
                tree.save(req.tree_path)
        registry.put(req.tree_path, tree)
        return sm.InsertResponse(
            inserted=out["inserted"],
            new_domains=out["new_domains"],
            splits=out["splits"],
            summary=sm.TreeSummaryResponse(**tree_summary(tree, req.tree_path)),
        )

    @app.get("/stats", response_model=sm.TreeSummaryResponse)
    def stats(tree_path: str) -> sm.TreeSummaryResponse:
        tree = registry.get(tree_path)
        with tree.lock.read_lock():
            return sm.TreeSummaryResponse(**tree_summary(tree, tree_path))

    @app.post("/eval", response_model=sm.EvalResponse)
    def eval_(req: sm.EvalRequest) -> sm.EvalResponse:
        cfg = _config_from(req.config, req.config_path)
        tree = registry.get(req.tree_path)
        with tree.lock.read_lock():
            rows, written = do_eval(
                tree, cfg,
                n_queries=req.n_queries,
                probes_values=list(req.probes_values) if req.probes_values else None,
                noise=req.noise,
                workers=req.workers,
                report_path=req.report_path,
            )
        return sm.EvalResponse(
            rows=[sm.EvalRowModel(**vars(r)) for r in rows], report_path=written
        )

    @app.post("/forecast", response_model=sm.ForecastResponse)
    def forecast(req: sm.ForecastRequest) -> sm.ForecastResponse:
        cfg = _config_from(req.config, req.config_path)
        tree = registry.get(req.tree_path) if req.tree_path else None
        if tree is not None:
            with tree.lock.read_lock():
                out = _run_forecast(req, cfg, tree)
        else:
            out = _run_forecast(req, cfg, None)
        return sm.ForecastResponse(**out)

    def _run_forecast(req: sm.ForecastRequest, cfg: RunConfig, tree) -> dict:
        return do_forecast(
            req.store_paths, cfg,
            tree=tree,
            ablate_rag=req.ablate_rag,
            backend=req.backend,
            epochs=req.epochs,
            lr=req.lr,
            batch_size=req.batch_size,
            sample_stride=req.sample_stride,
            limit=req.limit,
            report_path=req.report_path,
            params_out=req.params_out,
            params_in=req.params_in,
        )

    @app.post("/synth", response_model=sm.SynthResponse)
    def synth(req: sm.SynthRequest) -> sm.SynthResponse:
        out = do_synth(
            req.kind, req.seed, req.out_base, req.out_targets,
            n_windows=req.n_windows, width=req.width, n_domains=req.n_domains,
            clusters_per_domain=req.clusters_per_domain, noise=req.noise,
            length=req.length, motifs_per_domain=req.motifs_per_domain,
            base_per_motif=req.base_per_motif, targets_per_motif=req.targets_per_motif,
        )
        return sm.SynthResponse(**out)

    return app
