"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class ErrorDetail(BaseModel):
    kind: str  # "config" | "data" | "backend"
    message: str


class ConfigFields(BaseModel):
    """RunConfig fields as they appear in requests; all optional overrides."""

    window: int | None = None
    stride: int | None = None
    cap: int | None = None
    k: int | None = None
    rho: float | None = None
    probes: int | None = None
    d: int | None = None
    h: int | None = None
    lam: float | None = Field(default=None, alias="lambda")
    seed: int | None = None
    estimator: str | None = None
    bandwidth: float | str | None = None
    horizon: int | None = None

    model_config = {"populate_by_name": True}


class IngestRequest(BaseModel):
    csv_paths: list[str]
    domain: str
    freq: str = "-"
    out_store: str


class IngestResponse(BaseModel):
    store_path: str
    records_added: int
    records_total: int


class DomainSummary(BaseModel):
    domain: str
    clusters: int
    sizes: list[int]


class BuildRequest(BaseModel):
    store_paths: list[str]
    out_tree: str
    config_path: str | None = None
    config: ConfigFields = ConfigFields()


class TreeSummaryResponse(BaseModel):
    tree_path: str
    window_size: int
    cap: int
    seed: int
    total_windows: int
    domains: list[DomainSummary]


class BuildResponse(TreeSummaryResponse):
    windows_indexed: int


class QueryRequest(BaseModel):
    tree_path: str
    values: list[float]
    domain: str | None = None
    already_normalized: bool = False
    config_path: str | None = None
    config: ConfigFields = ConfigFields()


class HitModel(BaseModel):
    window_id: str
    score: float
    domain: str
    arm: str


class QueryResponse(BaseModel):
    hits: list[HitModel]
    evaluations: int
    clusters_probed: int


class InsertRequest(BaseModel):
    tree_path: str
    store_paths: list[str]
    stride: int | None = None  # defaults to the tree's window size
    save: bool = True


class InsertResponse(BaseModel):
    inserted: int
    new_domains: list[str]
    splits: int
    summary: TreeSummaryResponse


class EvalRequest(BaseModel):
    tree_path: str
    n_queries: int = 100
    probes_values: list[str] | None = None
    noise: float = 0.05
    workers: int = 1
    report_path: str | None = None
    config_path: str | None = None
    config: ConfigFields = ConfigFields()


class EvalRowModel(BaseModel):
    probes: str
    k: int
    queries: int
    recall: float
    mean_evaluations: float
    oracle_evaluations: int
    mean_seconds: float


class EvalResponse(BaseModel):
    rows: list[EvalRowModel]
    report_path: str | None = None


class ForecastRequest(BaseModel):
    store_paths: list[str]
    tree_path: str | None = None
    ablate_rag: bool = False
    backend: str | None = None
    epochs: int = 30
    lr: float = 0.01
    batch_size: int = 32
    sample_stride: int | None = None
    limit: int | None = None
    report_path: str | None = None
    params_out: str | None = None
    params_in: str | None = None
    config_path: str | None = None
    config: ConfigFields = ConfigFields()


class ForecastRow(BaseModel):
    split: str
    samples: int
    mse: float
    mse_normalized: float


class EpochModel(BaseModel):
    epoch: int
    train_loss: float
    val_mse_normalized: float | None = None


class ForecastResponse(BaseModel):
    mode: str
    ablate_rag: bool
    rows: list[ForecastRow]
    epochs: int | None = None
    history: list[EpochModel] | None = None
    report_path: str | None = None
    params_path: str | None = None


class SynthRequest(BaseModel):
    kind: str  # "windows" | "forecast"
    seed: int = 0
    out_base: str
    out_targets: str | None = None
    n_windows: int = 10000
    width: int = 64
    n_domains: int = 4
    clusters_per_domain: int = 10
    noise: float = 0.15
    length: int = 512
    motifs_per_domain: int = 4
    base_per_motif: int = 6
    targets_per_motif: int = 2


class SynthResponse(BaseModel):
    kind: str
    base_store: str
    target_store: str | None = None
    records: int | None = None
    base_records: int | None = None
    target_records: int | None = None
