"""Sample construction, the training loop, and forecast evaluation.

Each store record is split chronologically 60/20/20 into train/val/test
ranges; context/truth pairs are cut entirely inside one range, so no sample
straddles a boundary. Retrieval runs once up front against a frozen tree;
training then optimizes the fusion weights and the linear head jointly under
MSE + lambda * MMD^2 with Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .errors import ConfigError, DataError
from .forecast import (
    ExternalBackend,
    LinearHead,
    build_prompt,
    denormalize_forecast,
    median_heuristic_bandwidth,
    parse_forecast_text,
    residual_forecast,
    run_external_backend,
    total_loss_tensors,
)
from .fusion import FusionParams, cross_attention, interaction_pattern, average_pattern
from .retrieval import Hit, retrieve_topk
from .series import NormStats, normalize
from .store import StoreRecord
from .tree import SeriesTree

SPLIT_FRACTIONS = (0.6, 0.2)  # train, val; the rest is test
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class ForecastSample:
    """One supervised pair: a normalized context window and its continuation."""

    item_id: str
    domain: str
    offset: int
    context_norm: np.ndarray
    stats: NormStats
    truth_raw: np.ndarray
    truth_norm: np.ndarray
    hits: list[Hit] = field(default_factory=list)
    retrieved: list[np.ndarray] = field(default_factory=list)


def split_ranges(n: int) -> dict[str, tuple[int, int]]:
    """Chronological 60/20/20 index ranges for a series of length n."""
    t1 = int(math.floor(n * SPLIT_FRACTIONS[0]))
    t2 = int(math.floor(n * (SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1])))
    return {"train": (0, t1), "val": (t1, t2), "test": (t2, n)}


def make_samples(
    records: list[StoreRecord],
    window: int,
    horizon: int,
    sample_stride: int | None = None,
) -> dict[str, list[ForecastSample]]:
    """Cut context/truth pairs from every record, split by time range."""
    if sample_stride is None:
        sample_stride = max(1, horizon)
    if sample_stride < 1:
        raise ConfigError("sample_stride must be positive")
    out: dict[str, list[ForecastSample]] = {name: [] for name in SPLIT_NAMES}
    for rec in records:
        values = rec.target
        for name, (lo, hi) in split_ranges(values.size).items():
            span = hi - lo
            need = window + horizon
            if span < need:
                continue
            for off in range(lo, hi - need + 1, sample_stride):
                context = values[off : off + window]
                truth = values[off + window : off + window + horizon]
                context_norm, stats = normalize(context)
                out[name].append(
                    ForecastSample(
                        item_id=rec.item_id,
                        domain=rec.domain_category,
                        offset=off,
                        context_norm=context_norm,
                        stats=stats,
                        truth_raw=truth.copy(),
                        truth_norm=(truth - stats.loc) / stats.scale,
                    )
                )
    if not any(out.values()):
        raise DataError(
            f"no samples: every split is shorter than window+horizon={window + horizon}"
        )
    return out


def attach_retrieval(
    samples: list[ForecastSample],
    tree: SeriesTree,
    k: int,
    rho: float,
    probes: int,
) -> None:
    """Retrieve top-k windows for every sample against a frozen tree."""
    for s in samples:
        result = retrieve_topk(s.context_norm, tree, s.domain, k=k, rho=rho, probes=probes)
        s.hits = result.hits
        s.retrieved = [tree.entries[h.window_id].vector for h in result.hits]


def forward_sample(
    sample: ForecastSample,
    params: FusionParams | None,
    head: LinearHead,
    ablate: bool,
) -> Tensor:
    """Forecast one sample in normalized space (graph node)."""
    if ablate or params is None or not sample.retrieved:
        return residual_forecast(sample.context_norm, None, head)
    p_int, _ = interaction_pattern(sample.retrieved, params)
    p_avg, _ = average_pattern(sample.retrieved, params)
    fused, _ = cross_attention(sample.context_norm, p_avg, p_int, params)
    return residual_forecast(sample.context_norm, fused, head)


def batch_loss(
    samples: list[ForecastSample],
    params: FusionParams | None,
    head: LinearHead,
    cfg: RunConfig,
    ablate: bool,
) -> Tensor:
    """Combined loss over a batch; the MMD bandwidth is frozen per batch.

    With the median heuristic the bandwidth depends on the batch, but it is
    treated as a constant of the loss, not a differentiated quantity.
    """
    preds = ad.stack([forward_sample(s, params, head, ablate) for s in samples])
    truth = np.stack([s.truth_norm for s in samples])
    if isinstance(cfg.bandwidth, str):
        sigma = median_heuristic_bandwidth(preds.data, truth)
    else:
        sigma = float(cfg.bandwidth)
    return total_loss_tensors(
        preds, ad.constant(truth), cfg.lam, sigma, cfg.estimator
    )


def compute_gradients(
    samples: list[ForecastSample],
    params: FusionParams | None,
    head: LinearHead,
    cfg: RunConfig,
    ablate: bool = False,
) -> tuple[float, dict[str, np.ndarray]]:
    """One full forward/backward pass; returns (loss value, named gradients)."""
    named = dict(head.named_parameters())
    if params is not None and not ablate:
        named.update(params.named_parameters())
    for t in named.values():
        t.zero_grad()
    loss = batch_loss(samples, params, head, cfg, ablate)
    loss.backward()
    grads = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in named.items()
    }
    return float(loss.data), grads


class Adam:
    """Deterministic Adam over a named parameter dict."""

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, named: dict[str, Tensor]) -> None:
        self.t += 1
        for name, tns in named.items():
            g = tns.grad
            if g is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(tns.data))
            v = self.v.setdefault(name, np.zeros_like(tns.data))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            tns.data = tns.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse_norm: float | None


def evaluate_numeric(
    samples: list[ForecastSample],
    params: FusionParams | None,
    head: LinearHead,
    ablate: bool,
) -> tuple[float, float]:
    """(MSE in original scale, MSE in normalized space) over samples."""
    if not samples:
        raise DataError("cannot evaluate an empty sample list")
    se_orig = 0.0
    se_norm = 0.0
    count = 0
    for s in samples:
        pred_norm = forward_sample(s, params, head, ablate).data
        pred_orig = denormalize_forecast(pred_norm, s.stats)
        se_norm += float(((pred_norm - s.truth_norm) ** 2).sum())
        se_orig += float(((pred_orig - s.truth_raw) ** 2).sum())
        count += pred_norm.size
    return se_orig / count, se_norm / count


def train_forecaster(
    splits: dict[str, list[ForecastSample]],
    params: FusionParams | None,
    head: LinearHead,
    cfg: RunConfig,
    *,
    epochs: int = 30,
    lr: float = 0.01,
    batch_size: int = 32,
    ablate: bool = False,
) -> list[EpochRecord]:
    """Minibatch Adam over the train split; returns the per-epoch history."""
    if epochs < 1:
        raise ConfigError("epochs must be positive")
    if batch_size < 2:
        raise ConfigError("batch_size must be at least 2")
    train = splits["train"]
    if not train:
        raise DataError("train split is empty")
    named = dict(head.named_parameters())
    if params is not None and not ablate:
        named.update(params.named_parameters())
    opt = Adam(lr=lr)
    rng = np.random.default_rng(cfg.seed)
    history: list[EpochRecord] = []
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        total = 0.0
        batches = 0
        for lo in range(0, len(order), batch_size):
            batch = [train[i] for i in order[lo : lo + batch_size]]
            if len(batch) < 2:
                continue  # MMD needs at least two samples
            for t in named.values():
                t.zero_grad()
            loss = batch_loss(batch, params, head, cfg, ablate)
            loss.backward()
            opt.step(named)
            total += float(loss.data)
            batches += 1
        val = splits.get("val") or []
        val_mse = evaluate_numeric(val, params, head, ablate)[1] if val else None
        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=total / max(batches, 1),
                val_mse_norm=val_mse,
            )
        )
    return history


def evaluate_external(
    samples: list[ForecastSample],
    backend: ExternalBackend,
    horizon: int,
    ablate: bool,
) -> tuple[float, float]:
    """Prompt the external backend per sample; returns the two MSEs."""
    if not samples:
        raise DataError("cannot evaluate an empty sample list")
    from .fusion import raw_average, raw_interaction

    se_orig = 0.0
    se_norm = 0.0
    count = 0
    for s in samples:
        hits = [] if ablate else s.hits
        if hits:
            avg = raw_average(s.retrieved)
            inter = raw_interaction(s.retrieved)
        else:
            avg = inter = None
        prompt = build_prompt(
            s.context_norm,
            horizon,
            hits,
            raw_average=avg,
            raw_interaction=inter,
            metadata={"item": s.item_id, "domain": s.domain},
        )
        reply = run_external_backend(backend, prompt)
        pred_norm = parse_forecast_text(reply, horizon)
        pred_orig = denormalize_forecast(pred_norm, s.stats)
        se_norm += float(((pred_norm - s.truth_norm) ** 2).sum())
        se_orig += float(((pred_orig - s.truth_raw) ** 2).sum())
        count += pred_norm.size
    return se_orig / count, se_norm / count
