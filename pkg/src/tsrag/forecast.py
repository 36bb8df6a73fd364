"""Forecast heads, loss functions, and the text-backend bridge.

The numeric path adds the fused retrieval residual to the normalized target,
feeds the sum through a small linear head, and trains under MSE plus a
lambda-weighted squared maximum mean discrepancy (Gaussian kernel). The text
path renders a deterministic prompt describing the target and the retrieved
knowledge, pipes it to an external command, and parses the reply.
"""

from __future__ import annotations

import re
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import BackendError, ConfigError, DataError
from .params_io import load_arrays, save_arrays
from .retrieval import Hit
from .series import NormStats

DEFAULT_HORIZON = 16
DEFAULT_LAMBDA = 0.1
MEDIAN_BANDWIDTH = "median-heuristic"
FALLBACK_BANDWIDTH = 1.0

HEAD_FORMAT = "linear-head"

LINEAR_BASELINE = "linear-baseline"
EXTERNAL = "external"


# ----------------------------------------------------------------------
# numeric head


@dataclass
class LinearHead:
    """Affine map from a length-w fused context to a length-h forecast."""

    context: int
    horizon: int
    weights: Tensor  # (horizon, context)
    bias: Tensor  # (horizon,)

    kind = LINEAR_BASELINE

    @classmethod
    def init(cls, context: int, horizon: int, seed: int = 0) -> "LinearHead":
        if context < 1 or horizon < 1:
            raise ConfigError("context and horizon must be positive")
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(context)
        return cls(
            context=context,
            horizon=horizon,
            weights=ad.parameter(rng.uniform(-bound, bound, size=(horizon, context))),
            bias=ad.parameter(rng.uniform(-bound, bound, size=horizon)),
        )

    def apply(self, fused: Tensor) -> Tensor:
        return ad.add(ad.matmul(self.weights, fused), self.bias)

    def named_parameters(self) -> dict[str, Tensor]:
        return {"head.weights": self.weights, "head.bias": self.bias}

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.zero_grad()

    def save(self, path: str | Path) -> None:
        save_arrays(
            path,
            HEAD_FORMAT,
            {"context": self.context, "horizon": self.horizon},
            {name: t.data for name, t in self.named_parameters().items()},
        )

    @classmethod
    def load(cls, path: str | Path) -> "LinearHead":
        meta, arrays = load_arrays(path, HEAD_FORMAT)
        try:
            return cls(
                context=int(meta["context"]),
                horizon=int(meta["horizon"]),
                weights=ad.parameter(arrays["head.weights"]),
                bias=ad.parameter(arrays["head.bias"]),
            )
        except KeyError as exc:
            raise DataError(f"{path}: checkpoint missing array {exc}") from exc


@dataclass
class ExternalBackend:
    """A forecasting subprocess: prompt on stdin, numbers on stdout."""

    command: str
    timeout: float = 120.0

    kind = EXTERNAL

    @property
    def argv(self) -> list[str]:
        argv = shlex.split(self.command)
        if not argv:
            raise ConfigError("external backend command is empty")
        return argv


def residual_forecast(
    target_norm: np.ndarray,
    fused_residual: Tensor | None,
    head: LinearHead,
) -> Tensor:
    """head(target + residual); with no residual, just head(target)."""
    t = ad.constant(np.asarray(target_norm, dtype=np.float64))
    fused = t if fused_residual is None else ad.add(t, fused_residual)
    return head.apply(fused)


def denormalize_forecast(forecast: np.ndarray, stats: NormStats) -> np.ndarray:
    """Map a normalized-space forecast back to the target's original scale."""
    return np.asarray(forecast, dtype=np.float64) * stats.scale + stats.loc


# ----------------------------------------------------------------------
# prompt rendering and parsing


def _fmt(values: np.ndarray) -> str:
    return ", ".join(f"{v:.4f}" for v in values)


def build_prompt(
    target_norm: np.ndarray,
    horizon: int,
    hits: list[Hit],
    raw_average: np.ndarray | None = None,
    raw_interaction: np.ndarray | None = None,
    metadata: dict[str, str] | None = None,
) -> str:
    """Render the deterministic four-section forecasting prompt.

    Sections: task instruction, target summary (min/max/mean/last/trend and
    the values at four decimals), retrieved knowledge (per-hit domain and
    score plus the two pattern series, or a fixed sentence when empty), and
    the output-format instruction. Identical inputs give identical text.
    """
    t = np.asarray(target_norm, dtype=np.float64)
    if t.ndim != 1 or t.size < 1:
        raise DataError("build_prompt expects a non-empty 1-D target")
    if horizon < 1:
        raise ConfigError("horizon must be positive")
    delta = t[-1] - t[0]
    trend = "increasing" if delta > 0 else ("decreasing" if delta < 0 else "flat")
    lines = [
        f"Forecast the next {horizon} values of a univariate time series "
        f"from its {t.size} most recent normalized values.",
        "",
        "Target series:",
    ]
    if metadata:
        rendered = " ".join(f"{k}={metadata[k]}" for k in sorted(metadata))
        lines.append(f"metadata: {rendered}")
    lines.append(
        f"min={t.min():.4f} max={t.max():.4f} mean={t.mean():.4f} "
        f"last={t[-1]:.4f} trend={trend}"
    )
    lines.append(f"values: {_fmt(t)}")
    lines.append("")
    lines.append("Retrieved knowledge:")
    if hits:
        for h in hits:
            lines.append(f"- domain={h.domain} similarity={h.score:.4f}")
        if raw_average is not None:
            lines.append(f"average pattern: {_fmt(np.asarray(raw_average))}")
        if raw_interaction is not None:
            lines.append(f"interaction pattern: {_fmt(np.asarray(raw_interaction))}")
    else:
        lines.append("no auxiliary series retrieved")
    lines.append("")
    lines.append(
        f"Reply with exactly {horizon} comma-separated numbers and nothing else."
    )
    return "\n".join(lines)


_NUMBER = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


def parse_forecast_text(text: str, horizon: int) -> np.ndarray:
    """Extract the first ``horizon`` numbers from a backend reply.

    Raises:
        BackendError: when the reply contains fewer numbers than required.
    """
    found = _NUMBER.findall(text)
    if len(found) < horizon:
        raise BackendError(
            f"malformed backend reply: expected {horizon} numbers, found {len(found)}"
        )
    values = np.asarray([float(tok) for tok in found[:horizon]], dtype=np.float64)
    if not np.isfinite(values).all():
        raise BackendError("malformed backend reply: non-finite number")
    return values


def run_external_backend(backend: ExternalBackend, prompt: str) -> str:
    """Send one prompt to the backend process and return its stdout."""
    try:
        proc = subprocess.run(
            backend.argv,
            input=prompt.encode("utf-8"),
            capture_output=True,
            timeout=backend.timeout,
        )
    except FileNotFoundError as exc:
        raise BackendError(f"backend command not found: {backend.argv[0]!r}") from exc
    except subprocess.TimeoutExpired as exc:
        raise BackendError(f"backend timed out after {backend.timeout}s") from exc
    if proc.returncode != 0:
        detail = proc.stderr.decode("utf-8", "replace").strip()[:300]
        raise BackendError(f"backend exited with status {proc.returncode}: {detail}")
    return proc.stdout.decode("utf-8", "replace")


# ----------------------------------------------------------------------
# maximum mean discrepancy and the training loss

BIASED = "biased"
UNBIASED = "unbiased"


def _as_samples(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DataError("mmd2 expects samples shaped (n, features)")
    return arr


def median_heuristic_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise distance over the pooled samples; 1.0 when degenerate."""
    pooled = np.vstack([_as_samples(x), _as_samples(y)])
    n = pooled.shape[0]
    if n < 2:
        return FALLBACK_BANDWIDTH
    sq = ((pooled[:, None, :] - pooled[None, :, :]) ** 2).sum(axis=2)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(np.sqrt(np.maximum(sq[iu], 0.0))))
    if med <= 0.0:
        return FALLBACK_BANDWIDTH
    return med


def _pairwise_sq_t(a: Tensor, b: Tensor) -> Tensor:
    m, n = a.shape[0], b.shape[0]
    sa = ad.reshape(ad.t_sum(ad.mul(a, a), axis=1), (m, 1))
    sb = ad.reshape(ad.t_sum(ad.mul(b, b), axis=1), (1, n))
    cross = ad.matmul(a, ad.transpose(b))
    d = ad.sub(ad.add(sa, sb), ad.mul(cross, 2.0))
    return ad.maximum_const(d, 0.0)


def mmd2_tensors(x: Tensor, y: Tensor, sigma: float, estimator: str = BIASED) -> Tensor:
    """Squared MMD with a Gaussian kernel of bandwidth ``sigma``, on the tape."""
    if sigma <= 0.0:
        raise ConfigError(f"bandwidth sigma={sigma} must be positive")
    m, n = x.shape[0], y.shape[0]
    scale = -1.0 / (2.0 * sigma * sigma)
    kxx = ad.t_exp(ad.mul(_pairwise_sq_t(x, x), scale))
    kyy = ad.t_exp(ad.mul(_pairwise_sq_t(y, y), scale))
    kxy = ad.t_exp(ad.mul(_pairwise_sq_t(x, y), scale))
    if estimator == BIASED:
        return ad.sub(
            ad.add(ad.t_mean(kxx), ad.t_mean(kyy)), ad.mul(ad.t_mean(kxy), 2.0)
        )
    if estimator == UNBIASED:
        if m < 2 or n < 2:
            raise DataError("unbiased mmd2 needs at least two samples per side")
        off_x = ad.mul(kxx, 1.0 - np.eye(m))
        off_y = ad.mul(kyy, 1.0 - np.eye(n))
        return ad.sub(
            ad.add(
                ad.mul(ad.t_sum(off_x), 1.0 / (m * (m - 1))),
                ad.mul(ad.t_sum(off_y), 1.0 / (n * (n - 1))),
            ),
            ad.mul(ad.t_mean(kxy), 2.0),
        )
    raise ConfigError(f"unknown mmd estimator {estimator!r}")


def resolve_bandwidth(bandwidth: float | str, x: np.ndarray, y: np.ndarray) -> float:
    """Turn a bandwidth setting (number or "median-heuristic") into a sigma."""
    if isinstance(bandwidth, str):
        if bandwidth == MEDIAN_BANDWIDTH:
            return median_heuristic_bandwidth(x, y)
        raise ConfigError(f"unknown bandwidth {bandwidth!r}")
    if bandwidth <= 0.0:
        raise ConfigError(f"bandwidth {bandwidth} must be positive")
    return float(bandwidth)


def mmd2(
    x,
    y,
    *,
    bandwidth: float | str = MEDIAN_BANDWIDTH,
    estimator: str = BIASED,
) -> float:
    """Squared MMD between two sample sets (numpy facade over the tape math).

    The statistic is symmetric, but the cross-kernel summation order is not;
    arguments are put in a canonical order first so that mmd2(x, y) and
    mmd2(y, x) agree bit for bit.
    """
    xs, ys = _as_samples(x), _as_samples(y)
    if xs.shape[1] != ys.shape[1]:
        raise DataError("mmd2 sample sets must share the feature dimension")
    sigma = resolve_bandwidth(bandwidth, xs, ys)
    if (ys.shape[0], ys.tobytes()) < (xs.shape[0], xs.tobytes()):
        xs, ys = ys, xs
    return float(
        mmd2_tensors(ad.constant(xs), ad.constant(ys), sigma, estimator).data
    )


def total_loss_tensors(
    pred: Tensor,
    truth: Tensor,
    lam: float,
    sigma: float,
    estimator: str = BIASED,
) -> Tensor:
    """MSE + lam * MMD^2 between the forecast batch and the truth batch."""
    diff = ad.sub(pred, truth)
    mse = ad.t_mean(ad.mul(diff, diff))
    if lam == 0.0:
        return mse
    return ad.add(mse, ad.mul(mmd2_tensors(pred, truth, sigma, estimator), lam))


def total_loss(
    pred,
    truth,
    *,
    lam: float = DEFAULT_LAMBDA,
    bandwidth: float | str = MEDIAN_BANDWIDTH,
    estimator: str = BIASED,
) -> float:
    """Numpy facade for the combined loss on a batch of forecasts."""
    ps, ts = _as_samples(pred), _as_samples(truth)
    if ps.shape != ts.shape:
        raise DataError("total_loss expects prediction and truth of equal shape")
    if lam < 0.0:
        raise ConfigError(f"lambda {lam} must be >= 0")
    sigma = resolve_bandwidth(bandwidth, ps, ts) if lam > 0.0 else FALLBACK_BANDWIDTH
    return float(
        total_loss_tensors(ad.constant(ps), ad.constant(ts), lam, sigma, estimator).data
    )
