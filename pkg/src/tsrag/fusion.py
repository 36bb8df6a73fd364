"""Multi-grained fusion of retrieved windows with a target window.

Two order-invariant patterns summarize the retrieved set: the normalized
elementwise product (interaction) and the elementwise mean (average). Each
raw pattern passes through its own per-timestep two-layer MLP, and a
single-head cross-attention then reads them against the normalized target:
queries come from the target, keys from the average pattern, values from the
interaction pattern, and the attended values are projected back to series
space through the value weights.

Floating-point products and means are not associative, so both reductions
first sort the retrieved vectors by their byte representation. That makes
the patterns bit-exactly invariant to retrieval order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError
from .params_io import load_arrays, save_arrays

# Floor on the product-pattern norm so an all-zero product maps to zeros.
PRODUCT_NORM_FLOOR = 1e-12

DEFAULT_EMBED_DIM = 16
DEFAULT_HIDDEN_DIM = 16

PARAMS_FORMAT = "fusion-params"


def canonical_series(series) -> list[np.ndarray]:
    """Validate a retrieved set and return it in byte-sorted order."""
    arrays = [np.asarray(s, dtype=np.float64) for s in series]
    if not arrays:
        raise DataError("pattern extraction needs at least one retrieved series")
    width = arrays[0].size
    for arr in arrays:
        if arr.ndim != 1 or arr.size != width:
            raise DataError("retrieved series must be 1-D vectors of equal length")
    return sorted(arrays, key=lambda a: a.tobytes())


def raw_interaction(series) -> np.ndarray:
    """Elementwise product of the retrieved set, scaled to unit L2 norm.

    The norm is floored at PRODUCT_NORM_FLOOR, so a zero product stays zero.
    """
    ordered = canonical_series(series)
    prod = ordered[0].copy()
    for arr in ordered[1:]:
        prod = prod * arr
    norm = float(np.sqrt((prod * prod).sum()))
    return prod / max(norm, PRODUCT_NORM_FLOOR)


def raw_average(series) -> np.ndarray:
    """Elementwise mean of the retrieved set."""
    ordered = canonical_series(series)
    total = ordered[0].copy()
    for arr in ordered[1:]:
        total = total + arr
    return total / len(ordered)


@dataclass
class Mlp:
    """Two affine layers with a relu between, applied independently per timestep."""

    w1: Tensor  # (hidden, 1)
    b1: Tensor  # (hidden,)
    w2: Tensor  # (1, hidden)
    b2: Tensor  # (1,)

    def apply(self, x: Tensor) -> Tensor:
        w = x.shape[0]
        col = ad.reshape(x, (w, 1))
        hidden = ad.relu(ad.add(ad.matmul(col, ad.transpose(self.w1)), self.b1))
        out = ad.add(ad.matmul(hidden, ad.transpose(self.w2)), self.b2)
        return ad.reshape(out, (w,))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_mlp(rng: np.random.Generator, hidden: int) -> Mlp:
    return Mlp(
        w1=ad.parameter(_uniform(rng, (hidden, 1), 1)),
        b1=ad.parameter(_uniform(rng, (hidden,), 1)),
        w2=ad.parameter(_uniform(rng, (1, hidden), hidden)),
        b2=ad.parameter(_uniform(rng, (1,), hidden)),
    )


def identity_mlp(hidden: int) -> Mlp:
    """An MLP computing the identity exactly: relu(x) - relu(-x) == x.

    Useful as a reference initialization; needs hidden >= 2.
    """
    if hidden < 2:
        raise ConfigError("identity_mlp needs hidden >= 2")
    w1 = np.zeros((hidden, 1))
    w1[0, 0] = 1.0
    w1[1, 0] = -1.0
    w2 = np.zeros((1, hidden))
    w2[0, 0] = 1.0
    w2[0, 1] = -1.0
    return Mlp(
        w1=ad.parameter(w1),
        b1=ad.parameter(np.zeros(hidden)),
        w2=ad.parameter(w2),
        b2=ad.parameter(np.zeros(1)),
    )


@dataclass
class FusionParams:
    """All trainable weights of the fusion stage."""

    embed_dim: int
    hidden_dim: int
    w_q: Tensor  # (embed_dim, 1)
    w_k: Tensor  # (embed_dim, 1)
    w_v: Tensor  # (embed_dim, 1)
    interaction_mlp: Mlp
    average_mlp: Mlp

    @classmethod
    def init(
        cls,
        embed_dim: int = DEFAULT_EMBED_DIM,
        hidden_dim: int = DEFAULT_HIDDEN_DIM,
        seed: int = 0,
    ) -> "FusionParams":
        if embed_dim < 1 or hidden_dim < 1:
            raise ConfigError("embed_dim and hidden_dim must be positive")
        rng = np.random.default_rng(seed)
        return cls(
            embed_dim=embed_dim,
            hidden_dim=hidden_dim,
            w_q=ad.parameter(_uniform(rng, (embed_dim, 1), 1)),
            w_k=ad.parameter(_uniform(rng, (embed_dim, 1), 1)),
            w_v=ad.parameter(_uniform(rng, (embed_dim, 1), 1)),
            interaction_mlp=_init_mlp(rng, hidden_dim),
            average_mlp=_init_mlp(rng, hidden_dim),
        )

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v}
        out.update(self.interaction_mlp.named("interaction_mlp"))
        out.update(self.average_mlp.named("average_mlp"))
        return out

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.zero_grad()

    def save(self, path: str | Path) -> None:
        save_arrays(
            path,
            PARAMS_FORMAT,
            {"embed_dim": self.embed_dim, "hidden_dim": self.hidden_dim},
            {name: t.data for name, t in self.named_parameters().items()},
        )

    @classmethod
    def load(cls, path: str | Path) -> "FusionParams":
        meta, arrays = load_arrays(path, PARAMS_FORMAT)
        try:
            params = cls(
                embed_dim=int(meta["embed_dim"]),
                hidden_dim=int(meta["hidden_dim"]),
                w_q=ad.parameter(arrays["w_q"]),
                w_k=ad.parameter(arrays["w_k"]),
                w_v=ad.parameter(arrays["w_v"]),
                interaction_mlp=Mlp(
                    w1=ad.parameter(arrays["interaction_mlp.w1"]),
                    b1=ad.parameter(arrays["interaction_mlp.b1"]),
                    w2=ad.parameter(arrays["interaction_mlp.w2"]),
                    b2=ad.parameter(arrays["interaction_mlp.b2"]),
                ),
                average_mlp=Mlp(
                    w1=ad.parameter(arrays["average_mlp.w1"]),
                    b1=ad.parameter(arrays["average_mlp.b1"]),
                    w2=ad.parameter(arrays["average_mlp.w2"]),
                    b2=ad.parameter(arrays["average_mlp.b2"]),
                ),
            )
        except KeyError as exc:
            raise DataError(f"{path}: checkpoint missing array {exc}") from exc
        return params


def interaction_pattern(series, params: FusionParams) -> tuple[Tensor, np.ndarray]:
    """(MLP-projected interaction pattern, raw normalized product)."""
    raw = raw_interaction(series)
    return params.interaction_mlp.apply(ad.constant(raw)), raw


def average_pattern(series, params: FusionParams) -> tuple[Tensor, np.ndarray]:
    """(MLP-projected average pattern, raw elementwise mean)."""
    raw = raw_average(series)
    return params.average_mlp.apply(ad.constant(raw)), raw


def cross_attention(
    target_norm: np.ndarray | Tensor,
    p_avg: Tensor,
    p_int: Tensor,
    params: FusionParams,
) -> tuple[Tensor, Tensor]:
    """Attend the target over the patterns; returns (fused series, attention).

    Per timestep, the scalar target/pattern values are lifted to embed_dim
    via the query/key/value weights, scores are softmax(QK^T / sqrt(d)) row
    by row, and the attended values are projected back through w_v. The
    (w, w) attention matrix is returned alongside the fused length-w series.
    """
    t = target_norm if isinstance(target_norm, Tensor) else ad.constant(target_norm)
    w = t.shape[0]
    if p_avg.shape != (w,) or p_int.shape != (w,):
        raise DataError("cross_attention expects target and patterns of equal length")
    t_col = ad.reshape(t, (w, 1))
    q = ad.matmul(t_col, ad.transpose(params.w_q))  # (w, d)
    k = ad.matmul(ad.reshape(p_avg, (w, 1)), ad.transpose(params.w_k))
    v = ad.matmul(ad.reshape(p_int, (w, 1)), ad.transpose(params.w_v))
    scores = ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(params.embed_dim))
    attn = ad.softmax_rows(scores)  # (w, w), rows sum to 1
    context = ad.matmul(attn, v)  # (w, d)
    fused = ad.matmul(context, params.w_v)  # back-projection, (w, 1)
    return ad.reshape(fused, (w,)), attn


@dataclass
class PatternSet:
    """Numpy snapshot of one fusion forward pass."""

    raw_interaction: np.ndarray
    raw_average: np.ndarray
    projected_interaction: np.ndarray
    projected_average: np.ndarray
    attention: np.ndarray
    fused: np.ndarray


def fuse(
    target_norm: np.ndarray,
    series,
    params: FusionParams,
) -> tuple[Tensor, PatternSet]:
    """Full fusion forward pass: patterns + attention.

    Returns the fused residual series as a graph node (for training) plus a
    detached snapshot of every intermediate.
    """
    p_int, raw_int = interaction_pattern(series, params)
    p_avg, raw_avg = average_pattern(series, params)
    fused, attn = cross_attention(target_norm, p_avg, p_int, params)
    snapshot = PatternSet(
        raw_interaction=raw_int,
        raw_average=raw_avg,
        projected_interaction=p_int.data.copy(),
        projected_average=p_avg.data.copy(),
        attention=attn.data.copy(),
        fused=fused.data.copy(),
    )
    return fused, snapshot
