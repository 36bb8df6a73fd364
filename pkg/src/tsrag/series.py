"""Series protocol: missing-value repair, channel splitting, windowing, scaling.

Multivariate series are treated as independent univariate channels. A series
is repaired (missing values filled by linear interpolation), split into
channels, segmented into fixed-width windows, and each window is z-normalized
before it ever reaches the index. All array math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

# Std-dev floor so constant windows normalize to zeros instead of dividing
# by zero.
SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class NormStats:
    """Location/scale pair recorded when a window is normalized."""

    loc: float
    scale: float


@dataclass
class RawSeries:
    """A named series with a domain tag.

    ``values`` has shape (N, D); NaN entries mark missing observations.
    ``start`` and ``freq`` are free-form strings ("-" means unknown or
    irregular sampling).
    """

    item_id: str
    domain: str
    values: np.ndarray
    start: str = ""
    freq: str = "-"

    def __post_init__(self) -> None:
        if not self.item_id:
            raise DataError("series item_id must be non-empty")
        if not self.domain:
            raise DataError("series domain must be non-empty")
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(
                f"series {self.item_id!r}: values must be (N, D) with N >= 1, D >= 1"
            )
        self.values = arr

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class SeriesWindow:
    """A contiguous univariate slice of a repaired series."""

    parent_id: str
    channel: int
    offset: int
    values: np.ndarray
    domain: str
    norm: NormStats | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise DataError(f"window {self.window_id!r}: values must be 1-D and non-empty")
        if np.isnan(arr).any():
            raise DataError(f"window {self.window_id!r}: contains missing values")
        self.values = arr

    @property
    def window_id(self) -> str:
        return f"{self.parent_id}:{self.offset}"


def interpolate_missing(values: np.ndarray) -> np.ndarray:
    """Fill NaN entries by linear interpolation over the integer index.

    Interior gaps are interpolated between their neighbours; runs at either
    edge copy the nearest present value. Present values pass through
    unchanged (bit-exact). Accepts a 1-D array or an (N, D) array, which is
    repaired column by column.

    Raises:
        DataError: if any channel has no present value at all.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        return _fill_column(arr)
    if arr.ndim != 2:
        raise DataError("interpolate_missing expects a 1-D or 2-D array")
    out = np.empty_like(arr)
    for j in range(arr.shape[1]):
        out[:, j] = _fill_column(arr[:, j])
    return out


def _fill_column(col: np.ndarray) -> np.ndarray:
    present = ~np.isnan(col)
    if not present.any():
        raise DataError("cannot interpolate a channel with no present values")
    if present.all():
        return col.copy()
    out = col.copy()
    idx = np.arange(col.size, dtype=np.float64)
    out[~present] = np.interp(idx[~present], idx[present], col[present])
    return out


def split_channels(series: RawSeries) -> list[RawSeries]:
    """Split a multivariate series into independent univariate series.

    Each channel keeps the parent's domain, start, and freq; its item_id is
    the parent id suffixed with the channel index. A univariate input still
    yields one suffixed child so downstream ids stay uniform.
    """
    children = []
    for j in range(series.channels):
        children.append(
            RawSeries(
                item_id=f"{series.item_id}_{j}",
                domain=series.domain,
                values=series.values[:, j].copy(),
                start=series.start,
                freq=series.freq,
            )
        )
    return children


def count_windows(n: int, window: int, stride: int) -> int:
    """Number of sliding windows of width ``window`` and step ``stride``."""
    if n < window:
        return 0
    return (n - window) // stride + 1


def segment_windows(series: RawSeries, window: int, stride: int) -> list[SeriesWindow]:
    """Cut a repaired univariate series into sliding windows.

    Windows start at offsets 0, stride, 2*stride, ...; a trailing remainder
    shorter than ``window`` is dropped.

    Raises:
        DataError: if the series is multivariate, still contains missing
            values, or is shorter than one window.
    """
    if window < 1 or stride < 1:
        raise DataError("window and stride must be positive")
    if series.channels != 1:
        raise DataError(
            f"series {series.item_id!r}: segment_windows expects a univariate series; "
            "apply split_channels first"
        )
    col = series.values[:, 0]
    if np.isnan(col).any():
        raise DataError(
            f"series {series.item_id!r}: repair missing values before segmentation"
        )
    n = col.size
    if n < window:
        raise DataError(
            f"series {series.item_id!r}: length {n} is shorter than window {window}"
        )
    out = []
    for i in range(count_windows(n, window, stride)):
        off = i * stride
        out.append(
            SeriesWindow(
                parent_id=series.item_id,
                channel=0,
                offset=off,
                values=col[off : off + window].copy(),
                domain=series.domain,
            )
        )
    return out


def normalize(values: np.ndarray) -> tuple[np.ndarray, NormStats]:
    """z-normalize a 1-D window with the population standard deviation.

    The scale is floored at SCALE_FLOOR, so a constant window maps to all
    zeros rather than raising.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise DataError("normalize expects a non-empty 1-D array")
    loc = float(arr.mean())
    scale = float(arr.std())
    if scale < SCALE_FLOOR:
        scale = SCALE_FLOOR
    return (arr - loc) / scale, NormStats(loc=loc, scale=scale)


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Invert :func:`normalize` given the recorded location and scale."""
    arr = np.asarray(values, dtype=np.float64)
    return arr * stats.scale + stats.loc
