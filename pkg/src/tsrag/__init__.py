"""tsrag: domain-partitioned time-series retrieval with forecast fusion.

The package indexes z-normalized series windows in a capped prototype tree,
answers hybrid local/global top-k similarity queries, and fuses retrieved
windows with a target through multi-grained patterns and cross-attention to
train a small retrieval-augmented forecasting head.
"""

from .config import RunConfig
from .errors import BackendError, ConfigError, DataError, EngineError
from .retrieval import Hit, RetrievalResult, retrieve_topk
from .series import RawSeries, SeriesWindow
from .store import StoreRecord, read_store, write_store
from .tree import SeriesTree

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "ConfigError",
    "DataError",
    "EngineError",
    "Hit",
    "RawSeries",
    "RetrievalResult",
    "RunConfig",
    "SeriesTree",
    "SeriesWindow",
    "StoreRecord",
    "read_store",
    "retrieve_topk",
    "write_store",
    "__version__",
]
