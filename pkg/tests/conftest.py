from __future__ import annotations

import numpy as np
import pytest

from tsrag.series import SeriesWindow
from tsrag.store import StoreRecord


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def make_window(values, *, parent="item", offset=0, domain="nature", channel=0) -> SeriesWindow:
    return SeriesWindow(
        parent_id=parent, channel=channel, offset=offset,
        values=np.asarray(values, dtype=np.float64), domain=domain,
    )


def make_record(item_id="series_0", domain="nature", values=(1.0, 2.0, 3.0),
                start="0", end="2", freq="-") -> StoreRecord:
    return StoreRecord(
        domain_category=domain, item_id=item_id, start=start, end=end,
        freq=freq, target=np.asarray(values, dtype=np.float64),
    )
