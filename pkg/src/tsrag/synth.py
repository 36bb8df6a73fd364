"""Synthetic benchmark data with controllable cluster and motif structure.

Two generators:

* ``clustered_windows`` makes a corpus of fixed-width windows grouped around
  per-domain motifs, for exercising the index and retrieval quality.
* ``forecast_benchmark`` makes pairs of stores that share motifs: "base"
  series to index, and noisy "target" series to forecast. Retrieved base
  windows are denoised copies of a target's context, so retrieval carries
  genuine signal for the forecasting head.
"""

from __future__ import annotations

import numpy as np

from .series import SeriesWindow
from .store import StoreRecord, compute_end

DOMAIN_NAMES = ("nature", "energy", "traffic", "finance", "health", "web")


def domain_name(i: int) -> str:
    if i < len(DOMAIN_NAMES):
        return DOMAIN_NAMES[i]
    return f"domain{i}"


def _motif(rng: np.random.Generator, length: int, harmonics: int = 3) -> np.ndarray:
    """A smooth quasi-periodic curve: a few random sinusoids plus a mild trend."""
    t = np.arange(length, dtype=np.float64) / length
    out = np.zeros(length, dtype=np.float64)
    for _ in range(harmonics):
        amp = rng.uniform(0.5, 1.5)
        freq = rng.uniform(1.0, 9.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += amp * np.sin(2.0 * np.pi * freq * t + phase)
    out += rng.uniform(-1.0, 1.0) * t
    return out


def clustered_windows(
    n_windows: int,
    width: int = 64,
    n_domains: int = 4,
    clusters_per_domain: int = 10,
    noise: float = 0.15,
    seed: int = 0,
) -> list[SeriesWindow]:
    """Windows scattered around per-domain motifs, round-robin across groups."""
    rng = np.random.default_rng(seed)
    motifs = {
        (d, c): _motif(rng, width)
        for d in range(n_domains)
        for c in range(clusters_per_domain)
    }
    windows = []
    for i in range(n_windows):
        d = i % n_domains
        c = (i // n_domains) % clusters_per_domain
        values = motifs[(d, c)] + noise * rng.standard_normal(width)
        windows.append(
            SeriesWindow(
                parent_id=f"{domain_name(d)}-{i:06d}",
                channel=0,
                offset=0,
                values=values,
                domain=domain_name(d),
            )
        )
    return windows


def perturbed_queries(
    windows: list[SeriesWindow],
    n_queries: int,
    noise: float = 0.05,
    seed: int = 0,
    with_domain: bool = False,
) -> list[tuple[np.ndarray, str | None]]:
    """Noisy copies of corpus windows, z-normalized, as query targets."""
    from .series import normalize

    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(windows), size=n_queries)
    out = []
    for i in picks:
        w = windows[int(i)]
        target = w.values + noise * rng.standard_normal(w.values.size)
        vec, _ = normalize(target)
        out.append((vec, w.domain if with_domain else None))
    return out


def forecast_benchmark(
    seed: int = 0,
    n_domains: int = 4,
    motifs_per_domain: int = 4,
    base_per_motif: int = 6,
    targets_per_motif: int = 2,
    length: int = 512,
    noise: float = 0.3,
    base_noise: float | None = None,
) -> tuple[list[StoreRecord], list[StoreRecord]]:
    """(base records to index, target records to forecast), sharing motifs.

    Every series is its motif plus i.i.d. Gaussian noise on the same
    timeline, so a base window retrieved for a target context is a second
    observation of the same underlying curve. The base side defaults to a
    third of the target noise: the indexed corpus plays the role of curated
    history, and retrieving from it carries real denoising signal.
    """
    rng = np.random.default_rng(seed)
    if base_noise is None:
        base_noise = noise / 3.0
    start = "20000101"
    freq = "Daily"
    end = compute_end(start, freq, length) or str(length - 1)
    base: list[StoreRecord] = []
    targets: list[StoreRecord] = []
    for d in range(n_domains):
        dom = domain_name(d)
        for m in range(motifs_per_domain):
            motif = _motif(rng, length)
            for b in range(base_per_motif):
                base.append(
                    StoreRecord(
                        domain_category=dom,
                        item_id=f"{dom}-m{m}-base{b}",
                        start=start,
                        end=end,
                        freq=freq,
                        target=motif + base_noise * rng.standard_normal(length),
                    )
                )
            for t in range(targets_per_motif):
                targets.append(
                    StoreRecord(
                        domain_category=dom,
                        item_id=f"{dom}-m{m}-target{t}",
                        start=start,
                        end=end,
                        freq=freq,
                        target=motif + noise * rng.standard_normal(length),
                    )
                )
    return base, targets
