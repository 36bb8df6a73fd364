from __future__ import annotations

import numpy as np

from tsrag.synth import (
    clustered_windows,
    domain_name,
    forecast_benchmark,
    perturbed_queries,
)


class TestClusteredWindows:
    def test_shape_and_domains(self):
        wins = clustered_windows(80, width=32, n_domains=4, seed=0)
        assert len(wins) == 80
        assert all(w.values.size == 32 for w in wins)
        domains = {w.domain for w in wins}
        assert domains == {"nature", "energy", "traffic", "finance"}
        ids = [w.window_id for w in wins]
        assert len(set(ids)) == 80

    def test_seeded_determinism(self):
        a = clustered_windows(20, width=16, seed=5)
        b = clustered_windows(20, width=16, seed=5)
        for x, y in zip(a, b):
            assert x.window_id == y.window_id
            np.testing.assert_array_equal(x.values, y.values)
        c = clustered_windows(20, width=16, seed=6)
        assert any(not np.array_equal(x.values, y.values) for x, y in zip(a, c))

    def test_cluster_structure_is_real(self):
        # Same-cluster windows are much closer than cross-cluster ones.
        wins = clustered_windows(120, width=64, n_domains=2,
                                 clusters_per_domain=3, noise=0.1, seed=1)
        groups: dict[tuple, list] = {}
        for i, w in enumerate(wins):
            groups.setdefault((i % 2, (i // 2) % 3), []).append(w.values)
        within = np.mean([
            np.linalg.norm(g[0] - g[1]) for g in groups.values() if len(g) > 1
        ])
        keys = sorted(groups)
        across = np.mean([
            np.linalg.norm(groups[keys[i]][0] - groups[keys[j]][0])
            for i in range(len(keys)) for j in range(i + 1, len(keys))
        ])
        assert across > 3.0 * within


class TestPerturbedQueries:
    def test_queries_are_normalized(self):
        wins = clustered_windows(30, width=16, seed=2)
        queries = perturbed_queries(wins, 10, seed=3)
        assert len(queries) == 10
        for vec, domain in queries:
            assert domain is None
            assert abs(float(vec.mean())) < 1e-9
            assert abs(float(vec.std()) - 1.0) < 1e-6

    def test_domain_tagging(self):
        wins = clustered_windows(30, width=16, seed=2)
        queries = perturbed_queries(wins, 10, seed=3, with_domain=True)
        valid = {w.domain for w in wins}
        assert all(domain in valid for _, domain in queries)


class TestForecastBenchmark:
    def test_counts_and_split(self):
        base, targets = forecast_benchmark(
            seed=0, n_domains=2, motifs_per_domain=3, base_per_motif=4,
            targets_per_motif=2, length=100,
        )
        assert len(base) == 2 * 3 * 4
        assert len(targets) == 2 * 3 * 2
        assert all(r.target.size == 100 for r in base + targets)
        ids = [r.item_id for r in base + targets]
        assert len(set(ids)) == len(ids)

    def test_base_is_cleaner_than_targets(self):
        base, targets = forecast_benchmark(
            seed=0, n_domains=1, motifs_per_domain=1, base_per_motif=8,
            targets_per_motif=8, length=256, noise=0.3,
        )
        base_stack = np.stack([r.target for r in base])
        target_stack = np.stack([r.target for r in targets])
        base_spread = base_stack.std(axis=0).mean()
        target_spread = target_stack.std(axis=0).mean()
        assert target_spread > 2.0 * base_spread

    def test_shared_motif_links_base_and_targets(self):
        base, targets = forecast_benchmark(
            seed=1, n_domains=1, motifs_per_domain=2, base_per_motif=2,
            targets_per_motif=1, length=200, noise=0.2,
        )
        t0 = targets[0].target
        same = [r.target for r in base if r.item_id.startswith("nature-m0-")]
        other = [r.target for r in base if r.item_id.startswith("nature-m1-")]
        d_same = min(np.linalg.norm(t0 - b) for b in same)
        d_other = min(np.linalg.norm(t0 - b) for b in other)
        assert d_same < d_other

    def test_deterministic(self):
        a = forecast_benchmark(seed=4, n_domains=1, motifs_per_domain=1,
                               base_per_motif=2, targets_per_motif=1, length=64)
        b = forecast_benchmark(seed=4, n_domains=1, motifs_per_domain=1,
                               base_per_motif=2, targets_per_motif=1, length=64)
        for x, y in zip(a[0] + a[1], b[0] + b[1]):
            assert x.item_id == y.item_id
            np.testing.assert_array_equal(x.target, y.target)

    def test_record_dates_consistent(self):
        base, _ = forecast_benchmark(seed=0, n_domains=1, motifs_per_domain=1,
                                     base_per_motif=1, targets_per_motif=1,
                                     length=10)
        rec = base[0]
        assert rec.start == "20000101"
        assert rec.freq == "Daily"
        assert rec.end == "20000110"


class TestDomainNames:
    def test_named_then_numbered(self):
        assert domain_name(0) == "nature"
        assert domain_name(5) == "web"
        assert domain_name(6) == "domain6"
