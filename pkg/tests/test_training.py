from __future__ import annotations

import stat
import sys

import numpy as np
import pytest

from tsrag.config import RunConfig
from tsrag.errors import ConfigError, DataError
from tsrag.forecast import ExternalBackend, LinearHead
from tsrag.fusion import FusionParams
from tsrag.store import StoreRecord
from tsrag.synth import forecast_benchmark
from tsrag.training import (
    Adam,
    ForecastSample,
    attach_retrieval,
    batch_loss,
    compute_gradients,
    evaluate_external,
    evaluate_numeric,
    forward_sample,
    make_samples,
    split_ranges,
    train_forecaster,
)
from tsrag.tree import SeriesTree
from tsrag.series import normalize
from tsrag.pipeline import windows_from_records


def small_config(**kw) -> RunConfig:
    base = dict(window=16, stride=16, cap=16, k=3, rho=0.6, probes=2,
                d=3, h=3, lam=0.1, seed=0, horizon=4, bandwidth=1.0)
    base.update(kw)
    return RunConfig(**base).validate()


def record(item_id: str, values, domain="nature") -> StoreRecord:
    values = np.asarray(values, dtype=np.float64)
    return StoreRecord(
        domain_category=domain,
        item_id=item_id,
        start="20000101",
        end="20000101",
        freq="Daily",
        target=values,
    )


@pytest.fixture()
def tiny_world(rng):
    """Benchmark records, a built tree, and samples with retrieval attached."""
    cfg = small_config()
    base, targets = forecast_benchmark(
        seed=0, n_domains=2, motifs_per_domain=2, base_per_motif=3,
        targets_per_motif=1, length=120, noise=0.2,
    )
    tree = SeriesTree.build(
        windows_from_records(base, cfg.window, cfg.stride), cap=cfg.cap, seed=cfg.seed
    )
    splits = make_samples(targets, cfg.window, cfg.horizon, sample_stride=8)
    for part in splits.values():
        attach_retrieval(part, tree, cfg.k, cfg.rho, cfg.probes)
    return cfg, tree, splits


class TestSplitRanges:
    def test_sixty_twenty_twenty(self):
        got = split_ranges(100)
        assert got == {"train": (0, 60), "val": (60, 80), "test": (80, 100)}

    def test_ranges_partition(self):
        for n in (7, 10, 33, 101, 512):
            got = split_ranges(n)
            assert got["train"][0] == 0
            assert got["train"][1] == got["val"][0]
            assert got["val"][1] == got["test"][0]
            assert got["test"][1] == n


class TestMakeSamples:
    def test_counts_and_offsets(self):
        rec = record("a", np.arange(100.0))
        splits = make_samples([rec], window=8, horizon=2, sample_stride=10)
        # train range [0, 60): offsets 0,10,...,50 -> 6 samples
        assert len(splits["train"]) == 6
        assert [s.offset for s in splits["train"]] == [0, 10, 20, 30, 40, 50]

    def test_no_sample_straddles_a_boundary(self):
        rec = record("a", np.arange(200.0))
        splits = make_samples([rec], window=16, horizon=4, sample_stride=1)
        ranges = split_ranges(200)
        for name, part in splits.items():
            lo, hi = ranges[name]
            for s in part:
                assert s.offset >= lo
                assert s.offset + 16 + 4 <= hi

    def test_truth_alignment(self):
        rec = record("a", np.arange(100.0))
        splits = make_samples([rec], window=8, horizon=3, sample_stride=50)
        s = splits["train"][0]
        np.testing.assert_array_equal(s.truth_raw, [8.0, 9.0, 10.0])
        expected_norm, stats = normalize(np.arange(8.0))
        np.testing.assert_array_equal(s.context_norm, expected_norm)
        np.testing.assert_allclose(
            s.truth_norm, (s.truth_raw - stats.loc) / stats.scale, atol=1e-12
        )

    def test_short_splits_are_skipped(self):
        # 30 points: val range is only 6 long, too short for 8+2.
        rec = record("a", np.arange(30.0))
        splits = make_samples([rec], window=8, horizon=2, sample_stride=1)
        assert splits["train"]
        assert not splits["val"]

    def test_all_too_short_raises(self):
        with pytest.raises(DataError, match="no samples"):
            make_samples([record("a", np.arange(10.0))], window=64, horizon=8)

    def test_bad_stride(self):
        with pytest.raises(ConfigError, match="sample_stride"):
            make_samples([record("a", np.arange(100.0))], 8, 2, sample_stride=0)


class TestRetrievalAttachment:
    def test_hits_and_vectors_align(self, tiny_world):
        cfg, tree, splits = tiny_world
        for s in splits["train"][:5]:
            assert len(s.hits) == cfg.k
            assert len(s.retrieved) == cfg.k
            for h, vec in zip(s.hits, s.retrieved):
                np.testing.assert_array_equal(vec, tree.entries[h.window_id].vector)


class TestForward:
    def test_ablation_ignores_retrieval(self, tiny_world):
        cfg, _, splits = tiny_world
        s = splits["train"][0]
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        params = FusionParams.init(cfg.d, cfg.h, seed=2)
        ablated = forward_sample(s, params, head, ablate=True).data
        plain = forward_sample(s, None, head, ablate=False).data
        np.testing.assert_array_equal(ablated, plain)
        fused = forward_sample(s, params, head, ablate=False).data
        assert not np.array_equal(fused, ablated)

    def test_empty_retrieval_falls_back(self, tiny_world):
        cfg, _, splits = tiny_world
        s = splits["train"][0]
        bare = ForecastSample(
            item_id=s.item_id, domain=s.domain, offset=s.offset,
            context_norm=s.context_norm, stats=s.stats,
            truth_raw=s.truth_raw, truth_norm=s.truth_norm,
        )
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        params = FusionParams.init(cfg.d, cfg.h, seed=2)
        np.testing.assert_array_equal(
            forward_sample(bare, params, head, ablate=False).data,
            forward_sample(bare, params, head, ablate=True).data,
        )


class TestGradients:
    def test_full_pipeline_matches_finite_differences(self, tiny_world):
        cfg, _, splits = tiny_world
        batch = splits["train"][:3]
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        params = FusionParams.init(cfg.d, cfg.h, seed=2)
        _, grads = compute_gradients(batch, params, head, cfg)
        named = dict(head.named_parameters())
        named.update(params.named_parameters())
        eps = 1e-6
        worst = 0.0
        for name in ("head.weights", "w_q", "interaction_mlp.w1", "average_mlp.b2"):
            t = named[name]
            flat = t.data.reshape(-1)
            idx = flat.size // 2
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = float(batch_loss(batch, params, head, cfg, False).data)
            flat[idx] = orig - eps
            lo = float(batch_loss(batch, params, head, cfg, False).data)
            flat[idx] = orig
            fd = (hi - lo) / (2.0 * eps)
            an = grads[name].reshape(-1)[idx]
            scale = max(abs(fd), abs(an), 1e-8)
            worst = max(worst, abs(fd - an) / scale)
        assert worst <= 1e-4

    def test_duplicated_batch_same_gradient(self, tiny_world):
        cfg, _, splits = tiny_world
        batch = splits["train"][:2]
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        params = FusionParams.init(cfg.d, cfg.h, seed=2)
        loss1, grads1 = compute_gradients(batch, params, head, cfg)
        loss2, grads2 = compute_gradients(batch + batch, params, head, cfg)
        assert loss1 == pytest.approx(loss2, rel=1e-12)
        for name in grads1:
            np.testing.assert_allclose(grads2[name], grads1[name], rtol=1e-9,
                                       atol=1e-12)

    def test_ablation_leaves_fusion_grads_out(self, tiny_world):
        cfg, _, splits = tiny_world
        batch = splits["train"][:2]
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        params = FusionParams.init(cfg.d, cfg.h, seed=2)
        _, grads = compute_gradients(batch, params, head, cfg, ablate=True)
        assert set(grads) == {"head.weights", "head.bias"}


class TestAdam:
    def test_deterministic_updates(self, rng):
        import tsrag.autodiff as ad

        def run():
            t = ad.parameter(np.array([1.0, -2.0, 3.0]))
            opt = Adam(lr=0.05)
            for _ in range(10):
                t.zero_grad()
                loss = ad.t_sum(t * t)
                loss.backward()
                opt.step({"t": t})
            return t.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_descends_a_quadratic(self):
        import tsrag.autodiff as ad

        t = ad.parameter(np.array([5.0]))
        opt = Adam(lr=0.2)
        for _ in range(200):
            t.zero_grad()
            ad.t_sum(t * t).backward()
            opt.step({"t": t})
        assert abs(float(t.data[0])) < 0.05

    def test_skips_missing_grads(self):
        import tsrag.autodiff as ad

        t = ad.parameter(np.array([1.0]))
        Adam().step({"t": t})
        np.testing.assert_array_equal(t.data, [1.0])


class TestTrainLoop:
    def test_loss_improves_and_history_is_complete(self, tiny_world):
        cfg, _, splits = tiny_world
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        params = FusionParams.init(cfg.d, cfg.h, seed=2)
        history = train_forecaster(splits, params, head, cfg, epochs=8, lr=0.02)
        assert [h.epoch for h in history] == list(range(8))
        assert history[-1].train_loss < history[0].train_loss

    def test_training_is_deterministic(self, tiny_world):
        cfg, _, splits = tiny_world

        def run():
            head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
            params = FusionParams.init(cfg.d, cfg.h, seed=2)
            train_forecaster(splits, params, head, cfg, epochs=3, lr=0.02)
            return head.weights.data.copy(), params.w_q.data.copy()

        (w1, q1), (w2, q2) = run(), run()
        np.testing.assert_array_equal(w1, w2)
        np.testing.assert_array_equal(q1, q2)

    def test_validation_mse_recorded(self, tiny_world):
        cfg, _, splits = tiny_world
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        history = train_forecaster(splits, None, head, cfg, epochs=2, ablate=True)
        assert all(h.val_mse_norm is not None for h in history) == bool(splits["val"])

    def test_bad_epochs_and_batches(self, tiny_world):
        cfg, _, splits = tiny_world
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        with pytest.raises(ConfigError, match="epochs"):
            train_forecaster(splits, None, head, cfg, epochs=0, ablate=True)
        with pytest.raises(ConfigError, match="batch_size"):
            train_forecaster(splits, None, head, cfg, batch_size=1, ablate=True)

    def test_empty_train_split(self, tiny_world):
        cfg, _, splits = tiny_world
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        empty = dict(splits)
        empty["train"] = []
        with pytest.raises(DataError, match="train split"):
            train_forecaster(empty, None, head, cfg, ablate=True)


class TestEvaluate:
    def test_numeric_mse_on_known_head(self, tiny_world):
        cfg, _, splits = tiny_world
        head = LinearHead.init(cfg.window, cfg.horizon, seed=1)
        mse_orig, mse_norm = evaluate_numeric(splits["test"], None, head, ablate=True)
        # recompute by hand
        se_o = se_n = cnt = 0
        for s in splits["test"]:
            pred = head.weights.data @ s.context_norm + head.bias.data
            se_n += ((pred - s.truth_norm) ** 2).sum()
            se_o += ((pred * s.stats.scale + s.stats.loc - s.truth_raw) ** 2).sum()
            cnt += pred.size
        assert mse_norm == pytest.approx(se_n / cnt, rel=1e-12)
        assert mse_orig == pytest.approx(se_o / cnt, rel=1e-12)

    def test_empty_eval_raises(self):
        head = LinearHead.init(4, 2, seed=0)
        with pytest.raises(DataError):
            evaluate_numeric([], None, head, ablate=True)


class TestEvaluateExternal:
    def make_backend(self, tmp_path, body: str) -> ExternalBackend:
        path = tmp_path / "backend.py"
        path.write_text(f"#!{sys.executable}\n{body}")
        path.chmod(path.stat().st_mode | stat.S_IXUSR)
        return ExternalBackend(command=str(path))

    def test_constant_backend_mse(self, tiny_world, tmp_path):
        cfg, _, splits = tiny_world
        backend = self.make_backend(
            tmp_path,
            "import sys\nsys.stdin.read()\nprint(', '.join(['0.0'] * 4))\n",
        )
        samples = splits["test"][:3]
        mse_orig, mse_norm = evaluate_external(samples, backend, cfg.horizon, False)
        se_n = sum(float((s.truth_norm**2).sum()) for s in samples)
        se_o = sum(float(((s.stats.loc - s.truth_raw) ** 2).sum()) for s in samples)
        cnt = sum(s.truth_norm.size for s in samples)
        assert mse_norm == pytest.approx(se_n / cnt, rel=1e-12)
        assert mse_orig == pytest.approx(se_o / cnt, rel=1e-12)

    def test_prompts_carry_retrieval_unless_ablated(self, tiny_world, tmp_path):
        cfg, _, splits = tiny_world
        log = tmp_path / "prompts.txt"
        backend = self.make_backend(
            tmp_path,
            "import sys\n"
            f"open({str(log)!r}, 'a').write(sys.stdin.read() + chr(0))\n"
            "print(', '.join(['0.0'] * 4))\n",
        )
        samples = splits["test"][:2]
        evaluate_external(samples, backend, cfg.horizon, ablate=False)
        with_retrieval = log.read_text().split(chr(0))[:-1]
        log.write_text("")
        evaluate_external(samples, backend, cfg.horizon, ablate=True)
        ablated = log.read_text().split(chr(0))[:-1]
        assert all("similarity=" in p and "average pattern:" in p
                   for p in with_retrieval)
        assert all("no auxiliary series retrieved" in p for p in ablated)
        assert all("metadata: domain=" in p for p in with_retrieval + ablated)
