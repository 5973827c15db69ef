"""Losses and training loops: algebra, contracts, decorrelation effect."""

import numpy as np
import pytest

from decolite.data import synthetic_trend_dataset
from decolite.errors import ConfigError, NumericError, ShapeError, UsageError
from decolite.model import init_model, model_checksum
from decolite.training import (TrainConfig, build_ensemble, orthogonality_loss,
                               sequential_orthogonality_loss, total_loss, train_base,
                               train_decorrelated)


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def _quick(seed=0, **kw):
    defaults = dict(epochs=20, batch_size=16, plateau_patience=10, seed=seed)
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestOrthogonalityLoss:
    def test_single_channel_is_zero(self, rng):
        a = rng.normal(size=(3, 1, 8))
        b = rng.normal(size=(3, 1, 8))
        assert orthogonality_loss(a, b).item() == 0.0
        assert orthogonality_loss(a, b, mode="raw").item() == 0.0

    def test_orthonormal_identical_maps(self):
        f = np.stack([np.eye(3)] * 2)  # channels are orthonormal rows
        assert abs(orthogonality_loss(f, f, mode="raw").item()) < 1e-12

    def test_hand_two_channel_case(self):
        fa = np.array([[[1.0, 0.0], [1.0, 1.0]]])
        fa[0, 1] /= np.sqrt(2.0)
        fb = np.array([[[1.0, 0.0], [0.0, 1.0]]])
        assert abs(orthogonality_loss(fa, fb, mode="raw").item() - 0.7071) < 1e-4
        np.testing.assert_allclose(orthogonality_loss(fa, fb, mode="raw").item(),
                                   np.sqrt(0.5), atol=1e-6)
        np.testing.assert_allclose(orthogonality_loss(fa, fb, mode="mean").item(),
                                   np.sqrt(0.5) / 2.0, atol=1e-6)

    def test_symmetric_in_arguments(self, rng):
        for _ in range(5):
            a = rng.normal(size=(2, 4, 7))
            b = rng.normal(size=(2, 4, 7))
            for mode in ("mean", "raw"):
                d = abs(orthogonality_loss(a, b, mode).item()
                        - orthogonality_loss(b, a, mode).item())
                assert d <= 1e-12

    def test_invariant_to_positive_channel_rescaling(self, rng):
        a = rng.normal(size=(2, 4, 7))
        b = rng.normal(size=(2, 4, 7))
        base = orthogonality_loss(a, b).item()
        scale = rng.uniform(0.1, 10.0, size=(1, 4, 1))
        assert abs(orthogonality_loss(a * scale, b).item() - base) <= 1e-9
        assert abs(orthogonality_loss(a, b * scale).item() - base) <= 1e-9

    def test_nonnegative(self, rng):
        for _ in range(10):
            a, b = rng.normal(size=(2, 3, 5)), rng.normal(size=(2, 3, 5))
            assert orthogonality_loss(a, b, mode="raw").item() >= 0.0

    def test_mean_mode_divides_by_pair_count(self, rng):
        a, b = rng.normal(size=(2, 5, 6)), rng.normal(size=(2, 5, 6))
        raw = orthogonality_loss(a, b, mode="raw").item()
        mean = orthogonality_loss(a, b, mode="mean").item()
        np.testing.assert_allclose(mean, raw / (5 * 4), rtol=1e-12)

    def test_include_diagonal_switch(self, rng):
        a = rng.normal(size=(1, 3, 4))
        with_diag = orthogonality_loss(a, a, mode="raw", include_diagonal=True).item()
        without = orthogonality_loss(a, a, mode="raw").item()
        # the diagonal of a self-similarity matrix contributes C ones
        np.testing.assert_allclose(with_diag - without, 3.0, atol=1e-9)

    def test_shape_checks(self, rng):
        with pytest.raises(ShapeError):
            orthogonality_loss(rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 5)))
        with pytest.raises(ShapeError):
            orthogonality_loss(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
        with pytest.raises(ConfigError):
            orthogonality_loss(rng.normal(size=(1, 2, 3)), rng.normal(size=(1, 2, 3)),
                               mode="other")


class TestSequentialLoss:
    def test_single_term_equals_plain_loss(self, rng):
        f = rng.normal(size=(2, 3, 5))
        g = rng.normal(size=(2, 3, 5))
        assert sequential_orthogonality_loss(f, [g]).item() == \
            orthogonality_loss(f, g).item()

    def test_mean_of_equal_terms(self, rng):
        f = rng.normal(size=(2, 3, 5))
        g = rng.normal(size=(2, 3, 5))
        one = orthogonality_loss(f, g).item()
        two = sequential_orthogonality_loss(f, [g, g.copy()]).item()
        np.testing.assert_allclose(two, one, rtol=1e-12)

    def test_arithmetic_mean(self, rng):
        f = rng.normal(size=(1, 3, 6))
        gs = [rng.normal(size=(1, 3, 6)) for _ in range(2)]
        parts = [orthogonality_loss(f, g).item() for g in gs]
        got = sequential_orthogonality_loss(f, gs).item()
        np.testing.assert_allclose(got, np.mean(parts), rtol=1e-12)

    def test_empty_list_rejected(self, rng):
        with pytest.raises(UsageError):
            sequential_orthogonality_loss(rng.normal(size=(1, 2, 3)), [])


class TestTotalLoss:
    def test_arithmetic(self):
        assert total_loss(1.0, 0.5, 0.5).item() == 0.75

    def test_boundaries_exact(self):
        assert total_loss(1.23, 99.0, 1.0).item() == 1.23
        assert total_loss(99.0, 0.125, 0.0).item() == 0.125

    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError):
            total_loss(1.0, 1.0, 1.5)
        with pytest.raises(ConfigError):
            total_loss(1.0, 1.0, -0.1)


class TestTrainConfig:
    def test_defaults_match_protocol(self):
        cfg = TrainConfig()
        assert cfg.alpha == 0.5
        assert cfg.lr == 1e-3
        assert cfg.plateau_factor == 0.5
        assert cfg.plateau_patience == 50
        assert cfg.epochs == 1500
        assert cfg.batch_size == 64
        assert cfg.orth_normalization == "mean"

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(alpha=1.5).validate()
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(orth_normalization="other").validate()


class TestTrainBase:
    def test_reaches_full_accuracy_on_separable_data(self):
        ds = synthetic_trend_dataset(n=32, length=16, seed=0)
        net, log = train_base(ds, TrainConfig(epochs=200, batch_size=64, seed=0))
        assert any(r.train_accuracy == 1.0 for r in log.records)
        logits, _ = net.forward(ds.X, mode="eval")
        assert (logits.data.argmax(axis=1) == ds.y).all()

    def test_deterministic_across_runs(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=1)
        a, _ = train_base(ds, _quick(seed=3))
        b, _ = train_base(ds, _quick(seed=3))
        assert model_checksum(a) == model_checksum(b)

    def test_log_shape_and_orth_column(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=1)
        _, log = train_base(ds, _quick(seed=0, epochs=7))
        assert [r.epoch for r in log.records] == list(range(7))
        assert all(r.orth_loss == 0.0 for r in log.records)
        assert all(r.total_loss == r.ce_loss for r in log.records)
        assert all(np.isfinite(r.total_loss) for r in log.records)

    def test_returns_best_loss_checkpoint(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=1)
        net, log = train_base(ds, _quick(seed=0, epochs=30))
        best = min(r.total_loss for r in log.records)
        logits, _ = net.forward(ds.X, mode="eval")  # model is usable post-restore
        assert np.isfinite(best) and logits.data.shape == (16, 2)

    def test_divergence_aborts_with_epoch(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=0)
        with np.errstate(all="ignore"), pytest.raises(NumericError, match="epoch"):
            train_base(ds, _quick(seed=0, lr=1e200, epochs=10))


class TestTrainDecorrelated:
    def test_requires_previous_models(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=0)
        with pytest.raises(UsageError):
            train_decorrelated(ds, _quick(seed=1), [])

    def test_frozen_predecessors_unchanged(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=2)
        ref, _ = train_base(ds, _quick(seed=0, epochs=10))
        before = model_checksum(ref)
        train_decorrelated(ds, _quick(seed=1, epochs=10), [ref])
        assert model_checksum(ref) == before

    def test_seed_pairing_starts_bit_identical(self, monkeypatch):
        from decolite import training as training_mod
        ds = synthetic_trend_dataset(n=16, length=16, seed=2)
        initial = []
        real_init = training_mod.init_model

        def spying_init(arch, n_classes, seed):
            m = real_init(arch, n_classes, seed)
            initial.append((seed, model_checksum(m)))
            return m

        monkeypatch.setattr(training_mod, "init_model", spying_init)
        ref, _ = train_base(ds, _quick(seed=0, epochs=2))
        train_base(ds, _quick(seed=7, epochs=2))
        train_decorrelated(ds, _quick(seed=7, epochs=2), [ref])
        twin_base, twin_deco = initial[1], initial[2]
        assert twin_base[0] == twin_deco[0] == 7
        assert twin_base[1] == twin_deco[1]

    def test_orth_column_is_populated(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=2)
        ref, _ = train_base(ds, _quick(seed=0, epochs=8))
        _, log = train_decorrelated(ds, _quick(seed=1, epochs=8), [ref])
        assert all(r.orth_loss > 0.0 for r in log.records)

    def test_alpha_one_reproduces_plain_training_bitwise(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=3)
        ref, _ = train_base(ds, _quick(seed=0, epochs=8))
        plain, _ = train_base(ds, _quick(seed=5, epochs=25))
        deco, _ = train_decorrelated(ds, _quick(seed=5, epochs=25, alpha=1.0), [ref])
        assert model_checksum(plain) == model_checksum(deco)

    def test_feature_width_mismatch_rejected(self):
        from decolite.model import LiteArchitectureConfig
        ds = synthetic_trend_dataset(n=16, length=16, seed=1)
        slim = LiteArchitectureConfig(n_filters=16)
        ref, _ = train_base(ds, _quick(seed=0, epochs=2), arch=slim)
        with pytest.raises(ConfigError):
            train_decorrelated(ds, _quick(seed=1, epochs=2), [ref],
                               arch=LiteArchitectureConfig())

    def test_uncached_predecessor_features_give_identical_results(self, monkeypatch):
        # Below the memory cap the frozen models' features are computed once
        # up front; above it they are recomputed per batch. Eval-mode
        # forwards are pure, so both paths must train to the same bits.
        from decolite import training as training_mod
        ds = synthetic_trend_dataset(n=16, length=16, seed=2)
        ref, _ = train_base(ds, _quick(seed=0, epochs=6))
        cached, _ = train_decorrelated(ds, _quick(seed=1, epochs=12), [ref])
        monkeypatch.setattr(training_mod, "_FEATURE_CACHE_LIMIT", 0)
        uncached, _ = train_decorrelated(ds, _quick(seed=1, epochs=12), [ref])
        assert model_checksum(cached) == model_checksum(uncached)


@pytest.fixture(scope="module")
def decorrelation_runs():
    """One reference plus five (plain, decorrelated) same-seed twins."""
    train = synthetic_trend_dataset(n=32, length=96, seed=0)
    cfg = lambda s: TrainConfig(epochs=100, batch_size=64, seed=s)  # noqa: E731
    ref, _ = train_base(train, cfg(0))
    ref_checksum = model_checksum(ref)

    def eval_features(m):
        _, f = m.forward(train.X, mode="eval")
        return f.data

    ref_feats = eval_features(ref)
    pairs = []
    for seed in range(1, 6):
        plain, _ = train_base(train, cfg(seed))
        deco, _ = train_decorrelated(train, cfg(seed), [ref])
        pairs.append({
            "seed": seed,
            "orth_deco": orthogonality_loss(eval_features(deco), ref_feats).item(),
            "orth_plain": orthogonality_loss(eval_features(plain), ref_feats).item(),
        })
    return {"ref": ref, "ref_checksum": ref_checksum, "pairs": pairs}


class TestDecorrelationEffect:
    def test_decorrelated_twin_is_less_aligned_with_reference(self, decorrelation_runs):
        # Three-run comparison per seed: the decorrelated model should sit
        # closer to orthogonal against the reference than an independently
        # seeded plain model does, for a majority of seeds.
        wins = sum(p["orth_deco"] < p["orth_plain"] for p in decorrelation_runs["pairs"])
        assert wins >= 3, decorrelation_runs["pairs"]

    def test_reference_never_mutated(self, decorrelation_runs):
        assert model_checksum(decorrelation_runs["ref"]) == \
            decorrelation_runs["ref_checksum"]


class TestArchiveExamples:
    """Archive-gated checks; they run whenever DECO_DATA_ROOT is set."""

    def test_coffee_single_model_fits_training_set(self):
        from conftest import ucr_root_or_none
        from decolite.data import load_dataset
        from decolite.evaluation import accuracy
        root = ucr_root_or_none("Coffee")
        if root is None:
            pytest.skip("Coffee is not available offline")
        train, _ = load_dataset(root, "Coffee")
        net, _ = train_base(train, TrainConfig(seed=0))
        logits, _ = net.forward(train.X, mode="eval")
        assert accuracy(logits.data.argmax(axis=1), train.y) == 1.0

    def test_birdchicken_two_model_ensembles_favor_decorrelation(self, birdchicken_runs):
        from decolite.evaluation import ensemble_accuracy
        runs = birdchicken_runs
        wins = 0
        for pair in runs["pairs"]:
            deco_acc, _ = ensemble_accuracy([runs["ref"], pair["deco"]], runs["test"])
            base_acc, _ = ensemble_accuracy([runs["ref"], pair["base"]], runs["test"])
            wins += deco_acc >= base_acc
        assert wins >= 3, f"decorrelated pair matched or beat plain in {wins}/5"


class TestBuildEnsemble:
    def test_base_kind_trains_independent_seeds(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=4)
        build = build_ensemble(ds, _quick(epochs=5), size=2, kind="base")
        assert build.metadata["name"] == "LITETime-2"
        assert build.metadata["seeds"] == [0, 1]
        assert len(build.models) == 2
        assert all(r.orth_loss == 0.0 for log in build.logs for r in log.records)
        assert model_checksum(build.models[0]) != model_checksum(build.models[1])

    def test_deco_kind_bookkeeping(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=4)
        build = build_ensemble(ds, _quick(epochs=5), size=3, kind="deco")
        assert build.metadata["name"] == "Deco-LITETime-3"
        assert all(r.orth_loss == 0.0 for r in build.logs[0].records)
        assert all(r.orth_loss > 0.0 for r in build.logs[1].records)
        assert all(r.orth_loss > 0.0 for r in build.logs[2].records)

    def test_size_outside_range_warns_but_runs(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=4)
        with pytest.warns(UserWarning, match="outside the studied range"):
            build = build_ensemble(ds, _quick(epochs=2), size=6, kind="base")
        assert len(build.models) == 6

    def test_duplicate_seeds_rejected(self):
        ds = synthetic_trend_dataset(n=16, length=16, seed=4)
        with pytest.raises(ConfigError):
            build_ensemble(ds, _quick(epochs=2), size=2, kind="base", seeds=[1, 1])
