import dataclasses
import math

import pytest

from rganctr.data import batch_size_for
from rganctr.errors import ConfigurationError, ValidationError
from rganctr.sampler import SamplerKind
from rganctr.training import EPOCH_COLUMNS, METRIC_COLUMNS, TrainConfig, adversarial_train, train

QUICK = TrainConfig(epochs=2, steps_per_epoch=4, pretrain_epochs=1, seed=1)


def _same_params(a, b):
    return all(p.value.tobytes() == b.params[k].value.tobytes() for k, p in a.params.items())


class TestTrainConfig:
    @pytest.mark.parametrize("field, value", [
        ("sampler", "bogus"), ("C", 0), ("K", 0), ("lr_d", 0.0), ("T0", -1.0),
        ("T_decay", 1.5), ("epochs", -1), ("lambda_h", -0.1),
    ])
    def test_rejects(self, field, value):
        with pytest.raises((ConfigurationError, ValueError)):
            dataclasses.replace(QUICK, **{field: value}).validate()

    def test_defaults_follow_published_schedule(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.steps_per_epoch, cfg.lr_d, cfg.lr_g) == (50, 30, 0.02, 0.01)
        assert (cfg.lambda_i, cfg.lambda_h, cfg.T0, cfg.T_decay, cfg.K) == (3.0, 5.0, 20.0, 0.98, 1)


class TestTrainLoop:
    @pytest.mark.parametrize("sampler", [k.value for k in SamplerKind])
    def test_every_sampler_runs(self, tiny_split, toy_cfg, sampler):
        train_ds, test_ds = tiny_split
        r = train(train_ds, test_ds, dataclasses.replace(QUICK, sampler=sampler), toy_cfg)
        assert len(r.epoch_rows) == 2
        assert 0.0 <= r.final_auc <= 1.0
        assert all(set(row) == set(METRIC_COLUMNS) for row in r.step_rows)
        assert all(set(row) == set(EPOCH_COLUMNS) for row in r.epoch_rows)
        assert (r.generator is not None) == SamplerKind(sampler).adversarial

    def test_metric_rows_per_epoch(self, tiny_split, toy_cfg):
        train_ds, _ = tiny_split
        P = len(train_ds.positives)
        for steps in (3, 4, 7):
            cfg = dataclasses.replace(QUICK, steps_per_epoch=steps, epochs=3)
            r = train(train_ds, None, cfg, toy_cfg)
            assert len(r.step_rows) == 3 * math.ceil(P / batch_size_for(P, steps))

    def test_zero_epochs_returns_pretrained_discriminator(self, tiny_split, toy_cfg):
        train_ds, test_ds = tiny_split
        r = train(train_ds, test_ds, dataclasses.replace(QUICK, epochs=0), toy_cfg)
        assert r.step_rows == [] and r.epoch_rows == [] and r.final_auc is None
        assert _same_params(r.discriminator, r.initial)
        fresh = train(train_ds, None, dataclasses.replace(QUICK, epochs=0, pretrain_epochs=0),
                      toy_cfg)
        assert not _same_params(r.discriminator, fresh.discriminator)

    def test_deterministic(self, tiny_split, toy_cfg):
        train_ds, test_ds = tiny_split
        a = train(train_ds, test_ds, QUICK, toy_cfg)
        b = train(train_ds, test_ds, QUICK, toy_cfg)
        assert a.step_rows == b.step_rows and a.epoch_rows == b.epoch_rows
        assert _same_params(a.discriminator, b.discriminator)

    def test_schedules(self, tiny_split, toy_cfg):
        train_ds, _ = tiny_split
        cfg = dataclasses.replace(QUICK, epochs=5, lr_decay_every=2, T0=10.0, T_decay=0.5)
        r = train(train_ds, None, cfg, toy_cfg)
        assert [row["lr_d"] for row in r.epoch_rows] == [0.02, 0.02, 0.01, 0.01, 0.005]
        assert [row["lr_g"] for row in r.epoch_rows] == [0.01, 0.01, 0.005, 0.005, 0.0025]
        assert [row["temperature"] for row in r.epoch_rows] == [10.0, 5.0, 2.5, 1.25, 0.625]

    def test_baseline_is_previous_batch_mean_reward(self, tiny_split, toy_cfg):
        train_ds, _ = tiny_split
        r = train(train_ds, None, QUICK, toy_cfg)
        rows = r.step_rows
        assert rows[0]["baseline"] == 0.0
        for prev, cur in zip(rows, rows[1:]):
            assert cur["baseline"] == prev["mean_reward"]

    def test_tau_diagnostic_optional(self, tiny_split, toy_cfg):
        train_ds, _ = tiny_split
        on = train(train_ds, None, QUICK, toy_cfg)
        off = train(train_ds, None, dataclasses.replace(QUICK, tau_diagnostic=False), toy_cfg)
        assert all(-1 <= row["tau"] <= 1 for row in on.epoch_rows)
        assert all(row["tau"] is None for row in off.epoch_rows)
        # the diagnostic draws from its own stream; selections are unaffected
        assert [x["d_loss"] for x in on.step_rows] == [x["d_loss"] for x in off.step_rows]

    def test_best_checkpoint_tracks_max_auc(self, tiny_split, toy_cfg):
        train_ds, test_ds = tiny_split
        r = train(train_ds, test_ds, dataclasses.replace(QUICK, epochs=3), toy_cfg)
        assert r.best_auc == max(row["test_auc"] for row in r.epoch_rows)

    def test_needs_both_classes(self, tiny_split, toy_cfg):
        train_ds, _ = tiny_split
        with pytest.raises(ValidationError):
            train(train_ds.subset(train_ds.positives), None, QUICK, toy_cfg)

    def test_adversarial_entry_point_checks_kind(self, tiny_split, toy_cfg):
        with pytest.raises(ConfigurationError):
            adversarial_train(tiny_split[0], None, dataclasses.replace(QUICK, sampler="uniform"),
                              toy_cfg)
