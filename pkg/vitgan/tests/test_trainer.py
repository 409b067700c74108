import csv
import json
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
import torch
from django.test import SimpleTestCase, tag

from vitgan.dataset import batches, scan
from vitgan.discriminator import build_discriminator, discriminate
from vitgan.exceptions import ConfigError, NonFiniteGradientError, TrainingAborted
from vitgan.generator import VIT_GAN, build_generator
from vitgan.losses import generator_loss
from vitgan.substrate import grad_check, precision
from vitgan.trainer import (
    FINAL_CHECKPOINT,
    METRICS_HEADER,
    AdamState,
    LrSchedule,
    OptimizerConfig,
    adam_step,
    discriminator_accuracy,
    init_state,
    load_generator,
    mean_abs_ab_error,
    restore_checkpoint,
    save_checkpoint,
    train,
    train_step,
    trainable,
)

from .factories import (
    gradient_images,
    solid_images,
    tiny_generator_config,
    tiny_train_config,
    tiny_vit_config,
    truncated_jpeg,
)


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


class AdamTests(SimpleTestCase):
    def test_first_step_moves_by_the_learning_rate(self):
        theta = torch.zeros(1, dtype=torch.float64)
        params = {"theta": theta}
        state = AdamState.zeros(params)
        adam_step(params, {"theta": torch.ones(1, dtype=torch.float64)}, state, OptimizerConfig(lr=0.1))
        self.assertAlmostEqual(theta.item(), -0.1, places=6)
        self.assertEqual(state.t, 1)

    def test_zero_gradient_leaves_parameters_alone(self):
        theta = torch.tensor([1.5, -2.0])
        params = {"theta": theta}
        state = AdamState.zeros(params)
        for _ in range(3):
            adam_step(params, {"theta": torch.zeros(2)}, state, OptimizerConfig())
        torch.testing.assert_close(theta, torch.tensor([1.5, -2.0]))

    def test_missing_gradient_counts_as_zero(self):
        theta = torch.ones(3)
        params = {"theta": theta}
        adam_step(params, {}, AdamState.zeros(params), OptimizerConfig())
        self.assertTrue(torch.equal(theta, torch.ones(3)))

    def test_converges_on_a_quadratic(self):
        theta = torch.zeros(1, dtype=torch.float64)
        params = {"theta": theta}
        state = AdamState.zeros(params)
        cfg = OptimizerConfig(lr=0.01, beta1=0.9, beta2=0.999)
        for _ in range(2000):
            adam_step(params, {"theta": 2.0 * (theta - 3.0)}, state, cfg)
        self.assertLess(abs(theta.item() - 3.0), 1e-2)

    def test_non_finite_gradient_is_named_and_nothing_moves(self):
        params = {"ok": torch.ones(2), "bad": torch.ones(2)}
        state = AdamState.zeros(params)
        grads = {"ok": torch.ones(2), "bad": torch.tensor([1.0, float("nan")])}
        with self.assertRaises(NonFiniteGradientError) as ctx:
            adam_step(params, grads, state, OptimizerConfig())
        self.assertEqual(ctx.exception.name, "bad")
        self.assertIn("bad", str(ctx.exception))
        self.assertEqual(state.t, 0)
        self.assertTrue(torch.equal(params["ok"], torch.ones(2)))

    def test_optimizer_config_validation(self):
        with self.assertRaises(ConfigError):
            OptimizerConfig(lr=0.0)
        with self.assertRaises(ConfigError):
            OptimizerConfig(beta1=1.0)


class ScheduleTests(SimpleTestCase):
    def test_phases_then_last_rate_persists(self):
        schedule = LrSchedule([(59_000, 2e-4), (118_000, 2e-5)])
        self.assertEqual(schedule.lr_at(0, 1.0), 2e-4)
        self.assertEqual(schedule.lr_at(58_999, 1.0), 2e-4)
        self.assertEqual(schedule.lr_at(59_000, 1.0), 2e-5)
        self.assertEqual(schedule.lr_at(500_000, 1.0), 2e-5)
        self.assertEqual(schedule.total_steps, 177_000)

    def test_empty_schedule_uses_the_default(self):
        self.assertEqual(LrSchedule().lr_at(10, 3e-4), 3e-4)

    def test_invalid_phases(self):
        with self.assertRaises(ConfigError):
            LrSchedule([(0, 1e-4)])
        with self.assertRaises(ConfigError):
            LrSchedule([(10, -1e-4)])


class TrainConfigTests(SimpleTestCase):
    def test_batch_of_one_is_rejected(self):
        with self.assertRaises(ConfigError):
            tiny_train_config("data", "out", batch_size=1)

    def test_model_configs_must_agree_with_the_run(self):
        with self.assertRaises(ConfigError):
            tiny_train_config("data", "out", variant=VIT_GAN, generator=tiny_generator_config())
        with self.assertRaises(ConfigError):
            tiny_train_config("data", "out", image_size=128)

    def test_schedule_drives_both_optimizers(self):
        cfg = tiny_train_config(
            "data", "out",
            discriminator_optimizer=OptimizerConfig(lr=1e-3),
            schedule=((5, 1e-5),),
        )
        self.assertEqual(cfg.learning_rates(0), (1e-5, 1e-5))
        self.assertEqual(tiny_train_config("data", "out", discriminator_optimizer=OptimizerConfig(lr=1e-3))
                         .learning_rates(0), (2e-4, 1e-3))


class TrainStepTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        gradient_images(self.root / "data", 8, size=64)
        self.cfg = tiny_train_config(self.root / "data", self.root / "run")
        self.batch = next(batches(scan(self.cfg.data_root, 64), 4, seed=0, epoch=0))

    def test_losses_are_finite_and_the_step_advances(self):
        state = init_state(self.cfg)
        losses = train_step(self.batch, state, self.cfg)
        for value in losses.as_row().values():
            self.assertTrue(np.isfinite(value))
        self.assertAlmostEqual(losses.total_g, losses.adv_g + 100.0 * losses.l1, places=4)
        self.assertEqual(state.step, 1)
        self.assertEqual((state.generator_adam.t, state.discriminator_adam.t), (1, 1))

    def test_each_update_touches_only_its_own_network(self):
        state = init_state(self.cfg)
        calls = []

        def recording(params, grads, adam, cfg, lr=None):
            calls.append(set(params))
            return adam_step(params, grads, adam, cfg, lr)

        with mock.patch("vitgan.trainer.adam_step", side_effect=recording):
            train_step(self.batch, state, self.cfg)

        self.assertEqual(calls, [set(trainable(state.discriminator)), set(trainable(state.generator))])

    def test_zero_learning_rate_leaves_parameters_bitwise_unchanged(self):
        cfg = tiny_train_config(self.root / "data", self.root / "run", schedule=((10, 0.0),))
        state = init_state(cfg)
        before = {
            name: p.detach().clone()
            for module in (state.generator, state.discriminator)
            for name, p in module.named_parameters(prefix=type(module).__name__)
        }
        train_step(self.batch, state, cfg)
        after = {
            name: p.detach()
            for module in (state.generator, state.discriminator)
            for name, p in module.named_parameters(prefix=type(module).__name__)
        }
        for name, value in before.items():
            self.assertTrue(torch.equal(value, after[name]), name)

    def test_evaluation_helpers(self):
        state = init_state(self.cfg)
        error = mean_abs_ab_error(state.generator, state.extractor, [self.batch])
        self.assertGreaterEqual(error, 0.0)
        self.assertTrue(state.generator.training)
        accuracy = discriminator_accuracy(state.discriminator, self.batch.L, self.batch.ab, torch.zeros_like(self.batch.ab))
        self.assertGreaterEqual(accuracy, 0.0)
        self.assertLessEqual(accuracy, 1.0)

    def test_checkpoint_round_trip_restores_progress(self):
        state = init_state(self.cfg)
        train_step(self.batch, state, self.cfg)
        state.batch_index = 1
        path = self.root / "step.vgpc"
        save_checkpoint(path, state, self.cfg)

        restored = init_state(self.cfg)
        manifest = restore_checkpoint(path, restored)
        self.assertEqual(manifest["step"], 1)
        self.assertEqual((restored.step, restored.epoch, restored.batch_index), (1, 0, 1))
        self.assertEqual(restored.generator_adam.t, 1)
        for key, value in state.generator.state_dict().items():
            self.assertTrue(torch.equal(value, restored.generator.state_dict()[key]), key)
        self.assertTrue(torch.equal(state.rng.get_state(), restored.rng.get_state()))

        generator = load_generator(path, self.cfg)
        self.assertFalse(generator.training)


class TrainLoopTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        gradient_images(self.root / "data", 8, size=64)

    def config(self, run="run", **overrides):
        params = dict(batch_size=2, epochs=2)
        params.update(overrides)
        return tiny_train_config(self.root / "data", self.root / run, **params)

    def test_one_metrics_row_per_step_and_run_artifacts(self):
        result = train(self.config(), log_every=0)
        self.assertEqual(result.steps, 8)
        rows = read_rows(result.metrics_path)
        self.assertEqual(len(rows), 8)
        self.assertEqual(list(rows[0]), list(METRICS_HEADER))
        self.assertEqual([int(r["step"]) for r in rows], list(range(1, 9)))
        self.assertEqual([int(r["epoch"]) for r in rows], [0] * 4 + [1] * 4)
        self.assertEqual(result.final_checkpoint.name, FINAL_CHECKPOINT)
        self.assertTrue(result.final_checkpoint.exists())
        self.assertTrue((result.run_dir / "config.json").exists())
        self.assertFalse(hasattr(result, "history"))

    def test_max_steps_stops_early(self):
        result = train(self.config(max_steps=3), log_every=0)
        self.assertEqual(result.steps, 3)
        self.assertEqual(len(read_rows(result.metrics_path)), 3)

    def test_same_seed_gives_identical_logs_and_resume_continues_exactly(self):
        full = train(self.config("a", checkpoint_every=3), log_every=0)
        again = train(self.config("b"), log_every=0)
        self.assertEqual(full.metrics_path.read_text(), again.metrics_path.read_text())

        checkpoint = full.run_dir / "checkpoints" / "step-00000003.vgpc"
        self.assertTrue(checkpoint.exists())
        resumed = train(self.config("c"), resume=checkpoint, log_every=0)
        self.assertEqual(resumed.steps, 8)
        self.assertEqual(read_rows(resumed.metrics_path), read_rows(full.metrics_path)[3:])

    def test_unreadable_image_keeps_step_count_and_resume(self):
        truncated_jpeg(self.root / "data" / "grad_003b.jpg")
        full = train(self.config("a", checkpoint_every=3), log_every=0)
        self.assertEqual((full.steps, full.skipped), (8, 1))
        checkpoint = full.run_dir / "checkpoints" / "step-00000006.vgpc"
        resumed = train(self.config("c"), resume=checkpoint, log_every=0)
        self.assertEqual(read_rows(resumed.metrics_path), read_rows(full.metrics_path)[6:])

    def test_resume_in_place_truncates_later_rows(self):
        cfg = self.config(checkpoint_every=3)
        full = train(cfg, log_every=0)
        expected = full.metrics_path.read_text()
        train(cfg, resume=full.run_dir / "checkpoints" / "step-00000006.vgpc", log_every=0)
        self.assertEqual(full.metrics_path.read_text(), expected)

    def test_validation_log_has_one_row_per_epoch(self):
        gradient_images(self.root / "val", 3, size=64, seed=5)
        result = train(self.config(val_root=str(self.root / "val")), log_every=0)
        rows = read_rows(result.run_dir / "validation.csv")
        self.assertEqual([int(r["epoch"]) for r in rows], [0, 1])
        self.assertTrue(all(float(r["val_l1"]) >= 0.0 for r in rows))

    def test_plain_variant_needs_no_extractor(self):
        cfg = self.config(variant=VIT_GAN, epochs=1)
        with mock.patch("vitgan.trainer.build_extractor") as build:
            result = train(cfg, log_every=0)
        build.assert_not_called()
        self.assertEqual(result.steps, 4)

    def test_unwritable_checkpoint_aborts_after_flushing_metrics(self):
        cfg = self.config(checkpoint_every=2)
        with mock.patch("vitgan.container.save", side_effect=OSError(28, "No space left on device")):
            with self.assertRaises(TrainingAborted):
                train(cfg, log_every=0)
        self.assertEqual(len(read_rows(Path(cfg.output_dir) / "metrics.csv")), 2)

    def test_config_echo_is_written(self):
        cfg = self.config(echo={"seed": 0, "train": {"batch_size": 2}})
        result = train(cfg, log_every=0)
        self.assertEqual(json.loads((result.run_dir / "config.json").read_text())["train"], {"batch_size": 2})


@tag("slow")
class ConvergenceTests(SimpleTestCase):
    def test_overfits_solid_colours(self):
        with tempfile.TemporaryDirectory() as tmp:
            solid_images(Path(tmp) / "data", count=8, size=64)
            cfg = tiny_train_config(
                Path(tmp) / "data",
                Path(tmp) / "run",
                batch_size=8,
                epochs=2000,
                max_steps=2000,
                optimizer=OptimizerConfig(lr=5e-4),
                discriminator_optimizer=OptimizerConfig(lr=5e-4),
            )
            state = init_state(cfg)
            manifest = scan(cfg.data_root, cfg.image_size)
            batch = next(batches(manifest, 8, cfg.seed, 0))
            for _ in range(cfg.max_steps):
                losses = train_step(batch, state, cfg)
                if losses.l1 < 0.02:
                    break
            self.assertLess(mean_abs_ab_error(state.generator, state.extractor, [batch]), 0.05)
            noise = torch.rand(batch.ab.shape, generator=torch.Generator().manual_seed(1)) * 2 - 1
            self.assertGreater(discriminator_accuracy(state.discriminator, batch.L, batch.ab, noise), 0.9)

    def test_gradients_of_the_hybrid_loss_match_finite_differences(self):
        with precision(torch.float64):
            rng = torch.Generator().manual_seed(0)
            generator = build_generator(tiny_generator_config(VIT_GAN), rng)
            discriminator = build_discriminator(tiny_vit_config(dropout=0.0), rng)
            L = torch.rand(2, 1, 64, 64, generator=rng) * 2 - 1
            ab = torch.rand(2, 2, 64, 64, generator=rng) * 0.5

            def loss():
                fake = generator(L)
                total, _, _ = generator_loss(discriminate(L, fake, discriminator), fake, ab)
                return total

            params = list(generator.parameters()) + list(discriminator.parameters())
            self.assertLess(grad_check(loss, params, eps=1e-6, max_coords=200), 1e-3)
