import json
import tempfile
from pathlib import Path

from django.conf import settings
from django.test import SimpleTestCase

from vitgan.exceptions import ConfigError
from vitgan.forms import (
    DiscriminatorForm,
    OptimizerForm,
    TrainForm,
    apply_overrides,
    parse_override,
    resolve_config,
    train_config_from_tree,
)


def tree_for(preset="", **sections):
    tree = {"data": {"root": "/data/train"}, "output_dir": "/runs/test"}
    if preset:
        tree["preset"] = preset
    for key, value in sections.items():
        if isinstance(value, dict):
            tree.setdefault(key, {}).update(value)
        else:
            tree[key] = value
    return tree


def build(tree, overrides=()):
    return train_config_from_tree(resolve_config(tree=tree, overrides=overrides))


class PresetTests(SimpleTestCase):
    def test_defaults(self):
        cfg = build(tree_for())
        self.assertEqual((cfg.image_size, cfg.batch_size, cfg.epochs), (256, 16, 50))
        self.assertEqual(cfg.lambda_l1, 100.0)
        self.assertEqual((cfg.optimizer.lr, cfg.optimizer.beta1, cfg.optimizer.beta2), (2e-4, 0.5, 0.9))
        self.assertEqual(cfg.discriminator_optimizer, cfg.optimizer)
        self.assertEqual(cfg.discriminator.token_dim, 1024)
        self.assertEqual(cfg.variant, "vit-i-gan")

    def test_coco_schedule(self):
        cfg = build(tree_for("coco-2phase"))
        self.assertEqual(cfg.schedule, ((59000, 2e-4), (118000, 2e-5)))
        self.assertEqual(cfg.optimizer.beta2, 0.999)
        self.assertEqual(cfg.max_steps, 177_000)
        self.assertEqual(cfg.learning_rates(59_000), (2e-5, 2e-5))

    def test_tiny_preset(self):
        cfg = build(tree_for("tiny"))
        self.assertEqual(cfg.image_size, 64)
        self.assertEqual(cfg.discriminator.num_patches, 4)
        self.assertEqual(cfg.generator.encoder_channels, (8, 16, 32, 64, 64))

    def test_file_values_win_over_the_preset(self):
        cfg = build(tree_for("tiny", train={"batch_size": 4}))
        self.assertEqual(cfg.batch_size, 4)
        self.assertEqual(cfg.epochs, 10)

    def test_shipped_tiny_config_file(self):
        tree = resolve_config(Path(settings.BASE_DIR) / "configs" / "tiny.toml", ["data.root=/data/train"])
        cfg = train_config_from_tree(tree)
        self.assertEqual(cfg.image_size, 64)

    def test_unknown_preset(self):
        with self.assertRaises(ConfigError):
            resolve_config(tree=tree_for("imagenet"))


class OverrideTests(SimpleTestCase):
    def test_values_are_read_as_toml(self):
        self.assertEqual(parse_override("train.epochs=3"), (("train", "epochs"), 3))
        self.assertEqual(parse_override("optimizer.lr = 1e-3"), (("optimizer", "lr"), 1e-3))
        self.assertEqual(parse_override("data.prefetch=true"), (("data", "prefetch"), True))
        self.assertEqual(parse_override("train.schedule=[[10, 0.1]]"), (("train", "schedule"), [[10, 0.1]]))

    def test_bare_words_stay_strings(self):
        self.assertEqual(parse_override("variant=vit-gan"), (("variant",), "vit-gan"))

    def test_malformed_overrides(self):
        for text in ("train.epochs", "a.b.c=1", ".epochs=1"):
            with self.assertRaises(ConfigError):
                parse_override(text)

    def test_overrides_apply_last(self):
        cfg = build(tree_for("tiny"), ["train.epochs=2", "seed=7"])
        self.assertEqual((cfg.epochs, cfg.seed), (2, 7))

    def test_override_cannot_replace_a_scalar_with_a_section(self):
        with self.assertRaises(ConfigError):
            apply_overrides({"seed": 1}, ["seed.value=2"])


class ValidationTests(SimpleTestCase):
    def test_unknown_keys_are_listed(self):
        with self.assertRaises(ConfigError) as ctx:
            resolve_config(tree=tree_for(train={"batchsize": 8}, colour={"x": 1}))
        message = str(ctx.exception)
        self.assertIn("train.batchsize", message)
        self.assertIn("colour", message)

    def test_field_errors_are_keyed_by_section(self):
        with self.assertRaises(ConfigError) as ctx:
            build(tree_for(train={"batch_size": 1}, optimizer={"beta1": 1.5}))
        errors = ctx.exception.field_errors
        self.assertIn("train.batch_size", errors)
        self.assertIn("optimizer.beta1", errors)
        self.assertIn("train.batch_size", str(ctx.exception))

    def test_data_root_is_required(self):
        tree = tree_for()
        tree["data"]["root"] = ""
        with self.assertRaises(ConfigError) as ctx:
            build(tree)
        self.assertIn("data.root", ctx.exception.field_errors)

    def test_patch_size_must_divide_the_image(self):
        with self.assertRaises(ConfigError) as ctx:
            build(tree_for("tiny", discriminator={"patch_size": 48}))
        self.assertIn("discriminator", ctx.exception.field_errors)

    def test_unknown_variant(self):
        with self.assertRaises(ConfigError) as ctx:
            build(tree_for(variant="pix2pix"))
        self.assertIn("variant", ctx.exception.field_errors)

    def test_pretrained_extractor_needs_weights(self):
        with self.assertRaises(ConfigError) as ctx:
            build(tree_for(extractor={"backend": "pretrained"}))
        self.assertIn("extractor.weights", ctx.exception.field_errors)

    def test_section_forms(self):
        self.assertFalse(TrainForm(data={
            "batch_size": 8, "epochs": 1, "lambda_l1": 100.0, "checkpoint_every": 0,
            "max_steps": 0, "schedule": [[0, 1e-4]],
        }).is_valid())
        self.assertFalse(OptimizerForm(data={"lr": 0.0, "beta1": 0.5, "beta2": 0.9, "eps": 1e-8}).is_valid())
        form = DiscriminatorForm(data={
            "patch_size": 32, "depth": 2, "heads": 3, "mlp_dim": 64,
            "dropout": 0.1, "emb_dropout": 0.1, "token_dim": 32,
        })
        self.assertFalse(form.is_valid())
        self.assertIn("token_dim", form.errors)


class EchoTests(SimpleTestCase):
    def test_echo_rebuilds_the_same_config(self):
        cfg = build(tree_for("coco-2phase", optimizer={"lr": 1e-4}), ["discriminator_optimizer.lr=3e-4"])
        self.assertEqual(cfg.discriminator_optimizer.lr, 3e-4)
        self.assertEqual(build(cfg.echo), cfg)

    def test_json_echo_file_is_accepted(self):
        cfg = build(tree_for("tiny"))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.json"
            path.write_text(json.dumps(cfg.echo))
            self.assertEqual(train_config_from_tree(resolve_config(path)), cfg)
