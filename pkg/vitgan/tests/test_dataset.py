import tempfile
from pathlib import Path

import numpy as np
import torch
from django.test import SimpleTestCase

from vitgan.colorspace import LabImage, denormalize_ab, lab_to_srgb
from vitgan.dataset import (
    batch_ids,
    batches,
    epoch_permutation,
    load_example,
    load_rgb,
    scan,
    steps_per_epoch,
)
from vitgan.exceptions import DatasetError

from .factories import corrupt_file, gradient_images, save_rgb, solid_images, truncated_jpeg


class ScanTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_empty_directory(self):
        self.assertEqual(len(scan(self.root)), 0)

    def test_missing_root(self):
        with self.assertRaises(DatasetError):
            scan(self.root / "missing")

    def test_nested_directories_and_deterministic_order(self):
        solid_images(self.root / "b", count=2, size=32)
        solid_images(self.root / "a" / "deeper", count=2, size=32, suffix=".jpg")
        (self.root / "notes.txt").write_text("not an image")

        first, second = scan(self.root, 32), scan(self.root, 32)
        paths = [e.path.relative_to(self.root).as_posix() for e in first.entries]
        self.assertEqual(paths, [
            "a/deeper/solid_00.jpg",
            "a/deeper/solid_01.jpg",
            "b/solid_00.png",
            "b/solid_01.png",
        ])
        self.assertEqual([e.path for e in first.entries], [e.path for e in second.entries])

    def test_decode_check_is_deferred_and_counts_skips(self):
        solid_images(self.root, count=3, size=32)
        corrupt_file(self.root / "zz_broken.png")
        manifest = scan(self.root, 32)
        self.assertTrue(all(e.ok is None for e in manifest.entries))
        self.assertEqual(len(manifest.usable_indices()), 3)
        self.assertEqual(manifest.skipped, 1)
        self.assertEqual(manifest.report()["skipped"], 1)

    def test_truncated_jpeg_fails_the_decode_check(self):
        solid_images(self.root, count=3, size=32)
        truncated_jpeg(self.root / "cut.jpg")
        manifest = scan(self.root, 32)
        self.assertEqual(len(manifest.usable_indices()), 3)
        self.assertEqual(manifest.skipped, 1)
        self.assertFalse(manifest.entries[0].ok)
        self.assertEqual(manifest.entries[0].path.name, "cut.jpg")


class LoadExampleTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def test_shapes_and_ranges(self):
        gradient_images(self.root, 1, size=512)
        entry = scan(self.root, 256).entries[0]
        L, ab = load_example(entry, 256)
        self.assertEqual(tuple(L.shape), (1, 256, 256))
        self.assertEqual(tuple(ab.shape), (2, 256, 256))
        self.assertGreaterEqual(L.min().item(), -1.0)
        self.assertLessEqual(L.max().item(), 1.0)
        self.assertLessEqual(ab.abs().max().item(), 1.0)
        self.assertTrue(entry.ok)

    def test_grayscale_source_has_no_chroma(self):
        gray = np.tile(np.linspace(0, 255, 64).astype(np.uint8), (64, 1))
        path = save_rgb(self.root / "gray.png", np.repeat(gray[:, :, None], 3, axis=2))
        _, ab = load_example(scan(self.root, 64).entries[0], 64)
        self.assertLess(ab.abs().max().item(), 0.01)
        self.assertTrue(path.exists())

    def test_round_trip_reproduces_the_resized_source(self):
        gradient_images(self.root, 1, size=80)
        entry = scan(self.root, 64).entries[0]
        L, ab = load_example(entry, 64)
        a, b = denormalize_ab(ab)
        lab = LabImage(L=(L[0].double().numpy() + 1.0) * 50.0, a=a, b=b)
        back = lab_to_srgb(lab).data.astype(int)
        source = load_rgb(entry.path, 64).data.astype(int)
        self.assertLessEqual(np.abs(back - source).max(), 1)

    def test_corrupt_file_is_marked(self):
        corrupt_file(self.root / "bad.png")
        entry = scan(self.root, 32).entries[0]
        with self.assertRaises(DatasetError):
            load_example(entry, 32)
        self.assertFalse(entry.ok)


class BatchTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        solid_images(self.root, count=8, size=32)
        gradient_images(self.root, 2, size=32)
        self.manifest = scan(self.root, 32)

    def test_step_arithmetic(self):
        self.assertEqual(steps_per_epoch(10_000, 16), 625)
        self.assertEqual(steps_per_epoch(10_000, 16) * 50, 31_250)

    def test_drop_last_batches_follow_the_permutation(self):
        emitted = list(batches(self.manifest, 3, seed=1, epoch=0))
        self.assertEqual(len(emitted), 3)
        self.assertEqual([b.index for b in emitted], [0, 1, 2])
        for batch in emitted:
            self.assertEqual(tuple(batch.L.shape), (3, 1, 32, 32))
            self.assertEqual(tuple(batch.ab.shape), (3, 2, 32, 32))
            self.assertTrue(torch.isfinite(batch.L).all() and torch.isfinite(batch.ab).all())
        ids = [i for batch in emitted for i in batch.ids]
        self.assertEqual(ids, [int(i) for i in epoch_permutation(10, 1, 0)[:9]])

    def test_same_seed_and_epoch_repeat_bitwise(self):
        first = list(batches(self.manifest, 4, seed=2, epoch=5))
        second = list(batches(self.manifest, 4, seed=2, epoch=5))
        for x, y in zip(first, second):
            self.assertEqual(x.ids, y.ids)
            self.assertTrue(torch.equal(x.L, y.L))
            self.assertTrue(torch.equal(x.ab, y.ab))

    def test_prefetch_keeps_the_order(self):
        plain = [b.ids for b in batches(self.manifest, 2, seed=3, epoch=1)]
        prefetched = [b.ids for b in batches(self.manifest, 2, seed=3, epoch=1, prefetch=True)]
        self.assertEqual(plain, prefetched)

    def test_start_skips_leading_batches(self):
        plan = batch_ids(self.manifest, 2, seed=0, epoch=0)
        resumed = list(batches(self.manifest, 2, seed=0, epoch=0, start=3))
        self.assertEqual([b.ids for b in resumed], plan[3:])
        self.assertEqual(resumed[0].index, 3)

    def test_batch_larger_than_dataset(self):
        with self.assertRaises(DatasetError):
            list(batches(self.manifest, 11, seed=0, epoch=0))


class UnreadableEntryTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        gradient_images(self.root, 8, size=32)
        self.cut = truncated_jpeg(self.root / "grad_004b.jpg")

    def test_every_epoch_keeps_its_full_plan(self):
        manifest = scan(self.root, 32)
        bad = [e.path for e in manifest.entries].index(self.cut)
        for epoch in range(3):
            emitted = list(batches(manifest, 2, seed=5, epoch=epoch))
            self.assertEqual(len(emitted), steps_per_epoch(8, 2))
            self.assertNotIn(bad, [i for batch in emitted for i in batch.ids])
        self.assertEqual(manifest.skipped, 1)

    def test_a_fresh_scan_plans_the_same_batches(self):
        running = scan(self.root, 32)
        list(batches(running, 2, seed=5, epoch=0))
        resumed = scan(self.root, 32)
        self.assertEqual(
            [b.ids for b in batches(running, 2, seed=5, epoch=1)],
            [b.ids for b in batches(resumed, 2, seed=5, epoch=1)],
        )
