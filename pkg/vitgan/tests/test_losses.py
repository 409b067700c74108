import math

import torch
from django.test import SimpleTestCase

from vitgan.exceptions import ShapeError
from vitgan.losses import (
    LossBreakdown,
    bce_with_logits,
    discriminator_loss,
    generator_loss,
    l1_loss,
)


def naive_bce(x, y):
    s = torch.sigmoid(x)
    return -(y * torch.log(s) + (1 - y) * torch.log(1 - s)).mean()


class BceTests(SimpleTestCase):
    def test_known_value(self):
        value = bce_with_logits(torch.tensor([-3.0]), 0.0).item()
        self.assertAlmostEqual(value, math.log1p(math.exp(-3.0)), places=6)
        self.assertAlmostEqual(value, 0.0486, places=4)

    def test_matches_the_displayed_formula(self):
        logits = torch.linspace(-10, 10, 201, dtype=torch.float64)
        for target in (0.0, 1.0):
            for x in logits:
                self.assertAlmostEqual(
                    bce_with_logits(x.reshape(1), target).item(),
                    naive_bce(x.reshape(1), target).item(),
                    delta=1e-6,
                )

    def test_finite_for_extreme_logits(self):
        logits = torch.tensor([-1000.0, 1000.0])
        for target in (0.0, 1.0):
            self.assertTrue(math.isfinite(bce_with_logits(logits, target).item()))

    def test_gradient_is_sigmoid_minus_target(self):
        logits = torch.tensor([[-2.0], [0.0], [3.0], [40.0]], requires_grad=True)
        bce_with_logits(logits, 1.0).backward()
        expected = (torch.sigmoid(logits.detach()) - 1.0) / logits.numel()
        torch.testing.assert_close(logits.grad, expected)
        self.assertTrue(torch.isfinite(logits.grad).all())


class L1Tests(SimpleTestCase):
    def test_mean_absolute_error(self):
        self.assertEqual(l1_loss(torch.zeros(2, 2), torch.ones(2, 2)).item(), 1.0)
        self.assertAlmostEqual(l1_loss(torch.tensor([0.5, -0.5]), torch.tensor([0.0, 0.0])).item(), 0.5)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            l1_loss(torch.zeros(2, 2), torch.zeros(4))


class HybridLossTests(SimpleTestCase):
    def test_generator_total_is_adversarial_plus_weighted_l1(self):
        logits = torch.tensor([[0.3], [-1.2]])
        fake, real = torch.full((2, 2, 4, 4), 0.2), torch.zeros(2, 2, 4, 4)
        total, adv, l1 = generator_loss(logits, fake, real, lambda_l1=100.0)
        torch.testing.assert_close(adv, bce_with_logits(logits, 1.0))
        self.assertAlmostEqual(l1.item(), 0.2, places=6)
        torch.testing.assert_close(total, adv + 100.0 * l1)

    def test_discriminator_total_is_the_mean_of_both_terms(self):
        real_logits, fake_logits = torch.tensor([[2.0]]), torch.tensor([[-1.0]])
        total, real, fake = discriminator_loss(real_logits, fake_logits)
        torch.testing.assert_close(real, bce_with_logits(real_logits, 1.0))
        torch.testing.assert_close(fake, bce_with_logits(fake_logits, 0.0))
        torch.testing.assert_close(total, 0.5 * (real + fake))

    def test_breakdown_row_drops_the_weight(self):
        row = LossBreakdown(l1=0.1, lambda_l1=50.0).as_row()
        self.assertNotIn("lambda_l1", row)
        self.assertEqual(row["l1"], 0.1)
