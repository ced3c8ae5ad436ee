import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from paragan.hyperplane import FrozenClassifierError, hinge_loss
from paragan.losses import (LossWeights, adv_d_from_logits, adv_g_from_logits,
                            adv_loss_discriminator, cycle_loss, downstream_loss,
                            projection_loss, projection_loss_from_scores, total_paragan_loss)

REL = 1e-6


def full(v, shape=(2, 1, 6, 6)):
    return torch.full(shape, float(v), dtype=torch.float64)


class TestAdversarial:
    def test_zero_logits(self):
        assert float(adv_d_from_logits(full(0), full(0))) == pytest.approx(2 * math.log(2), rel=REL)
        assert float(adv_d_from_logits(full(0), full(0))) == pytest.approx(1.3863, abs=1e-4)

    def test_perfect_discrimination(self):
        assert float(adv_d_from_logits(full(20), full(-20))) <= 1e-8 + 1e-8

    def test_unit_logits(self):
        expected = 2 * math.log1p(math.exp(-1))
        assert float(adv_d_from_logits(full(1), full(-1))) == pytest.approx(expected, rel=REL)
        assert expected == pytest.approx(0.6265, abs=1e-4)

    def test_generator_non_saturating(self):
        assert float(adv_g_from_logits(full(0))) == pytest.approx(math.log(2), rel=REL)
        assert float(adv_g_from_logits(full(20))) < 1e-8
        assert float(adv_g_from_logits(full(-1))) == pytest.approx(math.log1p(math.e), rel=REL)
        assert math.log1p(math.e) == pytest.approx(1.3133, abs=1e-4)

    def test_generator_literal(self):
        # log(1 - sigmoid(z)) evaluated directly
        for z in (-3.0, 0.0, 2.5):
            direct = math.log(1 - 1 / (1 + math.exp(-z)))
            assert float(adv_g_from_logits(full(z), "literal")) == pytest.approx(direct, rel=REL)
        with pytest.raises(ValueError):
            adv_g_from_logits(full(0), "wgan")

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-80, 80), st.floats(-80, 80))
    def test_stable_for_extreme_logits(self, a, b):
        for v in (adv_d_from_logits(full(a), full(b)), adv_g_from_logits(full(a)),
                  adv_g_from_logits(full(a), "literal")):
            assert torch.isfinite(v)
        assert float(adv_d_from_logits(full(a), full(b))) >= 0

    def test_discriminator_wrapper_detaches_fake(self):
        d = torch.nn.Conv2d(1, 1, 3)
        fake = torch.rand(1, 1, 8, 8, requires_grad=True)
        adv_loss_discriminator(d, torch.rand(1, 1, 8, 8), fake).backward()
        assert fake.grad is None
        with pytest.raises(ValueError):
            adv_loss_discriminator(d, torch.rand(1, 1, 8, 8), torch.rand(2, 1, 8, 8))


class TestProjection:
    def test_perfect_reconstruction(self):
        d_y, d_x = torch.tensor([2.0, 0.5]), torch.tensor([1.0, 3.0])
        assert float(projection_loss_from_scores(d_y, -d_x, d_y, d_x)) == 0.0

    def test_hand_computed(self):
        v = projection_loss_from_scores([0.5], [-1.0], [2.0], [1.0])
        assert float(v) == pytest.approx(2.25, rel=REL)

    def test_sign_convention(self):
        # X->Y targets +d_y, Y->X targets -d_x: swapping the signs must cost
        right = projection_loss_from_scores([1.5], [-0.7], [1.5], [0.7])
        wrong = projection_loss_from_scores([-1.5], [0.7], [1.5], [0.7])
        assert float(right) == 0.0
        assert float(wrong) == pytest.approx(4 * 1.5 ** 2 + 4 * 0.7 ** 2, rel=REL)

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            projection_loss_from_scores([0.0], [0.0], [-1.0], [1.0])

    def test_requires_frozen_classifier(self):
        class Clf:
            frozen = False

            def scores(self, x):
                return x.mean(dim=(1, 2, 3))

        x = torch.zeros(1, 1, 4, 4)
        with pytest.raises(FrozenClassifierError):
            projection_loss(Clf(), x, x, [1.0], [1.0])
        Clf.frozen = True
        assert float(projection_loss(Clf(), x, x, [1.0], [2.0])) == pytest.approx(5.0)
        with pytest.raises(ValueError):
            projection_loss(Clf(), x, x, [1.0, 2.0], [1.0])


class TestCycle:
    def test_identity(self, rng):
        x, y = torch.from_numpy(rng.normal(size=(2, 1, 8, 8))), torch.from_numpy(rng.normal(size=(2, 1, 8, 8)))
        assert float(cycle_loss(x, x, y, y)) == 0.0

    def test_constant_offset(self, rng):
        x = torch.from_numpy(rng.uniform(-0.5, 0.5, (1, 1, 16, 16)))
        y = torch.zeros(1, 1, 16, 16, dtype=torch.float64)
        assert float(cycle_loss(x, x + 0.1, y, y)) == pytest.approx(0.1, rel=REL)

    def test_matches_elementwise_oracle(self, rng):
        a, b, c, d = (rng.normal(size=(3, 2, 5, 7)) for _ in range(4))
        total_x = sum(abs(p - q) for p, q in zip(a.ravel(), b.ravel())) / a.size
        total_y = sum(abs(p - q) for p, q in zip(c.ravel(), d.ravel())) / c.size
        got = float(cycle_loss(*(torch.from_numpy(t) for t in (a, b, c, d))))
        assert got == pytest.approx(total_x + total_y, rel=REL)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cycle_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 5), torch.zeros(1), torch.zeros(1))


class TestTotal:
    def test_weight_zeroing(self):
        report, _ = total_paragan_loss(0.7, 0.4, 3.0, 2.0, LossWeights(0, 0))
        assert report.total == pytest.approx(1.1, rel=REL)

    def test_hand_computed(self):
        report, total = total_paragan_loss(1.0, 1.0, 2.25, 0.3, LossWeights(0.1, 10))
        assert report.total == pytest.approx(5.225, rel=REL)
        assert (report.adv_g, report.proj, report.cyc) == (2.0, 2.25, 0.3)

    def test_ablation_drops_projection(self):
        a, _ = total_paragan_loss(1.0, 0.5, 123.0, 0.3, LossWeights(0.0, 10))
        b, _ = total_paragan_loss(1.0, 0.5, 0.0, 0.3, LossWeights(0.0, 10))
        assert a.total == b.total

    @given(st.floats(0, 50), st.floats(0, 50))
    def test_affine_in_weights(self, lp, lc):
        adv, proj, cyc = 1.3, 0.8, 0.25
        report, _ = total_paragan_loss(adv, 0.0, proj, cyc, LossWeights(lp, lc))
        assert report.total == pytest.approx(adv + lp * proj + lc * cyc, rel=REL, abs=1e-12)

    def test_tensor_total_is_differentiable(self):
        p = torch.tensor(2.0, requires_grad=True)
        _, total = total_paragan_loss(p * 0.5, p * 0.5, p, p, LossWeights(0.1, 10))
        total.backward()
        assert float(p.grad) == pytest.approx(1 + 0.1 + 10)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            total_paragan_loss(float("nan"), 0.0, 0.0, 0.0, LossWeights())

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_proj=-1)
        w = LossWeights()
        assert (w.lambda_proj, w.lambda_cyc) == (0.1, 10.0)


class TestDownstream:
    def test_alpha_zero_is_real_hinge(self):
        real, labels = [0.3, -2.0, 0.9], [1, -1, -1]
        assert downstream_loss(real, labels, [5.0], [-1], 0.0) == hinge_loss(real, labels)

    def test_table2_alpha(self):
        real, rl, syn, sl = [0.4, -0.1], [1, -1], [0.2, 0.0, -3.0], [-1, 1, 1]
        expected = hinge_loss(real, rl) + 0.2 * hinge_loss(syn, sl)
        assert downstream_loss(real, rl, syn, sl, 0.2) == pytest.approx(expected, rel=REL)

    def test_hand_computed(self):
        # real hinge 0.4 (single score 0.6, label +1), synthetic hinge 1.0 (score 0)
        assert downstream_loss([0.6], [1], [0.0], [1], 1.0) == pytest.approx(1.4, rel=REL)

    def test_empty_batches(self):
        assert downstream_loss([2.0], [1], [], [], 0.5) == 0.0
        with pytest.raises(ValueError):
            downstream_loss([], [], [1.0], [1], 0.5)
        with pytest.raises(ValueError):
            downstream_loss([1.0], [1], [1.0], [1], -0.1)


def test_all_terms_nonnegative(rng):
    for _ in range(20):
        logits = torch.from_numpy(rng.normal(0, 5, (2, 1, 3, 3)))
        assert float(adv_d_from_logits(logits, -logits)) >= 0
        assert float(adv_g_from_logits(logits)) >= 0
        s = rng.normal(size=3)
        assert float(projection_loss_from_scores(s, -s, np.abs(s), np.abs(s) + 1)) >= 0
