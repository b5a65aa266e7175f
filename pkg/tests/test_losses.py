"""Contrastive objective: closed-form values, gradients, partition masking."""

import math

import numpy as np
import pytest

from scenemix import LossConfig, info_nce, total_loss


def unit_rows(rng, b, dim):
    m = rng.normal(size=(b, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


class TestInfoNce:
    def test_uniform_logits_give_log_b(self):
        for b in (2, 4, 8):
            e = np.tile(unit_rows(np.random.default_rng(0), 1, 16), (b, 1))
            res = info_nce(e, e, tau=0.07)
            assert res.loss == pytest.approx(math.log(b), abs=1e-12)

    def test_single_element_subset_is_zero(self):
        e = unit_rows(np.random.default_rng(1), 5, 8)
        res = info_nce(e, e, tau=0.5, subset=np.array([3]))
        assert res.loss == 0.0

    def test_two_sample_orthogonal_closed_form(self):
        # z = I at tau=1: each row's loss is log(1 + e^-1)
        e = np.eye(2)
        res = info_nce(e, e, tau=1.0)
        assert res.loss == pytest.approx(math.log(1.0 + math.exp(-1.0)), abs=1e-12)

    def test_uniform_logits_have_zero_temperature_gradient(self):
        e = np.tile(unit_rows(np.random.default_rng(2), 1, 4), (6, 1))
        res = info_nce(e, e, tau=0.07)
        assert res.grad_log_tau == pytest.approx(0.0, abs=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        anchors = unit_rows(rng, 6, 8)
        targets = unit_rows(rng, 6, 8)
        tau = 0.2
        res = info_nce(anchors, targets, tau)
        h = 1e-6
        for mat, grad in ((anchors, res.grad_anchors), (targets, res.grad_targets)):
            fd = np.zeros_like(mat)
            for i in range(mat.shape[0]):
                for j in range(mat.shape[1]):
                    orig = mat[i, j]
                    mat[i, j] = orig + h
                    hi = info_nce(anchors, targets, tau).loss
                    mat[i, j] = orig - h
                    lo = info_nce(anchors, targets, tau).loss
                    mat[i, j] = orig
                    fd[i, j] = (hi - lo) / (2 * h)
            assert np.abs(grad - fd).max() < 1e-8
        # log tau gradient against a multiplicative temperature probe
        eps = 1e-6
        hi = info_nce(anchors, targets, math.exp(math.log(tau) + eps)).loss
        lo = info_nce(anchors, targets, math.exp(math.log(tau) - eps)).loss
        assert res.grad_log_tau == pytest.approx((hi - lo) / (2 * eps), abs=1e-8)

    def test_subset_rows_outside_get_exact_zero_gradients(self):
        rng = np.random.default_rng(4)
        anchors, targets = unit_rows(rng, 8, 6), unit_rows(rng, 8, 6)
        subset = np.array([1, 4, 6])
        res = info_nce(anchors, targets, 0.1, subset=subset)
        outside = np.setdiff1d(np.arange(8), subset)
        assert not res.grad_anchors[outside].any()
        assert not res.grad_targets[outside].any()
        assert res.grad_anchors[subset].any()

    def test_input_validation(self):
        e = unit_rows(np.random.default_rng(5), 4, 4)
        with pytest.raises(ValueError, match="empty"):
            info_nce(e, e, 0.1, subset=np.array([], dtype=int))
        with pytest.raises(ValueError, match="tau"):
            info_nce(e, e, 0.0)
        with pytest.raises(ValueError, match="unit-norm"):
            info_nce(e * 2.0, e, 0.1)
        with pytest.raises(ValueError, match="match"):
            info_nce(e, e[:2], 0.1)

    def test_norm_check_tolerates_probe_sized_drift(self):
        # rows off by ~1e-5 must pass, or finite-difference probing would be
        # impossible on normalized inputs
        e = unit_rows(np.random.default_rng(6), 3, 5)
        info_nce(e * (1.0 + 5e-5), e, 0.1)


class TestLossConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.init_temperature == 0.07
        assert cfg.init_log_tau == pytest.approx(math.log(0.07))

    def test_clamp(self):
        cfg = LossConfig()
        assert cfg.clamp_log_tau(-100.0) == pytest.approx(math.log(0.01))
        assert cfg.clamp_log_tau(+100.0) == pytest.approx(math.log(1.0))
        assert cfg.clamp_log_tau(-1.0) == -1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=1.2)
        with pytest.raises(ValueError):
            LossConfig(init_temperature=2.0)  # above tau_max


def batch(rng, b, dim):
    return (unit_rows(rng, b, dim), unit_rows(rng, b, dim), unit_rows(rng, b, dim))


class TestTotalLoss:
    def test_weight_is_inverse_single_fraction(self):
        rng = np.random.default_rng(7)
        e3, et, e2 = batch(rng, 8, 8)
        composed = np.zeros(8, dtype=bool)
        composed[:4] = True
        for alpha, want in ((0.0, 1.0), (0.25, 4.0 / 3.0), (0.5, 2.0)):
            res = total_loss(e3, et, e2, composed, 0.1, LossConfig(alpha=alpha))
            assert res.image_weight == pytest.approx(want, abs=1e-12)
            assert res.total == pytest.approx(res.text_block + want * res.image_block)

    def test_dynamic_budget_uses_batch_ratio(self):
        rng = np.random.default_rng(8)
        e3, et, e2 = batch(rng, 6, 8)
        composed = np.array([True, True, True, True, False, False])
        res = total_loss(e3, et, e2, composed, 0.1,
                         LossConfig(alpha=0.5, dynamic_budget=True))
        assert res.image_weight == pytest.approx(3.0)  # 6 / 2 singles

    def test_composed_rows_have_exact_zero_2d_gradients(self):
        rng = np.random.default_rng(9)
        e3, et, e2 = batch(rng, 10, 8)
        composed = rng.random(10) < 0.5
        composed[0], composed[-1] = True, False  # both kinds present
        res = total_loss(e3, et, e2, composed, 0.1, LossConfig(alpha=0.5))
        assert not res.grad_2d[composed].any()
        assert res.grad_2d[~composed].any()

    def test_perturbing_composed_embedding_leaves_image_block_unchanged(self):
        rng = np.random.default_rng(10)
        e3, et, e2 = batch(rng, 8, 8)
        composed = np.zeros(8, dtype=bool)
        composed[2] = True
        base = total_loss(e3, et, e2, composed, 0.1, LossConfig(alpha=0.5))
        probe = e3.copy()
        probe[2] = unit_rows(rng, 1, 8)[0]  # arbitrary new unit vector
        moved = total_loss(probe, et, e2, composed, 0.1, LossConfig(alpha=0.5))
        assert moved.image_block == base.image_block  # bitwise: row never read

    def test_all_composed_batch_has_zero_image_block(self):
        rng = np.random.default_rng(11)
        e3, et, e2 = batch(rng, 5, 8)
        res = total_loss(e3, et, e2, np.ones(5, dtype=bool), 0.1, LossConfig(alpha=0.5))
        assert res.image_block == 0.0 and res.image_weight == 0.0
        assert res.grad_2d is None
        assert res.total == res.text_block

    def test_alpha_one_with_singles_rejected(self):
        rng = np.random.default_rng(12)
        e3, et, e2 = batch(rng, 4, 8)
        with pytest.raises(ValueError, match="alpha = 1"):
            total_loss(e3, et, e2, np.array([True, False, True, True]), 0.1,
                       LossConfig(alpha=1.0))

    def test_alpha_one_all_composed_is_fine(self):
        rng = np.random.default_rng(13)
        e3, et, e2 = batch(rng, 4, 8)
        res = total_loss(e3, et, e2, np.ones(4, dtype=bool), 0.1, LossConfig(alpha=1.0))
        assert res.total == res.text_block

    def test_loss_value_invariant_under_batch_permutation(self):
        rng = np.random.default_rng(14)
        e3, et, e2 = batch(rng, 9, 8)
        composed = rng.random(9) < 0.4
        base = total_loss(e3, et, e2, composed, 0.2, LossConfig(alpha=0.4))
        perm = rng.permutation(9)
        shuffled = total_loss(e3[perm], et[perm], e2[perm], composed[perm], 0.2,
                              LossConfig(alpha=0.4))
        assert shuffled.total == pytest.approx(base.total, abs=1e-12)

    def test_missing_2d_embeddings_skip_the_image_block(self):
        rng = np.random.default_rng(15)
        e3, et, _ = batch(rng, 4, 8)
        res = total_loss(e3, et, None, np.zeros(4, dtype=bool), 0.1, LossConfig(alpha=0.0))
        assert res.total == res.text_block and res.grad_2d is None

    def test_mask_shape_validated(self):
        rng = np.random.default_rng(16)
        e3, et, e2 = batch(rng, 4, 8)
        with pytest.raises(ValueError, match="one flag per batch row"):
            total_loss(e3, et, e2, np.zeros(3, dtype=bool), 0.1, LossConfig())
