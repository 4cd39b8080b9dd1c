import math

import numpy as np
import pytest

from airwaygan.autodiff import Tensor
from airwaygan.errors import InputError, NumericalError
from airwaygan.losses import (LOG_SCORE_FLOOR, LossBreakdown, LossWeights,
                              anatomical_constraint_loss, dice_loss,
                              feature_matching_loss, gan_loss, total_objective)
from airwaygan.networks import DiscriminatorBank, DiscriminatorConfig, Generator, GeneratorConfig
from airwaygan.scenes import SceneParams, generate_synthetic_scene, render_pseudo_target
from airwaygan.segmentation import SegParams

from oracles import finite_difference_gradient, relative_gradient_error

TINY_GEN = GeneratorConfig(base_width=8, num_downsamples=2, num_residual_blocks=1)
TINY_DISC = DiscriminatorConfig(base_width=8)


# -- gan_loss ------------------------------------------------------------------

def test_log_variant_half_scores_closed_form():
    scores = Tensor(np.full((2, 1, 4, 4), 0.5))
    g, d = gan_loss(scores, scores, "log")
    assert float(d.data) == pytest.approx(2.0 * math.log(0.5), abs=1e-12)
    assert float(g.data) == pytest.approx(-math.log(0.5), abs=1e-12)


def test_log_variant_optimum_with_floor():
    real = Tensor(np.ones((1, 1, 2, 2)))
    fake = Tensor(np.zeros((1, 1, 2, 2)))
    _, d = gan_loss(real, fake, "log")
    assert float(d.data) == pytest.approx(2.0 * math.log(1.0 - LOG_SCORE_FLOOR),
                                          abs=1e-12)
    assert abs(float(d.data)) < 1e-6  # its maximum, essentially 0


def test_least_squares_optimum():
    real = Tensor(np.ones((1, 1, 2, 2)))
    fake = Tensor(np.zeros((1, 1, 2, 2)))
    g, d = gan_loss(real, fake, "least-squares")
    assert float(d.data) == 0.0
    assert float(g.data) == 1.0


def test_gan_loss_rejects_non_finite():
    bad = Tensor(np.array([[np.nan]]))
    with pytest.raises(NumericalError):
        gan_loss(bad, bad, "log")


@pytest.mark.parametrize("variant", ["log", "least-squares"])
def test_gan_loss_gradients(variant, rng):
    real = rng.uniform(0.2, 0.8, (2, 1, 3, 3))
    fake0 = rng.uniform(0.2, 0.8, (2, 1, 3, 3))

    for which in ("generator", "discriminator"):
        t = Tensor(fake0.copy(), requires_grad=True)
        g, d = gan_loss(Tensor(real), t, variant)
        (g if which == "generator" else d).backward()
        idx = 0 if which == "generator" else 1
        numeric = finite_difference_gradient(
            lambda x: float(gan_loss(Tensor(real), Tensor(x), variant)[idx].data),
            fake0, eps=1e-6)
        assert relative_gradient_error(t.grad, numeric) < 1e-4


# -- feature matching ----------------------------------------------------------

def _feature_lists(rng, shapes=((2, 4, 6, 6), (2, 8, 3, 3))):
    real = [Tensor(rng.standard_normal(s)) for s in shapes]
    fake = [Tensor(r.data + rng.standard_normal(r.data.shape)) for r in real]
    return real, fake


def test_fm_identity_zero(rng):
    real, _ = _feature_lists(rng)
    assert float(feature_matching_loss(real, real).data) == 0.0


def test_fm_plus_one_equals_layer_count(rng):
    real, _ = _feature_lists(rng)
    fake = [Tensor(r.data + 1.0) for r in real]
    out = feature_matching_loss(real, fake)
    assert float(out.data) == pytest.approx(len(real), abs=1e-12)


def test_fm_term_locality(rng):
    """Scaling one layer's fake features changes only that layer's summand."""
    real, fake = _feature_lists(rng)
    base_layers = [float(feature_matching_loss([r], [f]).data)
                   for r, f in zip(real, fake)]
    scaled = [Tensor(f.data.copy()) for f in fake]
    scaled[1] = Tensor(fake[1].data * 2.0)
    new_total = float(feature_matching_loss(real, scaled).data)
    new_layer1 = float(feature_matching_loss([real[1]], [scaled[1]]).data)
    assert new_total == pytest.approx(base_layers[0] + new_layer1, rel=1e-12)


def test_fm_rejects_mismatched(rng):
    real, fake = _feature_lists(rng)
    with pytest.raises(InputError):
        feature_matching_loss(real, fake[:1])
    with pytest.raises(InputError):
        feature_matching_loss(real, [fake[1], fake[0]])


def test_fm_no_gradient_to_real_branch(rng):
    real = [Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)]
    fake = [Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)]
    feature_matching_loss(real, fake).backward()
    assert real[0].grad is None
    assert fake[0].grad is not None


def test_fm_gradients(rng):
    real, fake = _feature_lists(rng, shapes=((1, 2, 3, 3),))
    f0 = fake[0].data.copy()
    t = Tensor(f0.copy(), requires_grad=True)
    feature_matching_loss(real, [t]).backward()
    numeric = finite_difference_gradient(
        lambda x: float(feature_matching_loss(real, [Tensor(x)]).data), f0,
        eps=1e-7)
    assert relative_gradient_error(t.grad, numeric) < 1e-4


# -- dice loss -----------------------------------------------------------------

def test_dice_identity_value():
    mask = np.zeros((20, 10))
    mask.ravel()[:100] = 1.0  # exactly 100 foreground pixels
    loss = dice_loss(mask, mask, epsilon=1e-6)
    assert loss == pytest.approx(1.0 - 200.0 / (200.0 + 1e-6), abs=1e-15)
    assert loss == pytest.approx(5e-9, rel=0.2)


def test_dice_disjoint_is_one():
    a = np.zeros((20, 10))
    b = np.zeros((20, 10))
    a.ravel()[:100] = 1.0
    b.ravel()[100:200] = 1.0
    assert dice_loss(a, b) == pytest.approx(1.0, abs=1e-8)


def test_dice_nested_hand_value():
    a = np.ones((4, 4))
    b = np.zeros((4, 4))
    b[:2] = 1.0  # 8 pixels, subset of a's 16
    assert dice_loss(a, b, epsilon=1e-6) == pytest.approx(1.0 - 16.0 / 24.0,
                                                          abs=1e-6)


def test_dice_both_empty_is_zero():
    z = np.zeros((8, 8))
    assert dice_loss(z, z) == 0.0


def test_dice_symmetric_and_bounded(rng):
    for _ in range(20):
        a = (rng.random((16, 16)) > 0.5).astype(float)
        b = rng.random((16, 16))
        ab = dice_loss(a, b)
        ba = dice_loss(b, a)
        assert ab == pytest.approx(ba, abs=1e-12)
        assert 0.0 <= ab <= 1.0


def test_dice_rejects_bad_inputs():
    with pytest.raises(InputError):
        dice_loss(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(InputError):
        dice_loss(np.full((4, 4), 2.0), np.zeros((4, 4)))


def test_dice_gradients_soft_inputs(rng):
    a0 = rng.uniform(0.1, 0.9, (8, 8))
    b = rng.uniform(0.1, 0.9, (8, 8))
    t = Tensor(a0.copy(), requires_grad=True)
    dice_loss(t, Tensor(b)).backward()
    numeric = finite_difference_gradient(lambda x: dice_loss(x, b), a0, eps=1e-6)
    assert relative_gradient_error(t.grad, numeric) < 1e-4


# -- anatomical constraint -----------------------------------------------------

def _scene_batch():
    params = SceneParams(height=64, width=64, centers=((32, 32),), radii=(16.0,),
                         noise_amplitude=0.01)
    scene = generate_synthetic_scene(params, seed=11)
    rendering = render_pseudo_target(scene, style_seed=3)
    gen = np.transpose(rendering.pixels.astype(np.float64) / 127.5 - 1.0,
                       (2, 0, 1))[None]
    return scene.depth.values[None, None], gen


def test_anatomical_roundtrip_small():
    x, gen = _scene_batch()
    for mode in ("differentiable", "score-only"):
        loss, per = anatomical_constraint_loss(x, gen, SegParams(), mode=mode)
        assert float(loss.data) < 0.1
        assert len(per) == 1


def test_anatomical_constant_output_is_one():
    x, _ = _scene_batch()
    constant = np.zeros((1, 3, 64, 64))
    loss, _ = anatomical_constraint_loss(x, constant, SegParams())
    assert float(loss.data) == pytest.approx(1.0, abs=1e-6)


def test_anatomical_both_empty_is_zero():
    x = np.zeros((1, 1, 64, 64))  # constant depth -> no input orifices
    constant = np.zeros((1, 3, 64, 64))
    loss, _ = anatomical_constraint_loss(x, constant, SegParams())
    assert float(loss.data) == 0.0


def test_anatomical_differentiable_gives_gradient():
    x, gen = _scene_batch()
    t = Tensor(gen.copy(), requires_grad=True)
    loss, _ = anatomical_constraint_loss(x, t, SegParams(), mode="differentiable")
    loss.backward()
    assert t.grad is not None and np.abs(t.grad).max() > 0


def test_anatomical_score_only_has_no_gradient():
    x, gen = _scene_batch()
    t = Tensor(gen.copy(), requires_grad=True)
    loss, _ = anatomical_constraint_loss(x, t, SegParams(), mode="score-only")
    assert not loss.requires_grad


# -- total objective -----------------------------------------------------------

def _toy_setup(rng, lambda_fm=10.0, lambda_dice=1.0, variant="log"):
    gen = Generator(TINY_GEN, seed=0)
    bank = DiscriminatorBank(TINY_DISC, seed=1)
    params = SceneParams(height=64, width=64, centers=((28, 30),), radii=(14.0,),
                         noise_amplitude=0.01)
    scene = generate_synthetic_scene(params, seed=5)
    rendering = render_pseudo_target(scene, style_seed=9)
    x = scene.depth.values[None, None]
    y = np.transpose(rendering.pixels.astype(np.float64) / 127.5 - 1.0,
                     (2, 0, 1))[None]
    weights = LossWeights(lambda_fm=lambda_fm, lambda_dice=lambda_dice,
                          gan_variant=variant)
    return gen, bank, x, y, weights


def test_total_objective_weight_zero_reduction(rng):
    gen, bank, x, y, _ = _toy_setup(rng)
    zero = LossWeights(lambda_fm=0.0, lambda_dice=0.0)
    breakdown = total_objective(x, y, gen, bank, zero, SegParams())
    assert breakdown.total_g == pytest.approx(sum(breakdown.gan_g_per_scale),
                                              abs=1e-12)
    assert len(breakdown.gan_g_per_scale) == 3


def test_total_objective_linear_in_lambda_dice(rng):
    gen, bank, x, y, _ = _toy_setup(rng)
    w0 = LossWeights(lambda_fm=10.0, lambda_dice=0.0)
    w1 = LossWeights(lambda_fm=10.0, lambda_dice=1.0)
    b0 = total_objective(x, y, gen, bank, w0, SegParams())
    b1 = total_objective(x, y, gen, bank, w1, SegParams())
    assert b1.total_g - b0.total_g == pytest.approx(b1.dice, abs=1e-9)
    assert b0.gan_g_per_scale == b1.gan_g_per_scale
    assert b0.fm_per_scale == b1.fm_per_scale


def test_total_objective_identity(rng):
    gen, bank, x, y, weights = _toy_setup(rng)
    breakdown = total_objective(x, y, gen, bank, weights, SegParams())
    assert breakdown.identity_gap(weights) < 1e-6
    assert breakdown.total_d == pytest.approx(sum(breakdown.gan_d_per_scale),
                                              abs=1e-12)


def test_breakdown_roundtrip(rng):
    gen, bank, x, y, weights = _toy_setup(rng)
    breakdown = total_objective(x, y, gen, bank, weights, SegParams())
    again = LossBreakdown.from_dict(breakdown.to_dict())
    assert again == breakdown
