import math

import numpy as np
import pytest

import sfda


def random_images(n, seed=0):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(n, 1, 28, 28)).astype(np.float32)


def test_identity_transforms_are_exact():
    x = random_images(1)[0]
    np.testing.assert_array_equal(sfda.apply_brightness(x, 1.0), x)
    np.testing.assert_array_equal(sfda.apply_contrast(x, 1.0), x)
    np.testing.assert_array_equal(sfda.apply_rotation(x, 0.0), x)
    np.testing.assert_array_equal(sfda.apply_backward_transform(x, sfda.TransformParams()), x)


def test_quarter_turn_matches_numpy():
    x = random_images(1, seed=3)[0]
    # Counter-clockwise quarter turn.
    np.testing.assert_array_equal(sfda.apply_rotation(x, 90.0), np.rot90(x, k=1, axes=(1, 2)))


def test_negative_brightness_raises():
    with pytest.raises(ValueError):
        sfda.apply_brightness(random_images(1)[0], -0.5)


def test_msp_two_class():
    assert sfda.msp([2.0, 0.0], 1.0) == pytest.approx(math.exp(2) / (math.exp(2) + 1))


def test_shift_spec_sampling_is_seeded():
    spec = sfda.ShiftSpec([(sfda.Axis.rotation, 30.0, 2.0)], seed=4)
    assert spec.label() == "rotation(30,2)"
    assert spec.sample(5) == spec.sample(5)
    shifted = spec.apply(random_images(3))
    assert shifted.shape == (3, 1, 28, 28)


def test_fresh_transform_net_is_identity_and_no_harm():
    phi = sfda.Classifier.build(sfda.Dataset.mnist, 1)
    images = random_images(8)
    net = sfda.TransformNet.build(sfda.Dataset.mnist, 2)
    preds, params = sfda.transform_and_classify(net, images, phi)
    assert preds == phi.predict(images)
    assert all(p == sfda.TransformParams() for p in params)
    assert sfda.msp_gap_loss(sfda.TransformParams(), images[0], phi) == 0.0


def test_adapt_returns_history():
    phi = sfda.Classifier.build(sfda.Dataset.mnist, 1)
    net, history = sfda.adapt(sfda.TransformNet.build(), random_images(16), phi, epochs=2, batch_size=8)
    assert len(history) == 2
    assert len(net.predict(random_images(2))) == 2


def test_subsampling_perfect_predictions():
    labels = list(range(10))
    mean, std, accs = sfda.evaluate_with_subsampling(labels, labels, k=5)
    assert mean == 1.0 and std == 0.0 and len(accs) == 5
