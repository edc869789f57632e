import numpy as np
import pytest

from saligrad import nn
from saligrad.gradcheck import (finite_difference_input_grad,
                                finite_difference_param_grads, relative_error)


def tiny_model():
    """2x2 single-channel input, every layer kind with hand-checkable params."""
    conv = nn.Conv("c", 1, 1, 1, weight=np.array([[2.0]]))
    scale = nn.Scaling("s", 1, np.array([3.0]))
    bias = nn.Bias("b", 1, np.array([0.5]))
    fc = nn.FullyConnected("fc", 1, 2, weight=np.array([[1.0], [-1.0]]))
    return nn.ModelGraph([conv, scale, bias, nn.ReLU("r"),
                          nn.GlobalAvgPool("gap"), fc], num_classes=2)


def test_straight_line_logits_by_hand():
    # x=[[1,-2],[0,4]] -> conv*2 -> *3 -> +0.5 -> relu -> mean -> (+v, -v)
    x = np.array([[[1.0, -2.0], [0.0, 4.0]]])
    tape = nn.forward(tiny_model(), x)
    after = np.array([[[6.5, 0.0], [0.5, 24.5]]])
    np.testing.assert_allclose(tape.record("r").x_out, after, rtol=0, atol=1e-12)
    v = after.mean()
    np.testing.assert_allclose(tape.logits, [v, -v], rtol=0, atol=1e-12)


def test_backward_by_hand_on_the_tiny_model():
    x = np.array([[[1.0, -2.0], [0.0, 4.0]]])
    model = tiny_model()
    tape = nn.forward(model, x)
    nn.backward(model, tape, nn.ClassLogit(0))
    # d logit0 / d pre-relu activations: 1/4 where relu passed, else 0
    mask = np.array([[[1.0, 0.0], [1.0, 1.0]]])
    np.testing.assert_allclose(tape.record("b").g_out, mask / 4, atol=1e-12)
    # chain back through bias (pass), scaling (*3), conv (*2)
    np.testing.assert_allclose(tape.record("c").g_in, mask * 6 / 4, atol=1e-12)
    # parameter gradients
    np.testing.assert_allclose(tape.param_grads["b"], [3.0 / 4], atol=1e-12)
    np.testing.assert_allclose(tape.param_grads["s"],
                               [(2.0 + 0.0 + 8.0) / 4], atol=1e-12)
    np.testing.assert_allclose(tape.param_grads["c"],
                               [[3 * (1.0 + 0.0 + 4.0) / 4]], atol=1e-12)


def test_gradients_match_finite_differences(rng):
    # moderate weights keep the softmax away from saturation, and inputs away
    # from the relu kink, so central differences can resolve every gradient
    conv = nn.Conv("c", 1, 1, 1, weight=np.array([[0.7]]))
    scale = nn.Scaling("s", 1, np.array([0.9]))
    bias = nn.Bias("b", 1, np.array([0.1]))
    fc = nn.FullyConnected("fc", 1, 2, weight=np.array([[0.8], [-0.5]]))
    model = nn.ModelGraph([conv, scale, bias, nn.ReLU("r"),
                           nn.GlobalAvgPool("gap"), fc], num_classes=2)
    x = rng.uniform(0.5, 1.5, size=(1, 2, 2))
    for objective in (nn.ClassLogit(1), nn.CrossEntropy(0)):
        tape = nn.forward(model, x)
        nn.backward(model, tape, objective)
        fd = finite_difference_param_grads(model, x, objective)
        for name, grad in tape.param_grads.items():
            assert relative_error(grad, fd[name]) < 1e-7
        gx = finite_difference_input_grad(model, x, objective)
        assert relative_error(tape.records[0].g_in, gx) < 1e-7


def test_cross_entropy_matches_log_softmax():
    logits = np.array([1.0, -2.0, 0.5])
    fc = nn.FullyConnected("fc", 3, 3, weight=np.eye(3))
    model = nn.ModelGraph([nn.Flatten("fl"), fc], num_classes=3)
    tape = nn.forward(model, logits.reshape(3, 1, 1))
    nn.backward(model, tape, nn.CrossEntropy(2))
    p = np.exp(logits) / np.exp(logits).sum()
    assert tape.loss == pytest.approx(-np.log(p[2]), abs=1e-12)
    onehot = np.array([0.0, 0.0, 1.0])
    np.testing.assert_allclose(tape.param_grads["fc"],
                               np.outer(p - onehot, logits), atol=1e-12)
    assert nn.softmax(logits) == pytest.approx(p, abs=1e-12)


def test_class_logit_gradient_is_the_weight_row(rng):
    # with a linear head, d logit_c / d features is exactly weight[c]
    w = rng.standard_normal((3, 4))
    fc = nn.FullyConnected("fc", 4, 3, weight=w)
    model = nn.ModelGraph([nn.Flatten("fl"), fc], num_classes=3)
    x = rng.standard_normal((4, 1, 1))
    tape = nn.forward(model, x)
    nn.backward(model, tape, nn.ClassLogit(1))
    np.testing.assert_array_equal(tape.record("fc").g_in, w[1])


def test_gap_backward_is_spatially_constant(rng):
    gap = nn.GlobalAvgPool("gap")
    x = rng.standard_normal((3, 4, 4))
    g_out = rng.standard_normal(3)
    g_in, param = gap.backward(x, g_out)
    assert param is None
    np.testing.assert_allclose(g_in, np.broadcast_to(g_out[:, None, None] / 16,
                                                     (3, 4, 4)), atol=1e-15)


def test_relu_derivative_is_zero_at_zero():
    relu = nn.ReLU("r")
    x = np.array([[[-1.0, 0.0, 2.0]]])
    g_in, _ = relu.backward(x, np.ones_like(x))
    np.testing.assert_array_equal(g_in, [[[0.0, 0.0, 1.0]]])


def test_maxpool_forward_and_tie_break():
    pool = nn.MaxPool("p")
    x = np.array([[[1.0, 1.0, 5.0, 2.0],
                   [1.0, 1.0, 2.0, 5.0],
                   [0.0, 3.0, 7.0, 7.0],
                   [3.0, 0.0, 7.0, 7.0]]])
    out = pool.forward(x)
    np.testing.assert_array_equal(out, [[[1.0, 5.0], [3.0, 7.0]]])
    g_in, _ = pool.backward(x, np.ones((1, 2, 2)))
    # ties route the gradient to the first maximum in row-major order
    expected = np.array([[[1.0, 0.0, 1.0, 0.0],
                          [0.0, 0.0, 0.0, 0.0],
                          [0.0, 1.0, 1.0, 0.0],
                          [0.0, 0.0, 0.0, 0.0]]])
    np.testing.assert_array_equal(g_in, expected)


def test_maxpool_truncates_odd_edges():
    pool = nn.MaxPool("p")
    x = np.arange(25, dtype=np.float64).reshape(1, 5, 5)
    out = pool.forward(x)
    assert out.shape == (1, 2, 2)
    np.testing.assert_array_equal(out, [[[6.0, 8.0], [16.0, 18.0]]])
    g_in, _ = pool.backward(x, np.ones((1, 2, 2)))
    assert g_in.shape == x.shape
    assert g_in[:, 4, :].sum() == 0 and g_in[:, :, 4].sum() == 0


def test_sgd_step_lr_zero_is_bit_identical():
    w = np.array([[-0.0, 1.5]])
    model = nn.ModelGraph([nn.Flatten("fl"),
                           nn.FullyConnected("fc", 2, 1, weight=w)], num_classes=1)
    stepped = nn.sgd_step(model, {"fc": np.ones((1, 2))}, lr=0.0)
    got = stepped.layer("fc").weight
    np.testing.assert_array_equal(got, w)
    assert np.signbit(got[0, 0])


def test_sgd_step_applies_and_validates():
    w = np.array([[1.0, 2.0]])
    model = nn.ModelGraph([nn.Flatten("fl"),
                           nn.FullyConnected("fc", 2, 1, weight=w)], num_classes=1)
    stepped = nn.sgd_step(model, {"fc": np.array([[1.0, -1.0]])}, lr=0.5)
    np.testing.assert_array_equal(stepped.layer("fc").weight, [[0.5, 2.5]])
    np.testing.assert_array_equal(model.layer("fc").weight, w)
    with pytest.raises(ValueError):
        nn.sgd_step(model, {"fc": np.ones((2, 1))}, lr=0.1)
    with pytest.raises(ValueError):
        nn.sgd_step(model, {"fl": np.ones(2)}, lr=0.1)


def test_model_graph_validation():
    layers = [nn.ReLU("a"), nn.ReLU("a"), nn.GlobalAvgPool("g")]
    with pytest.raises(ValueError):
        nn.ModelGraph(layers, num_classes=1)
    model = tiny_model()
    assert model.index_of("gap") == 4
    with pytest.raises(KeyError):
        model.index_of("nope")


def test_insert_layer_places_and_copies():
    model = tiny_model()
    grown = nn.insert_layer(model, 3, nn.Bias("extra", 1, np.zeros(1)))
    assert grown.layer_names()[3] == "extra"
    assert len(grown.layers) == len(model.layers) + 1
    assert len(model.layers) == 6
    with pytest.raises(ValueError):
        nn.insert_layer(model, 99, nn.Bias("late", 1))


def test_forward_validates_input_and_logits(rng):
    model = tiny_model()
    with pytest.raises(ValueError):
        nn.forward(model, np.array([[[np.nan, 0.0], [0.0, 0.0]]]))
    wrong_head = nn.ModelGraph(model.layers[:-1], num_classes=2)
    with pytest.raises(ValueError):
        nn.forward(wrong_head, rng.standard_normal((1, 2, 2)))


def test_flat_param_round_trip(rng):
    model = tiny_model()
    vec = nn.flatten_params(model)
    assert vec.shape == (1 + 1 + 1 + 2,)
    rebuilt = nn.with_flat_params(model, vec)
    np.testing.assert_array_equal(nn.flatten_params(rebuilt), vec)
    shifted = nn.with_flat_params(model, vec + 1.0)
    np.testing.assert_array_equal(nn.flatten_params(shifted), vec + 1.0)
    with pytest.raises(ValueError):
        nn.with_flat_params(model, vec[:-1])


def test_layer_config_round_trip(rng):
    conv = nn.Conv("c", 3, 2, 4, weight=rng.standard_normal((4, 18)))
    rebuilt = nn.layer_from_config(conv.config(), conv.weight)
    np.testing.assert_array_equal(rebuilt.weight, conv.weight)
    assert rebuilt.config() == conv.config()
    with pytest.raises(ValueError):
        nn.layer_from_config({"kind": "warp", "name": "w"})
    with pytest.raises(ValueError):
        nn.layer_from_config({"kind": "relu", "name": "r"}, np.ones(1))
