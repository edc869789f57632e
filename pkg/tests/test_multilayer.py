import numpy as np
import pytest

from saligrad import nn
from saligrad.aggregate import SaliencyMap
from saligrad.extract import AttachPoint
from saligrad.multilayer import (LayerWeights, ProbeConfig, combine,
                                 feature_spread_weights, linear_interp_weights,
                                 probe_accuracy_weights, train_linear_probe,
                                 uniform_weights, upsample)


def smap(values, layer="l"):
    return SaliencyMap(values=np.asarray(values, dtype=np.float64),
                       layer=AttachPoint(layer))


def test_upsample_2x2_to_3x3_by_hand():
    m = upsample(smap([[0.0, 1.0], [1.0, 0.0]]), (3, 3))
    expected = np.array([[0.0, 0.5, 1.0],
                         [0.5, 0.5, 0.5],
                         [1.0, 0.5, 0.0]])
    np.testing.assert_allclose(m.values, expected, rtol=0, atol=1e-15)


def test_upsample_keeps_corners_and_constants(rng):
    src = rng.standard_normal((4, 5))
    up = upsample(smap(src), (9, 13)).values
    assert up[0, 0] == src[0, 0] and up[0, -1] == src[0, -1]
    assert up[-1, 0] == src[-1, 0] and up[-1, -1] == src[-1, -1]
    flat = upsample(smap(np.full((3, 3), 2.5)), (8, 8)).values
    np.testing.assert_allclose(flat, 2.5, rtol=0, atol=1e-12)


def test_upsample_edge_cases(rng):
    src = rng.standard_normal((3, 3))
    same = upsample(smap(src), (3, 3))
    np.testing.assert_array_equal(same.values, src)
    assert same.values is not src
    # a single-pixel axis has no gradient to interpolate along
    row = upsample(smap(np.array([[1.0, 3.0]])), (4, 4)).values
    np.testing.assert_allclose(row, np.tile(np.linspace(1.0, 3.0, 4), (4, 1)),
                               atol=1e-12)
    with pytest.raises(ValueError):
        upsample(smap(src), (2, 5))


def test_layer_weights_must_be_normalized():
    LayerWeights({"a": 0.5, "b": 0.5}, "uniform")
    with pytest.raises(ValueError):
        LayerWeights({"a": 0.5, "b": 0.6}, "uniform")


def test_uniform_and_linear_interp_weights():
    u = uniform_weights(["a", "b", "c"])
    assert u.gamma == pytest.approx({"a": 1 / 3, "b": 1 / 3, "c": 1 / 3})
    li = linear_interp_weights(["a", "b", "c"])
    # weight grows linearly with depth position: 1, 2, 3 before normalizing
    assert li.gamma == pytest.approx({"a": 1 / 6, "b": 2 / 6, "c": 3 / 6})
    assert li.scheme == "linear-interp"


def stacked_conv_model():
    """conv_a passes the input through, conv_b then triples it."""
    layers = [
        nn.Conv("conv_a", 1, 1, 1, weight=np.array([[1.0]])),
        nn.Conv("conv_b", 1, 1, 1, weight=np.array([[3.0]])),
        nn.GlobalAvgPool("gap"),
        nn.FullyConnected("fc", 1, 2, weight=np.array([[1.0], [-1.0]])),
    ]
    return nn.ModelGraph(layers, num_classes=2)


def test_feature_spread_weights_hand_example():
    # constant images 1 and 3: conv_a means are (1, 3) and conv_b means are
    # (3, 9), so the spreads around the centroids are 1 and 3
    model = stacked_conv_model()
    images = [np.full((1, 4, 4), 1.0), np.full((1, 4, 4), 3.0)]
    w = feature_spread_weights(model, images, ["conv_a", "conv_b"])
    assert w.gamma == pytest.approx({"conv_a": 0.25, "conv_b": 0.75})
    assert w.scheme == "spread"


def test_feature_spread_degenerates_to_uniform():
    model = stacked_conv_model()
    images = [np.full((1, 4, 4), 2.0), np.full((1, 4, 4), 2.0)]
    w = feature_spread_weights(model, images, ["conv_a", "conv_b"])
    assert w.gamma == pytest.approx({"conv_a": 0.5, "conv_b": 0.5})
    assert w.scheme == "spread"
    with pytest.raises(ValueError):
        feature_spread_weights(model, images[:1], ["conv_a"])


def test_linear_probe_on_separable_features():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 0.3, size=(20, 4))
    b = rng.normal(3.0, 0.3, size=(20, 4))
    feats = np.vstack([a, b])
    labels = np.array([0] * 20 + [1] * 20)
    acc, (w, bias) = train_linear_probe(feats, labels, 2)
    assert acc == 1.0
    assert w.shape == (2, 4) and bias.shape == (2,)
    with pytest.raises(ValueError):
        train_linear_probe(feats, np.zeros(40, dtype=int), 2)


def test_linear_probe_zero_iterations_keeps_zero_weights():
    feats = np.random.default_rng(1).standard_normal((10, 3))
    labels = np.array([0, 1] * 5)
    acc, (w, b) = train_linear_probe(feats, labels, 2,
                                     ProbeConfig(iterations=0, lr=0.1))
    np.testing.assert_array_equal(w, 0.0)
    np.testing.assert_array_equal(b, 0.0)
    # all-zero scores predict class 0 everywhere
    assert acc == 0.5


def test_probe_accuracy_weights_favor_the_separating_layer():
    model = stacked_conv_model()
    rng = np.random.default_rng(3)
    images, labels = [], []
    for i in range(12):
        level = 1.0 if i % 2 == 0 else 2.0
        images.append(np.full((1, 4, 4), level) + rng.normal(0, 0.01, (1, 4, 4)))
        labels.append(i % 2)
    w = probe_accuracy_weights(model, images, np.array(labels),
                               ["conv_a", "conv_b"])
    assert w.scheme == "accuracy"
    assert sum(w.gamma.values()) == pytest.approx(1.0)
    # both layers carry the signal here, so neither weight collapses
    assert min(w.gamma.values()) > 0.3


def test_combine_add_mode_hand_oracle(rng):
    m1 = smap(rng.uniform(0, 2, (2, 2)), "a")
    m2 = smap(rng.uniform(-1, 1, (4, 4)), "b")
    w = LayerWeights({"a": 0.25, "b": 0.75}, "manual")
    out = combine([m1, m2], w, "add", (4, 4))

    def minmax(v):
        return (v - v.min()) / (v.max() - v.min())

    expected = 0.25 * minmax(upsample(m1, (4, 4)).values) + 0.75 * minmax(m2.values)
    np.testing.assert_allclose(out.values, expected, rtol=0, atol=1e-12)
    assert out.mode == "add"
    assert out.weights.gamma == w.gamma


def test_combine_prod_mode_hand_oracle(rng):
    m1 = smap(rng.uniform(0, 1, (3, 3)), "a")
    m2 = smap(rng.uniform(0, 1, (3, 3)), "b")
    w = LayerWeights({"a": 0.5, "b": 0.5}, "manual")
    out = combine([m1, m2], w, "prod", (3, 3))

    def minmax(v):
        return (v - v.min()) / (v.max() - v.min())

    expected = np.clip((minmax(m1.values) + 1e-12) ** 0.5
                       * (minmax(m2.values) + 1e-12) ** 0.5, 0.0, 1.0)
    np.testing.assert_allclose(out.values, expected, rtol=0, atol=1e-12)


def test_combine_output_stays_in_unit_range(rng):
    for mode in ("add", "prod"):
        maps = [smap(rng.standard_normal((3, 3)) * 10 ** k, f"l{k}")
                for k in range(3)]
        w = uniform_weights(["l0", "l1", "l2"])
        out = combine(maps, w, mode, (6, 6))
        assert out.values.min() >= 0.0
        assert out.values.max() <= 1.0


def test_combine_is_invariant_to_positive_rescaling(rng):
    # min-max normalization absorbs any positive scale on a source map
    vals = rng.standard_normal((3, 3))
    other = rng.uniform(0, 1, (3, 3))
    w = LayerWeights({"a": 0.5, "b": 0.5}, "manual")
    base = combine([smap(vals, "a"), smap(other, "b")], w, "add", (3, 3))
    scaled = combine([smap(vals * 37.0, "a"), smap(other, "b")], w, "add", (3, 3))
    np.testing.assert_allclose(base.values, scaled.values, atol=1e-12)


def test_combine_validation(rng):
    w = LayerWeights({"a": 0.5, "b": 0.5}, "manual")
    a = smap(rng.uniform(0, 1, (3, 3)), "a")
    b = smap(rng.uniform(0, 1, (3, 3)), "b")
    with pytest.raises(ValueError):
        combine([a, a], w, "add", (3, 3))
    with pytest.raises(ValueError):
        combine([a], w, "add", (3, 3))
    with pytest.raises(ValueError):
        combine([a, b], w, "geometric", (3, 3))
    signed = smap(np.array([[-1.0, 0.5], [0.2, 0.1]]), "a")
    with pytest.raises(ValueError):
        combine([signed, b], w, "prod", (3, 3), normalize=False)
    # the same maps are fine in add mode without normalization
    combine([signed, b], w, "add", (3, 3), normalize=False)
