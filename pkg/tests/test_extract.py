import numpy as np
import pytest

from saligrad import nn
from saligrad.extract import (AttachPoint, BiasIdentity, ConvIdentity,
                              RealBias, RealConv, RealScaling, ScalingIdentity,
                              contribution_sum_check, identity_layer,
                              spatial_contributions)


def small_net(rng):
    layers = [
        nn.Conv("conv1", 3, 2, 4, weight=rng.normal(0, 0.4, size=(4, 18))),
        nn.Scaling("scale1", 4, rng.normal(1.0, 0.2, size=4)),
        nn.Bias("bias1", 4, rng.normal(0, 0.2, size=4)),
        nn.ReLU("relu1"),
        nn.Conv("conv2", 1, 4, 3, weight=rng.normal(0, 0.4, size=(3, 4))),
        nn.ReLU("relu2"),
        nn.GlobalAvgPool("gap"),
        nn.FullyConnected("fc", 3, 2, weight=rng.normal(0, 0.4, size=(2, 3))),
    ]
    return nn.ModelGraph(layers, num_classes=2)


def backprop_tape(rng, cls=0):
    model = small_net(rng)
    x = rng.standard_normal((2, 6, 6))
    tape = nn.forward(model, x)
    nn.backward(model, tape, nn.ClassLogit(cls))
    return model, tape


def test_identity_kinds_pair_one_interface(rng):
    _, tape = backprop_tape(rng)
    rec = tape.record("relu1")

    out_bias = spatial_contributions(tape, AttachPoint("relu1"), BiasIdentity())
    np.testing.assert_array_equal(out_bias.vectors, rec.g_out)

    in_bias = spatial_contributions(tape, AttachPoint("relu1", side="input"),
                                    BiasIdentity())
    np.testing.assert_array_equal(in_bias.vectors, rec.g_in)

    scal = spatial_contributions(tape, AttachPoint("relu1"), ScalingIdentity())
    np.testing.assert_array_equal(scal.vectors, rec.g_out * rec.x_out)


def test_conv_identity_with_1x1_kernel_factors_as_g_and_x(rng):
    _, tape = backprop_tape(rng)
    rec = tape.record("relu1")
    field = spatial_contributions(tape, AttachPoint("relu1"), ConvIdentity(1))
    assert field.kind == "factored"
    np.testing.assert_array_equal(field.gvec, rec.g_out)
    np.testing.assert_array_equal(field.xvec, rec.x_out)


def test_contributions_sum_to_parameter_gradients(rng):
    # the framework's defining identity: summing per-location contributions
    # of a real layer recovers its autodiff parameter gradient exactly
    model, tape = backprop_tape(rng)
    checks = {
        "conv1": RealConv(), "conv2": RealConv(),
        "bias1": RealBias(), "scale1": RealScaling(),
    }
    for name, kind in checks.items():
        field = spatial_contributions(tape, AttachPoint(name), kind)
        assert contribution_sum_check(field, tape, name) < 1e-10


def test_real_kinds_reject_wrong_layers(rng):
    _, tape = backprop_tape(rng)
    with pytest.raises(ValueError):
        spatial_contributions(tape, AttachPoint("bias1"), RealConv())
    with pytest.raises(ValueError):
        spatial_contributions(tape, AttachPoint("conv1"), RealBias())
    with pytest.raises(ValueError):
        spatial_contributions(tape, AttachPoint("relu1"), RealScaling())


def test_sum_check_rejects_mismatched_field(rng):
    _, tape = backprop_tape(rng)
    # bias-kind field summed against the conv gradient: shapes cannot match
    field = spatial_contributions(tape, AttachPoint("conv1"), BiasIdentity())
    with pytest.raises(ValueError):
        contribution_sum_check(field, tape, "conv1")
    with pytest.raises(RuntimeError):
        contribution_sum_check(field, tape, "relu1")


def test_extraction_needs_gradients(rng):
    model = small_net(rng)
    tape = nn.forward(model, rng.standard_normal((2, 6, 6)))
    with pytest.raises(RuntimeError):
        spatial_contributions(tape, AttachPoint("relu1"), BiasIdentity())


def test_attach_point_validation():
    with pytest.raises(ValueError):
        AttachPoint("relu1", side="sideways")
    with pytest.raises(ValueError):
        ConvIdentity(2)
    assert AttachPoint("relu1").side == "output"


def test_non_spatial_attach_is_rejected(rng):
    _, tape = backprop_tape(rng)
    with pytest.raises(ValueError):
        spatial_contributions(tape, AttachPoint("fc"), BiasIdentity())


def test_identity_layers_change_nothing(rng):
    # criterion: splicing an explicit identity into the chain must leave every
    # downstream activation in place and the loss bit-equal
    model = small_net(rng)
    x = rng.standard_normal((2, 6, 6))
    base = nn.forward(model, x)
    nn.backward(model, base, nn.CrossEntropy(1))

    channels = 4  # interface after relu1
    position = model.index_of("relu1") + 1
    for kind in (BiasIdentity(), ScalingIdentity(), ConvIdentity(3)):
        extra = identity_layer(kind, channels, "probe")
        grown = nn.insert_layer(model, position, extra)
        tape = nn.forward(grown, x)
        nn.backward(grown, tape, nn.CrossEntropy(1))
        np.testing.assert_array_equal(tape.record("probe").x_out,
                                      tape.record("probe").x_in)
        for name in ("conv2", "relu2", "gap", "fc"):
            diff = np.max(np.abs(tape.record(name).x_out - base.record(name).x_out))
            assert diff <= 1e-15
        assert tape.loss == base.loss


def test_identity_layer_parameters_are_neutral():
    conv = identity_layer(ConvIdentity(3), 2, "id")
    assert isinstance(conv, nn.Conv)
    x = np.arange(18, dtype=np.float64).reshape(2, 3, 3)
    np.testing.assert_array_equal(conv.forward(x), x)
    bias = identity_layer(BiasIdentity(), 3, "id")
    np.testing.assert_array_equal(bias.param, np.zeros(3))
    scale = identity_layer(ScalingIdentity(), 3, "id")
    np.testing.assert_array_equal(scale.param, np.ones(3))


def test_virtual_and_real_conv_share_x_but_not_g(rng):
    # a virtual conv at a conv layer's input sees the same activations as the
    # real decomposition, but pairs them with the input-interface gradient
    # instead of the layer's output gradient; the study compares the two
    model, tape = backprop_tape(rng)
    layer = model.layer("conv2")
    rec = tape.record("conv2")
    virt = spatial_contributions(tape, AttachPoint("conv2", side="input"),
                                 ConvIdentity(layer.kernel_size))
    real = spatial_contributions(tape, AttachPoint("conv2"), RealConv())
    np.testing.assert_array_equal(virt.xvec, real.xvec)
    np.testing.assert_array_equal(virt.gvec, rec.g_in)
    np.testing.assert_array_equal(real.gvec, rec.g_out)
