"""Shared fixtures. The trained toy model is expensive (about half a minute),
so it is built once per session and reused by every test that needs it."""

import numpy as np
import pytest

from saligrad.modelio import default_toy_model, generate_shapes, train_toy


@pytest.fixture(scope="session")
def train_dataset():
    return generate_shapes(512, num_classes=2, seed=0)


@pytest.fixture(scope="session")
def eval_dataset():
    return generate_shapes(100, num_classes=2, seed=1)


@pytest.fixture(scope="session")
def toy_model(train_dataset):
    model = default_toy_model(num_classes=2, seed=0)
    return train_toy(model, train_dataset, epochs=30, lr=0.05, seed=0).model


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
