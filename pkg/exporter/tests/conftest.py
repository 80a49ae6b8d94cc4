import os

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

import keras
import pytest
from keras import layers


def build_toy(name="toy", seed=7):
    """Conv stack ending in a linear head; every stage is tappable."""
    keras.utils.set_random_seed(seed)
    x = inp = keras.Input((24, 24, 3))
    x = layers.Conv2D(6, 3, padding="same", activation="relu", name="c1")(x)
    x = layers.MaxPooling2D(2, name="p1")(x)
    x = layers.Conv2D(4, 3, padding="valid", name="c2")(x)
    x = layers.GlobalAveragePooling2D(name="gap")(x)
    x = layers.Dense(5, name="head")(x)
    return keras.Model(inp, x, name=name)


@pytest.fixture
def toy_model():
    model = build_toy()
    yield model
    keras.backend.clear_session()
