import os

import numpy as np
import pytest


@pytest.fixture(scope="session", autouse=True)
def _isolated_dirs(tmp_path_factory):
    # keep generated datasets and pretrained models out of the user's cache
    root = tmp_path_factory.mktemp("r2f")
    os.environ.setdefault("R2F_DATA", str(root / "data"))
    os.environ.setdefault("R2F_CACHE", str(root / "cache"))
    yield


@pytest.fixture(scope="session")
def digits(_isolated_dirs):
    from r2f import data

    return data.ensure_digits(data.default_root())


@pytest.fixture(scope="session")
def tiny_float(digits):
    from r2f import zoo

    return zoo.pretrained("tiny-net", digits[0])


@pytest.fixture(scope="session")
def tiny_q(tiny_float):
    from r2f.nn import quantize_model

    return quantize_model(tiny_float)


@pytest.fixture(scope="session")
def resnet_q(digits):
    from r2f import zoo
    from r2f.nn import quantize_model

    return quantize_model(zoo.pretrained("tiny-resnet", digits[0]))


def toy_float(seed=0, side=6, classes=3):
    """conv -> relu -> maxpool -> flatten -> fc on a 1 x side x side input."""
    from r2f.nn import model as M

    layers = [M.conv(1, 2, 3, pad=1), M.relu(), M.maxpool(2), M.flatten(),
              M.fc(2 * (side // 2) ** 2, classes)]
    return M.init_float_model((1, side, side), layers, input_exp=-7, seed=seed)


def toy_quant(seed=0, **kw):
    from r2f.nn import quantize_model

    return quantize_model(toy_float(seed, **kw))


def rand_q8(rng, shape):
    return rng.integers(-128, 128, size=shape, dtype=np.int16).astype(np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
