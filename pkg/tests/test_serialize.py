import json

import numpy as np
import pytest

from advtst.kernels import make_deep_kernel
from advtst.location import LocationTestModel
from advtst.serialize import ModelFormatError, load_model, model_from_dict, model_to_dict, save_model
from helpers import VARIANTS, random_model


def _same(a, b):
    da, db = model_to_dict(a), model_to_dict(b)
    assert json.dumps(da) == json.dumps(db)


@pytest.mark.parametrize("variant", VARIANTS + ("me", "scf"))
def test_round_trip_is_bitwise(variant, rng, tmp_path):
    if variant in ("me", "scf"):
        model = LocationTestModel(variant, rng.standard_normal((3, 4)), float(rng.uniform(0.5, 2)), 1e-5)
    else:
        model = random_model(variant, 4, rng)
    back = load_model(save_model(model, tmp_path / "sub" / "m.json"))
    _same(model, back)
    x = rng.standard_normal((6, 4))
    if hasattr(model, "gram"):
        np.testing.assert_array_equal(model.gram(x)[0], back.gram(x)[0])
    else:
        np.testing.assert_array_equal(model.locations, back.locations)


def test_deep_weights_keep_shape(rng):
    model = make_deep_kernel(3, 7, rng, n_layers=2)
    back = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
    for a, b in zip(model.net.weights, back.net.weights):
        assert a.shape == b.shape and a.dtype == b.dtype
        np.testing.assert_array_equal(a, b)


def test_format_errors(rng):
    doc = model_to_dict(random_model("gaussian", 2, rng))
    with pytest.raises(ModelFormatError, match="version"):
        model_from_dict(dict(doc, version=2))
    with pytest.raises(ModelFormatError, match="not a model"):
        model_from_dict({"kind": "gaussian"})
    with pytest.raises(ModelFormatError, match="unknown model kind"):
        model_from_dict(dict(doc, kind="laplace"))
    broken = dict(doc)
    del broken["log_sigma"]
    with pytest.raises(ModelFormatError, match="lacks"):
        model_from_dict(broken)
    with pytest.raises(TypeError):
        model_to_dict(object())
