import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from scenmetric.estimator import ScenarioMetricLearner
from scenmetric.synthgen import GeneratorConfig, generate

TINY_KW = dict(
    epochs=1,
    seed=4,
    image_size=8,
    latent_i=6,
    latent_t=4,
    latent=4,
    conv_channels=(4, 4, 4),
    attn_width=4,
    attn_heads=1,
)


@pytest.fixture(scope="module")
def tiny_dataset():
    cfg = GeneratorConfig(
        seed=8,
        scenarios_per_template=2,
        templates=("single-lane", "multi-lane"),
        image_size=8,
    )
    return generate(cfg)


def test_get_params_round_trip():
    est = ScenarioMetricLearner(epochs=3, beta_rec=2.5)
    params = est.get_params()
    assert params["epochs"] == 3
    assert params["beta_rec"] == 2.5
    est.set_params(lr=5e-4)
    assert est.lr == 5e-4
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()


def test_transform_before_fit_raises(tiny_dataset):
    est = ScenarioMetricLearner(**TINY_KW)
    with pytest.raises(NotFittedError):
        est.transform(tiny_dataset)


def test_fit_transform_shapes(tiny_dataset):
    est = ScenarioMetricLearner(**TINY_KW)
    out = est.fit_transform(tiny_dataset)
    assert out.shape == (len(tiny_dataset), 4)
    assert np.all(np.isfinite(out))
    assert len(est.log_) == 1


def test_fit_rejects_non_dataset():
    est = ScenarioMetricLearner(**TINY_KW)
    with pytest.raises(TypeError, match="Dataset"):
        est.fit([1, 2, 3])


def test_transform_accepts_scenario_sequence(tiny_dataset):
    est = ScenarioMetricLearner(**TINY_KW).fit(tiny_dataset)
    via_dataset = est.transform(tiny_dataset)
    via_list = est.transform(list(tiny_dataset.entries[:3]))
    np.testing.assert_array_equal(via_list, via_dataset[:3])
    with pytest.raises(ValueError, match="no scenarios"):
        est.transform([])
    with pytest.raises(TypeError, match="Scenario"):
        est.transform([42])


def test_fit_deterministic(tiny_dataset):
    a = ScenarioMetricLearner(**TINY_KW).fit_transform(tiny_dataset)
    b = ScenarioMetricLearner(**TINY_KW).fit_transform(tiny_dataset)
    np.testing.assert_array_equal(a, b)
