import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rkmpc.config import PipelineConfig


def test_roundtrip(tmp_path):
    cfg = PipelineConfig()
    cfg.plant.name = "pendulum"
    cfg.design.Q_tilde = [1, 1, 1, 1, 1]
    cfg.simulation.seeds = [3, 4]
    cfg.save(tmp_path / "c.json")
    back = PipelineConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert back.hash() == cfg.hash()


def test_unknown_field_rejected():
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"plant": {"nmae": "van_der_pol"}})
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"extra": {}})


def test_hash_changes_with_content():
    a, b = PipelineConfig(), PipelineConfig()
    b.data.seed_fit = 99
    assert a.hash() != b.hash()


@settings(max_examples=50)
@given(st.integers(1, 10**6), st.floats(1e-12, 1.0), st.lists(st.integers(0, 1000), max_size=5),
       st.sampled_from(["none", "udr", "sinusoidal", "stepwise"]))
def test_roundtrip_property(M, alpha, seeds, kind):
    cfg = PipelineConfig()
    cfg.data.M = M
    cfg.fit.alpha = alpha
    cfg.simulation.seeds = seeds
    cfg.data.disturbance = kind
    back = PipelineConfig.from_dict(__import__("json").loads(cfg.to_json()))
    assert back == cfg and back.hash() == cfg.hash()
