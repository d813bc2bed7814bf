import json
import math

import m3py
import pytest


def test_category_names():
    names = m3py.category_names()
    assert names == [
        "general",
        "detection-segmentation",
        "document-chart",
        "ocr-text",
        "medical",
    ]


def test_extract_tag():
    assert m3py.extract_tag("locate the tumor in this xray scan") == "medical"
    assert m3py.extract_tag("describe the picture") == "general"


def test_embed_text_unit_norm():
    v = m3py.embed_text("segment the chart region")
    assert abs(sum(x * x for x in v) - 1.0) < 1e-9


def test_path_loss_reference_distance():
    cfg = m3py.ChannelConfig()
    assert m3py.path_loss(1.0, 0.0, cfg) == pytest.approx(40.0)


def test_environment_observe():
    cfg = m3py.ChannelConfig()
    env = m3py.Environment(cfg, 7, 123)
    obs = env.observe()
    assert len(obs) == 7
    env.step()
    obs2 = env.observe()
    assert len(obs2) == 7


def test_fuse_weights_worked_example():
    w, degenerate = m3py.fuse_weights([0.6, 0.4], [0.5, 0.5], [1, 1])
    assert not degenerate
    assert w[0] == pytest.approx(0.6, abs=1e-5)
    assert w[1] == pytest.approx(0.4, abs=1e-5)


def test_llm_reward_bounds():
    weights = [0.5, 0.2, 0.1, 0.1, 0.05, 0.03, 0.02]
    quality = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3]
    r1, r2, r3, r4, r_llm = m3py.llm_reward(weights, [0], [5, 6], quality)
    assert r1 == pytest.approx(1.0)
    for v in (r1, r2, r3, r4, r_llm):
        assert 0.0 <= v <= 1.0


def test_channel_reward_single_active():
    q_bar, stability, load, se, r = m3py.channel_reward([0], [1.0], [15.0])
    assert q_bar == pytest.approx(0.5)
    assert load == pytest.approx(1.0)
    assert 0.0 <= r <= 1.0


def test_default_config_roundtrip():
    cfg = json.loads(m3py.default_config_json())
    assert cfg["n_experts"] == 7
    assert cfg["episodes"] == 1000


def test_run_scenario_random(tmp_path):
    cfg = json.loads(m3py.default_config_json())
    cfg["episodes"] = 5
    out = m3py.run_scenario(json.dumps(cfg), "random", str(tmp_path), False)
    assert math.isfinite(out["mean_r_final"])
    assert 0.0 <= out["mean_r_final"] <= 1.0
