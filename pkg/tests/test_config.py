"""Config parsing, validation, and precedence."""

import dataclasses

import pytest

from segrl.config import (RunConfig, config_from_mapping, config_from_sources,
                          parse_config_text)


def test_defaults_construct_and_derive():
    cfg = RunConfig()
    assert cfg.n_critics == 1
    assert cfg.fixed_segment_len() == cfg.episode_steps
    mp = cfg.mp_config(n_dof=2)
    assert mp.T == cfg.episode_steps
    assert mp.tau == pytest.approx(cfg.episode_steps * cfg.dt)
    cc = cfg.critic_config()
    assert cc.max_seq_len == cfg.episode_steps + 1


def test_two_critics_for_clipped_and_ensemble():
    for variant in ("v_clipped", "v_ensemble"):
        assert dataclasses.replace(RunConfig(), target_variant=variant).n_critics == 2
    for variant in ("v_target", "q_target"):
        assert dataclasses.replace(RunConfig(), target_variant=variant).n_critics == 1


def test_trust_bounds_none_when_disabled():
    cfg = dataclasses.replace(RunConfig(), use_trust_region=False)
    assert cfg.trust_bounds() is None
    assert RunConfig().trust_bounds().eps_mu == RunConfig().eps_mu


@pytest.mark.parametrize("field,value", [
    ("gamma", 0.0), ("gamma", 1.5), ("lr_policy", -1.0), ("dt", 0.0),
    ("init_sigma", 0.0), ("min_sigma", -0.1), ("min_sigma", 1.0), ("policy_ic", "magic"),
    ("segment_mode", "stripes"), ("target_variant", "v_magic"),
    ("segment_len", 99), ("batch_size", 0), ("total_env_steps", 0),
])
def test_validation_rejects(field, value):
    with pytest.raises(ValueError):
        dataclasses.replace(RunConfig(), **{field: value})


def test_parse_config_text():
    text = """
    # a comment
    gamma = 0.95
    env = via_point_1d   # trailing comment
    use_trust_region = false
    """
    out = parse_config_text(text)
    assert out == {"gamma": "0.95", "env": "via_point_1d",
                   "use_trust_region": "false"}


def test_parse_config_text_errors():
    with pytest.raises(ValueError, match=":1:"):
        parse_config_text("not an assignment")
    with pytest.raises(ValueError, match="empty key or value"):
        parse_config_text("gamma = ")


def test_mapping_coercion_and_roundtrip():
    cfg = RunConfig(gamma=0.9, use_init_cond=False, segment_len=7,
                    out_dir="x/y")
    again = config_from_mapping(cfg.to_flat())
    assert again == cfg


def test_unknown_key_lists_valid():
    with pytest.raises(ValueError, match="unknown config keys.*typo_key"):
        config_from_mapping({"typo_key": "1"})


def test_bad_bool_rejected():
    with pytest.raises(ValueError, match="expected a boolean"):
        config_from_mapping({"use_trust_region": "maybe"})


def test_source_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("gamma = 0.9\nout_dir = from_file\nseed = 3\n")
    cfg = config_from_sources(str(path),
                              overrides={"out_dir": "from_cli", "seed": None},
                              env={})
    assert cfg.gamma == 0.9
    assert cfg.out_dir == "from_cli"
    assert cfg.seed == 3
    cfg2 = config_from_sources(str(path), overrides={"out_dir": "from_cli"},
                               env={"TOP_ERL_OUT": "from_env"})
    assert cfg2.out_dir == "from_env"
