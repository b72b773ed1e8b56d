"""Config parsing: defaults, sections, strict errors with line numbers."""

import dataclasses

import pytest

from geoflow import ConfigError, ExperimentConfig, parse_config, render_config


def test_empty_text_gives_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.seed == 0
    assert cfg.kernel_sigma == 2.0
    assert cfg.flow_steps == 32
    assert cfg.svf_squarings == 0
    assert cfg.match_weight == 100.0
    assert cfg.optimizer_tol == 1e-6
    assert cfg.optimizer_max_iters == 500
    assert cfg.optimizer_step0 == 1.0
    assert cfg.ep_xi == 1e-3
    assert cfg.ep_relax_tol == 1e-8
    assert cfg.ep_relax_step == 0.1
    assert cfg.ep_relax_max_iters == 10000
    assert cfg.unitary_q == 100.0
    assert cfg.unitary_samples == 500
    assert cfg.unitary_restarts == 4
    assert cfg.unitary_steps == 64


def test_dotted_keys_comments_and_blanks():
    text = """
    # global settings
    seed = 3

    kernel.sigma = 1.5   # trailing comment
    flow.steps = 8
    match.weight = 50.0
    """
    cfg = parse_config(text)
    assert cfg.seed == 3
    assert cfg.kernel_sigma == 1.5
    assert cfg.flow_steps == 8
    assert cfg.match_weight == 50.0
    # untouched keys keep their defaults
    assert cfg.optimizer_max_iters == 500


def test_section_headers_prefix_bare_keys():
    text = """
    [kernel]
    sigma = 3.5

    [unitary]
    q = 2.0
    samples = 150
    ep.xi = -1e-2   # dotted keys ignore the active section
    """
    cfg = parse_config(text)
    assert cfg.kernel_sigma == 3.5
    assert cfg.unitary_q == 2.0
    assert cfg.unitary_samples == 150
    assert cfg.ep_xi == -1e-2


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r"line 2: unknown key 'kernel.width'"):
        parse_config("seed = 1\nkernel.width = 2.0\n")
    # a bare key outside any section must be fully dotted
    with pytest.raises(ConfigError, match=r"line 1: unknown key 'sigma'"):
        parse_config("sigma = 2.0\n")


def test_duplicate_key_reports_both_lines():
    text = "flow.steps = 8\nseed = 1\n[flow]\nsteps = 16\n"
    with pytest.raises(ConfigError, match=r"line 4: duplicate key 'flow.steps' \(first set on line 1\)"):
        parse_config(text)


def test_malformed_values_report_line():
    with pytest.raises(ConfigError, match=r"line 1: malformed integer for 'flow.steps'"):
        parse_config("flow.steps = 3.5\n")
    with pytest.raises(ConfigError, match=r"line 2: malformed number for 'kernel.sigma'"):
        parse_config("seed = 0\nkernel.sigma = two\n")
    with pytest.raises(ConfigError, match=r"line 1: non-finite value for 'kernel.sigma'"):
        parse_config("kernel.sigma = inf\n")
    with pytest.raises(ConfigError, match=r"line 1: expected 'key = value'"):
        parse_config("just some words\n")
    with pytest.raises(ConfigError, match=r"line 1: expected 'key = value'"):
        parse_config("seed =\n")
    with pytest.raises(ConfigError, match=r"line 1: malformed section header"):
        parse_config("[kernel\n")


def test_out_of_range_values_report_bounds():
    with pytest.raises(ConfigError, match=r"line 1: kernel.sigma = 0.0 out of range \(must be > 0\)"):
        parse_config("kernel.sigma = 0.0\n")
    with pytest.raises(ConfigError, match=r"line 1: seed = -1 out of range"):
        parse_config("seed = -1\n")
    with pytest.raises(ConfigError, match=r"line 1: ep.xi = 0 out of range \(must be nonzero\)"):
        parse_config("ep.xi = 0\n")
    with pytest.raises(ConfigError, match=r"line 1: unitary.samples = 99 out of range \(must be >= 100\)"):
        parse_config("unitary.samples = 99\n")
    with pytest.raises(ConfigError, match=r"line 1: unitary.q = 0.5 out of range \(must be >= 1\)"):
        parse_config("unitary.q = 0.5\n")
    with pytest.raises(ConfigError, match=r"line 1: unitary.steps = 1 out of range \(must be >= 2\)"):
        parse_config("unitary.steps = 1\n")


def test_render_parse_roundtrip():
    cfg = ExperimentConfig(
        seed=11,
        kernel_sigma=1.25,
        flow_steps=12,
        svf_squarings=6,
        match_weight=33.5,
        optimizer_tol=2.5e-7,
        optimizer_max_iters=77,
        optimizer_step0=0.5,
        ep_xi=-1e-4,
        ep_relax_tol=1e-12,
        ep_relax_step=0.05,
        ep_relax_max_iters=123456,
        unitary_q=7.0,
        unitary_samples=250,
        unitary_restarts=2,
        unitary_steps=32,
    )
    text = render_config(cfg)
    assert parse_config(text) == cfg
    # every field appears exactly once in the rendering
    for field in dataclasses.fields(ExperimentConfig):
        name = field.name.replace("_", ".", 1)
        assert text.count(f"{name} = ") == 1
    # rendering the default config roundtrips too
    assert parse_config(render_config(ExperimentConfig())) == ExperimentConfig()
