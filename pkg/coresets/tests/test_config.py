import json
from pathlib import Path

import pytest

from coreqn import settings
from coresets.config import describe_config_keys, load_config, parse_config
from coresets.errors import ConfigError


def test_defaults():
    config = parse_config({})
    assert config.data.kind == "synthetic_gaussian"
    assert (config.data.n, config.data.d) == (settings.GAUSSIAN_N, settings.GAUSSIAN_D)
    assert config.data.noise_var == 100.0
    assert config.methods == ("QNC", "UNIF", "LAP", "FULL")
    assert config.coreset_sizes == (50, 100, 200, 500)
    assert config.trials == 10
    assert config.qnc.M == 500
    assert config.qnc.S == 500
    assert config.qnc.tau == 0.01
    assert config.qnc.K_tune == 1
    assert config.sampler.warmup_steps == 500
    assert config.metrics.ksd_beta == -0.5
    assert config.seed == 0


def test_sections_are_parsed():
    config = parse_config({
        "data": {"kind": "synthetic_logistic", "n": 300},
        "methods": ["QNC", "LAP"],
        "coreset_sizes": [10, 20],
        "trials": 2,
        "qnc": {"S": 100, "tau": 1, "tau_mode": "condition"},
        "sampler": {"leapfrog_steps": 8},
        "metrics": {"ksd": False},
        "seed": 42,
    })
    assert config.data.n == 300
    assert config.data.d == settings.LOGISTIC_D
    assert config.qnc.tau == 1.0
    assert isinstance(config.qnc.tau, float)
    assert config.qnc.seed == 42
    assert config.qnc.M == 20
    assert config.sampler.leapfrog_steps == 8
    assert config.metrics.ksd is False


@pytest.mark.parametrize(
    "raw, field",
    [
        ({"qnc": {"foo": 1}}, "qnc.foo"),
        ({"qnc": {"tau": -1.0}}, "qnc.tau"),
        ({"qnc": {"S": True}}, "qnc.S"),
        ({"qnc": {"gamma": 2.0}}, "qnc.gamma"),
        ({"sampler": {"target_accept": 1.5}}, "sampler.target_accept"),
        ({"metrics": {"ksd_beta": 0.5}}, "metrics.ksd_beta"),
        ({"coreset_sizes": [10, 0]}, "coreset_sizes[1]"),
        ({"data": {"n": 100}, "coreset_sizes": [50, 200]}, "coreset_sizes[1]"),
        ({"methods": ["QNC", "MCMC"]}, "methods[1]"),
        ({"methods": []}, "methods"),
        ({"data": {"kind": "csv", "schema": "regression", "model": "linear_regression"}}, "data.path"),
        ({"data": {"kind": "csv", "path": "x.csv", "schema": "classification",
                   "model": "linear_regression"}}, "data.model"),
        ({"data": {"kind": "images"}}, "data.kind"),
        ({"seed": -1}, "seed"),
        ({"unknown": 1}, "unknown"),
    ],
)
def test_invalid_fields_are_named(raw, field):
    with pytest.raises(ConfigError) as excinfo:
        parse_config(raw)
    assert excinfo.value.field == field
    assert str(excinfo.value).startswith(f"{field}:")


def test_overrides(tmp_path):
    config = parse_config({"seed": 1, "threads": 2})
    updated = config.with_overrides(seed=9, output_dir=tmp_path, threads=4)
    assert (updated.seed, updated.output_dir, updated.threads) == (9, tmp_path, 4)
    assert config.with_overrides() is config
    with pytest.raises(ConfigError):
        config.with_overrides(threads=0)


def test_threads_from_environment(monkeypatch):
    monkeypatch.setattr(settings, "THREADS", "3")
    assert parse_config({}).threads == 3
    monkeypatch.setattr(settings, "THREADS", None)
    assert parse_config({}).threads == 1
    monkeypatch.setattr(settings, "THREADS", "many")
    with pytest.raises(ConfigError) as excinfo:
        parse_config({})
    assert excinfo.value.field == "threads"


def test_output_dir_default(monkeypatch, tmp_path):
    monkeypatch.setattr(settings, "OUTPUT_DIR", tmp_path / "out")
    assert parse_config({}).output_dir == tmp_path / "out"
    assert parse_config({"output_dir": "elsewhere"}).output_dir == Path("elsewhere")


def test_load_config(tmp_path):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({"trials": 3, "coreset_sizes": [5]}), encoding="utf-8")
    config = load_config(path)
    assert config.trials == 3
    assert config.coreset_sizes == (5,)

    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        load_config(broken)
    assert excinfo.value.field == "<root>"


def test_describe_config_keys_lists_every_section():
    text = describe_config_keys()
    for key in ("coreset_sizes", "data.kind", "qnc.tau", "sampler.warmup_steps", "metrics.imq_scale"):
        assert key in text
