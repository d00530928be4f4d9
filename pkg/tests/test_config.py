import json

import pytest

from llmrg.cli import build_parser, resolve_config
from llmrg.config import LLMRGConfig


def test_defaults_and_round_trip(tmp_path):
    cfg = LLMRGConfig()
    assert (cfg.tau, cfg.l_tru, cfg.k, cfg.theta_sim) == (30, 50, 3, 0.35)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert LLMRGConfig.load(path) == cfg


def test_override_reaches_sub_configs_and_skips_none():
    cfg = LLMRGConfig().override(tau=50, seed=None, **{"backend.kind": "http", "mock.fidelity": 0.5})
    assert cfg.tau == 50 and cfg.seed == 1
    assert cfg.backend.kind == "http" and cfg.mock.fidelity == 0.5


@pytest.mark.parametrize("bad", [{"tau": 102}, {"tau": -1}, {"theta_sim": 1.5}, {"k": 0},
                                 {"lr": -0.1}, {"mock": {"fidelity": 2.0}}])
def test_validation(bad):
    with pytest.raises(ValueError):
        LLMRGConfig.from_dict(bad)


def test_unknown_keys_rejected():
    with pytest.raises(ValueError, match="nope"):
        LLMRGConfig.from_dict({"nope": 1})


def test_cli_over_file_over_default(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"tau": 40, "seed": 9, "l_tru": 20}))
    parser = build_parser()
    args = parser.parse_args(["stats", "--config", str(path), "--tau", "60", "--dataset", "x"])
    cfg = resolve_config(args)
    assert (cfg.tau, cfg.seed, cfg.l_tru, cfg.k) == (60, 9, 20, 3)
    # global flags are accepted before the subcommand as well
    args = parser.parse_args(["--tau", "70", "stats", "--dataset", "x"])
    assert resolve_config(args).tau == 70
