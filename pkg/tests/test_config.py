import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from dygmamba.config import RunConfig, TrainConfig, config_hash, dump_config, load_config, parse_config, run_id
from dygmamba.errors import ConfigurationError
from dygmamba.model import ModelConfig


def test_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.train.lr == 1e-4 and cfg.train.patience == 20 and cfg.train.batch_size == 200
    assert (cfg.model.d_T, cfg.model.d_C, cfg.model.d, cfg.model.d_out) == (100, 50, 50, 172)
    assert cfg.model.blocks == 2 and cfg.model.d_ssm == 16 and cfg.model.seq_len == 32


def test_sections_parse():
    cfg = parse_config("""
[run]
dataset = data/x.csv
seed = 4
[train]
strategies = rnd, hist
noise_levels = 0.1, 0.2
ratios = 0.6, 0.2, 0.2
[model]
d_T = 8
attn_causal = yes
ablations = no_cross_attn, no_selective
[bench]
lengths = 16, 32
""")
    assert cfg.dataset == "data/x.csv" and cfg.seed == 4
    assert cfg.train.strategies == ("rnd", "hist") and cfg.train.noise_levels == (0.1, 0.2)
    assert cfg.model.d_T == 8 and cfg.model.attn_causal is True
    assert cfg.model.ablations == ("no_cross_attn", "no_selective")
    assert cfg.bench.lengths == (16, 32)


def test_every_bad_field_is_reported():
    text = """
[run]
task = regression
precision = f16
colour = blue
[train]
lr = fast
epochs = 0
ratios = 0.5, 0.5
strategies = rnd, popular
[model]
d = -1
gap = sideways
[extra]
x = 1
"""
    with pytest.raises(ConfigurationError) as err:
        parse_config(text, "bad.ini")
    msg = str(err.value)
    for fragment in ("[run] task", "[run] precision", "[run] colour: unknown key", "[train] lr",
                     "[train] epochs", "[train] ratios", "[train] strategies", "[model] d:",
                     "[model] gap", "[extra]: unknown section"):
        assert fragment in msg, fragment
    assert msg.startswith("bad.ini")


def test_unknown_ablation_reported():
    with pytest.raises(ConfigurationError, match="ablation"):
        parse_config("[model]\nablations = no_magic\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_round_trip_and_hash(tmp_path):
    cfg = RunConfig(dataset="d.csv", seed=3, train=TrainConfig(lr=3e-4, noise_levels=(0.1, 0.5)),
                    model=ModelConfig(d=8, ablations=("no_time_encoding",)))
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    path = tmp_path / "c.ini"
    path.write_text(text)
    assert config_hash(load_config(path)) == config_hash(cfg)
    assert config_hash(cfg.replace(seed=4)) != config_hash(cfg)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1, allow_nan=False), st.integers(1, 500), st.integers(0, 10**6),
       st.lists(st.sampled_from(["rnd", "hist", "ind"]), min_size=1, max_size=3, unique=True))
def test_round_trip_property(lr, epochs, seed, strategies):
    cfg = RunConfig(seed=seed, train=TrainConfig(lr=lr, epochs=epochs, strategies=tuple(strategies)))
    assert parse_config(dump_config(cfg)) == cfg


def test_run_id():
    cfg = RunConfig()
    a = run_id(cfg, 0, "abc")
    assert len(a) == 16 and a == run_id(cfg, 0, "abc")
    assert a != run_id(cfg, 1, "abc") and a != run_id(cfg, 0, "abd")
    assert a != run_id(dataclasses.replace(cfg, task="node_classification"), 0, "abc")
