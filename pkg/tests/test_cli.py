"""Config grammar, the command-line entry points, and report files."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from fedlora.cli import (
    PRESETS,
    build_experiment,
    format_compare_table,
    gen_config,
    main,
    parse_config,
    resolve_output,
    run_benchmark,
    run_experiment,
    serialize_config,
)
from fedlora.errors import ConfigError

TINY = """
seed: 3
output: runs/tiny.jsonl
model: {d: 8, layers: 1, modules_per_layer: 2, num_classes: 3, r_g: 2}
data: {n_per_class: 12, cluster_std: 0.3, clients: 4, dirichlet_alpha: 0.5,
       test_fraction: 0.25}
training: {rounds: 3, epochs: 1, batch_size: 6, eta_a: 0.01}
strategy: {name: fl_lora, rank: 2}
"""


def _tiny_path(tmp_path, text=TINY, name="tiny.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_roundtrip_parse_serialize():
    cfg = parse_config(TINY)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    # serialization is a fixed point after one pass
    assert serialize_config(again) == serialize_config(cfg)


def test_defaults_fill_unset_keys():
    cfg = parse_config("strategy: {name: ffa_lora}")
    assert cfg.seed == 0
    assert cfg.data.partition == "dirichlet"
    assert cfg.training.b_multiplier == 5.0
    assert cfg.strategy.name == "ffa_lora"


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match=r"data\.banana"):
        parse_config("data: {banana: 3}")
    with pytest.raises(ConfigError, match="unknown key nonsense"):
        parse_config("nonsense: 1")


def test_type_errors_are_named():
    with pytest.raises(ConfigError, match=r"training\.rounds"):
        parse_config("training: {rounds: many}")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config("training: {rounds: true}")
    with pytest.raises(ConfigError, match="must be a mapping"):
        parse_config("training: 7")
    with pytest.raises(ConfigError, match="not valid YAML"):
        parse_config("training: {rounds: [")


def test_cross_field_validation():
    with pytest.raises(ConfigError, match=r"strategy\.rank"):
        parse_config("model: {r_g: 2}\nstrategy: {name: lora_a2, rank: 4}")
    with pytest.raises(ConfigError, match="even"):
        parse_config("data: {partition: pathological, clients: 5}\n"
                     "model: {num_classes: 8}")


@pytest.mark.parametrize("preset", sorted(PRESETS))
def test_presets_parse_and_roundtrip(preset):
    text = gen_config(preset)
    cfg = parse_config(text)
    assert serialize_config(cfg) == text


def test_infinite_epsilon_survives_yaml():
    cfg = parse_config(gen_config("dp-eps-inf"))
    assert cfg.dp.enabled and np.isinf(cfg.dp.epsilon)
    assert cfg.dp.is_identity


def test_run_writes_jsonl_and_is_byte_deterministic(tmp_path):
    cfg_path = _tiny_path(tmp_path)
    out1, out2 = tmp_path / "r1.jsonl", tmp_path / "r2.jsonl"
    assert main(["run", str(cfg_path), "--out", str(out1)]) == 0
    assert main(["run", str(cfg_path), "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().splitlines()
    assert len(lines) == 3 + 1  # one per round plus the summary
    rounds = [json.loads(l) for l in lines[:-1]]
    for t, rec in enumerate(rounds):
        assert rec["type"] == "round"
        assert rec["round"] == t
        assert 0.0 <= rec["test_accuracy"] <= 1.0
    summary = json.loads(lines[-1])
    assert summary["type"] == "summary"
    assert summary["strategy"] == "fl_lora"
    assert summary["rounds"] == 3
    assert summary["total_uploaded_params"] == rounds[-1]["cumulative_uploaded"]


def test_seed_override_changes_the_run(tmp_path):
    cfg_path = _tiny_path(tmp_path)
    out1, out2 = tmp_path / "s3.jsonl", tmp_path / "s9.jsonl"
    assert main(["run", str(cfg_path), "--out", str(out1)]) == 0
    assert main(["run", str(cfg_path), "--seed", "9",
                 "--out", str(out2)]) == 0
    assert json.loads(out2.read_text().splitlines()[-1])["seed"] == 9
    assert out1.read_bytes() != out2.read_bytes()


def test_output_dir_env_redirects_relative_paths(tmp_path, monkeypatch):
    cfg_path = _tiny_path(tmp_path)
    monkeypatch.setenv("FEDLORA_OUT_DIR", str(tmp_path / "redir"))
    monkeypatch.chdir(tmp_path)
    assert main(["run", str(cfg_path)]) == 0
    assert (tmp_path / "redir" / "runs" / "tiny.jsonl").exists()


def test_resolve_output_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDLORA_OUT_DIR", "/env/dir")
    assert resolve_output("runs/a.jsonl", "explicit.jsonl") == \
           Path("explicit.jsonl")
    assert resolve_output("runs/a.jsonl", None) == Path("/env/dir/runs/a.jsonl")
    assert resolve_output("/abs/a.jsonl", None) == Path("/abs/a.jsonl")
    monkeypatch.delenv("FEDLORA_OUT_DIR")
    assert resolve_output("runs/a.jsonl", None) == Path("runs/a.jsonl")


def test_summary_is_mean_of_final_five_rounds():
    text = TINY.replace("rounds: 3", "rounds: 7")
    reports, summary = run_experiment(parse_config(text))
    tail = [r.test_accuracy for r in reports[-5:]]
    assert summary["final_accuracy"] == pytest.approx(np.mean(tail))


def test_compare_runs_strategy_variants(tmp_path, capsys):
    suite = tmp_path / "suite"
    suite.mkdir()
    (suite / "a_fl.yaml").write_text(TINY)
    (suite / "b_ffa.yaml").write_text(
        TINY.replace("name: fl_lora", "name: ffa_lora"))
    table_path = tmp_path / "table.tsv"
    assert main(["compare", str(suite), "--seeds", "1",
                 "--out", str(table_path)]) == 0
    lines = table_path.read_text().splitlines()
    header = lines[0].split("\t")
    assert header[0] == "strategy"
    assert "mean_accuracy" in header
    assert len(lines) == 3
    assert lines[1].split("\t")[0] == "fl_lora"
    assert lines[2].split("\t")[0] == "ffa_lora"


def test_compare_rejects_non_strategy_differences(tmp_path, capsys):
    suite = tmp_path / "suite"
    suite.mkdir()
    (suite / "a.yaml").write_text(TINY)
    (suite / "b.yaml").write_text(TINY.replace("clients: 4", "clients: 5"))
    assert main(["compare", str(suite), "--seeds", "1"]) == 1
    assert "strategy section" in capsys.readouterr().err


def test_gen_config_list_and_unknown(tmp_path, capsys):
    assert main(["gen-config", "--list"]) == 0
    listed = capsys.readouterr().out.split()
    assert listed == sorted(PRESETS)
    assert main(["gen-config", "no-such-preset"]) == 1
    assert "unknown preset" in capsys.readouterr().err
    out = tmp_path / "c.yaml"
    assert main(["gen-config", "default", "--out", str(out)]) == 0
    parse_config(out.read_text())


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["no-such-command"]) == 1
    assert main(["run", str(tmp_path / "missing.yaml")]) == 1
    assert "config error" in capsys.readouterr().err


def test_diverging_run_exits_two(tmp_path, capsys):
    # with a linear activation an absurd learning rate overflows float64
    # within a round; saturating activations would hide the blow-up
    text = TINY.replace("eta_a: 0.01", "eta_a: 1.0e+200")
    text = text.replace("r_g: 2}", "r_g: 2, activation: linear}")
    cfg_path = _tiny_path(tmp_path, text)
    code = main(["run", str(cfg_path), "--out", str(tmp_path / "x.jsonl")])
    assert code == 2
    err = capsys.readouterr().err
    assert "numerical failure" in err
    assert "round" in err


def test_build_experiment_shapes():
    server, clients, run_cfg, test_set = build_experiment(parse_config(TINY))
    assert len(clients) == 4
    assert server.b.shape == (2, 8, 2)
    assert abs(sum(c.weight for c in clients) - 1.0) < 1e-12
    n_total = sum(c.n for c in clients) + test_set.n
    assert n_total == 3 * 12
    assert run_cfg.rounds == 3


def test_format_compare_table_formats_floats():
    rows = [{"strategy": "fl_lora", "rank": 2, "partition": "dirichlet",
             "dirichlet_alpha": 0.5, "mean_accuracy": 0.75,
             "std_accuracy": 0.0, "mean_uploaded_params": 128.0,
             "seeds": 1}]
    table = format_compare_table(rows)
    assert "0.750000" in table
    assert table.splitlines()[1].split("\t")[0] == "fl_lora"


def test_benchmark_reports_both_backends_or_python():
    text = run_benchmark(repeats=2)
    assert "python" in text
    assert "per loss+grad call" in text
    assert "active backend:" in text
