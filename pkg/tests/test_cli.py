import json
import math

import numpy as np
import pytest

from conftest import RANDOM_SOLVE_RATE_N8
from morphnet.cli import main
from morphnet.cli import checkpoint
from morphnet.cli.config import ConfigError, loads
from morphnet.cli.metrics import read_rows
from morphnet.cli.runs import build_trainer, save_trainer
from morphnet.morph import Deeper

SMALL = """\
seed: 3
eval_interval: 800
eval_episodes: 10
checkpoint_interval: 800
env: {name: gridroom, size: 5}
network: {hidden: [16]}
growth: {final_depth: 3, growths: 2}
ppo: {total_steps: 2400, rollout_len: 50, n_envs: 4, minibatch_size: 100, epochs: 2}
"""


def write_config(tmp_path, text=SMALL, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def train(tmp_path, out="run", *extra, text=SMALL):
    cfg = write_config(tmp_path, text)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / out), *extra]) == 0
    return tmp_path / out


def test_config_reports_line_of_bad_value():
    text = "env: {name: gridroom}\nppo:\n  lr: fast\n"
    with pytest.raises(ConfigError) as e:
        loads(text, "x.yaml")
    assert e.value.line == 3 and str(e.value).startswith("x.yaml:3:")


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="learning_rate") as e:
        loads("env: {name: gridroom}\nppo:\n  learning_rate: 0.1\n")
    assert e.value.line == 3
    with pytest.raises(ConfigError, match="colour"):
        loads("env: {name: gridroom}\ncolour: blue\n")


def test_config_rejects_inconsistent_growth_plan():
    with pytest.raises(ConfigError, match="final depth 4"):
        loads("env: {name: gridroom}\nnetwork: {hidden: [64]}\ngrowth: {final_depth: 4, growths: 2}\n")
    with pytest.raises(ConfigError):
        loads("env: {name: gridroom}\nnetwork: {hidden: [8], activation: tanh}\ngrowth: {final_depth: 2, growths: 1}\n")
    with pytest.raises(ConfigError):
        loads("env: {name: gridroom, size: 2}\n")
    with pytest.raises(ConfigError):
        loads("ppo: {lr: 0.1}\n")


def test_config_growth_schedule_even():
    cfg = loads("env: {name: gridroom}\nnetwork: {hidden: [64]}\ngrowth: {final_depth: 3, growths: 2}\n"
                "ppo: {total_steps: 300000}\n")
    assert cfg.schedule().triggers == [100000, 200000]
    static = loads("env: {name: gridroom}\nnetwork: {hidden: [64, 64, 64]}\n")
    assert static.schedule().triggers == [] and static.initial_depth == 3


def test_shipped_configs_load():
    from pathlib import Path
    for path in sorted(Path(__file__).resolve().parents[1].joinpath("configs").glob("*.yaml")):
        from morphnet.cli.config import load
        cfg = load(str(path))
        assert cfg.ppo.total_steps % cfg.ppo.steps_per_iteration == 0


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, "env: {name: gridroom}\nbogus: 1\n")
    assert main(["train", "--config", cfg]) == 2
    assert "cfg.yaml:2" in capsys.readouterr().err


def test_train_outputs_and_determinism(tmp_path):
    a = train(tmp_path, "a")
    b = train(tmp_path, "b")
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "growth_events.csv").read_bytes() == (b / "growth_events.csv").read_bytes()
    rows = read_rows(a / "metrics.csv")
    steps = [int(r["env_step"]) for r in rows]
    assert steps == sorted(set(steps)) and steps[-1] == 2400
    assert (a / "metrics.csv").read_bytes().count(b"\r\n") == len(rows) + 1
    growth = read_rows(a / "growth_events.csv")
    assert [int(g["env_step"]) for g in growth] == [800, 1600]
    assert [g["greedy_identical"] for g in growth] == ["1", "1"]
    assert (a / "checkpoints" / "final.ckpt").exists()
    run = json.loads((a / "run.json").read_text())
    assert run["initial_depth"] == 1 and run["final_depth"] == 3


def test_resume_is_bit_exact(tmp_path):
    full = train(tmp_path, "full")
    part = train(tmp_path, "part", "--stop-at", "1000")
    ckpt = part / "checkpoints" / "step_000000800.ckpt"
    assert ckpt.exists()
    assert main(["train", "--resume", str(ckpt)]) == 0
    for name in ("metrics.csv", "growth_events.csv"):
        assert (full / name).read_bytes() == (part / name).read_bytes()
    net_a, adam_a, meta_a = checkpoint.load(full / "checkpoints" / "final.ckpt")
    net_b, adam_b, meta_b = checkpoint.load(part / "checkpoints" / "final.ckpt")
    for k, v in net_a.params().items():
        assert np.array_equal(v, net_b.params()[k])
        assert np.array_equal(adam_a.m[k], adam_b.m[k]) and np.array_equal(adam_a.v[k], adam_b.v[k])
    assert meta_a["rng"] == meta_b["rng"] and meta_a["envs"] == meta_b["envs"]


def test_checkpoint_rejects_bad_files(tmp_path):
    run = train(tmp_path)
    data = (run / "checkpoints" / "final.ckpt").read_bytes()
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(data[:8] + (2).to_bytes(4, "little") + data[12:])
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.load(bad)
    bad.write_bytes(data[:-8])
    with pytest.raises(checkpoint.CheckpointError, match="truncated"):
        checkpoint.load(bad)
    bad.write_bytes(b"NOTACKPT" + data[8:])
    assert main(["eval", str(bad)]) == 2


def test_checkpoint_round_trip_is_exact(tmp_path):
    run = train(tmp_path)
    data = (run / "checkpoints" / "final.ckpt").read_bytes()
    net, adam, meta = checkpoint.decode(data)
    assert checkpoint.encode(net, adam, meta) == data


def morph_check(capsys, *args):
    code = main(["morph-check", *args])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out else None)


def test_morph_check(tmp_path, capsys):
    ckpt = str(train(tmp_path) / "checkpoints" / "final.ckpt")
    capsys.readouterr()
    code, report = morph_check(capsys, ckpt, "--op", "deeper")
    assert code == 0 and report["max_deviation"] == 0.0 and report["depth_after"] == 4
    code, report = morph_check(capsys, ckpt, "--op", "wider@0:24")
    assert code == 0 and report["max_deviation"] <= 1e-6
    assert report["params_after"] > report["params_before"]
    code, report = morph_check(capsys, ckpt, "--op", "deeper", "--morph-noise", "0.5")
    assert code == 1 and report["max_deviation"] > 0.0
    assert morph_check(capsys, ckpt, "--op", "wider@9:24")[0] == 3


def test_morph_check_tanh(tmp_path, capsys):
    text = SMALL.replace("hidden: [16]", "hidden: [16], activation: tanh").replace(
        "growth: {final_depth: 3, growths: 2}", "growth: {growths: 0}")
    ckpt = str(train(tmp_path, text=text) / "checkpoints" / "final.ckpt")
    code = main(["morph-check", ckpt, "--op", "deeper"])
    assert code == 3 and "IdempotencyError" in capsys.readouterr().err


def test_plot_data(tmp_path, capsys):
    run = train(tmp_path)
    out = tmp_path / "plot.csv"
    assert main(["plot-data", str(run), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert list(rows[0]) == ["run_id", "env_step", "metric", "value", "depth"]
    markers = [r for r in rows if r["metric"] == "growth_event"]
    assert [int(r["env_step"]) for r in markers] == [800, 1600]
    assert main(["plot-data", str(tmp_path / "missing")]) == 2


def test_eval_deterministic(tmp_path, capsys):
    ckpt = str(train(tmp_path) / "checkpoints" / "final.ckpt")
    capsys.readouterr()
    main(["eval", ckpt, "--episodes", "20", "--seed", "5"])
    first = capsys.readouterr().out
    main(["eval", ckpt, "--episodes", "20", "--seed", "5"])
    assert capsys.readouterr().out == first


def test_eval_of_zero_policy_matches_random_walk(tmp_path, capsys):
    cfg = loads("env: {name: gridroom, size: 8}\nnetwork: {hidden: [8]}\nppo: {total_steps: 1000}\n")
    trainer = build_trainer(cfg)
    for p in trainer.net.params().values():
        p[:] = 0.0
    path = tmp_path / "zero.ckpt"
    save_trainer(path, trainer, cfg)
    episodes = 2000
    assert main(["eval", str(path), "--episodes", str(episodes)]) == 0
    rate = json.loads(capsys.readouterr().out)["solve_rate"]
    sigma = math.sqrt(RANDOM_SOLVE_RATE_N8 * (1 - RANDOM_SOLVE_RATE_N8) / episodes)
    assert abs(rate - RANDOM_SOLVE_RATE_N8) < 4 * sigma


def test_tune_command(tmp_path, capsys):
    text = SMALL.replace("growth: {final_depth: 3, growths: 2}", "growth: {final_depth: 2, growths: 1}") + (
        "tune:\n  n: 4\n  eta: 2\n  rung_budgets: [400, 400]\n  eval_episodes: 5\n"
        "  space:\n    lr: {log_uniform: [1.0e-4, 1.0e-2]}\n"
    )
    cfg = write_config(tmp_path, text)
    out = tmp_path / "tune"
    assert main(["tune", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "incumbent.json").read_text())
    assert summary["alive_per_rung"] == [4, 2] and summary["depth"] == 2
    assert len(read_rows(out / "tuner_growth.csv")) == 2
    net, _, meta = checkpoint.load(out / "incumbent.ckpt")
    assert net.depth() == 2 and meta["env_step"] == 800
    assert main(["tune", "--config", cfg, "--out", str(tmp_path / "static"), "--no-growth"]) == 0
    assert json.loads((tmp_path / "static" / "incumbent.json").read_text())["depth"] == 1
