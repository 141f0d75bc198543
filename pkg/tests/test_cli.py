import json
import math
import os

import numpy as np
import pytest

from swarmgather.cli import main
from swarmgather.config import (
    ConfigError,
    UnknownExperiment,
    experiment_preset,
    load_run_config,
)
from swarmgather.discovery import PolicyChain, SwitchCriterion, save_chain
from swarmgather.env import InitKind, RewardMode
from swarmgather.nn import GaussianPolicy, Mlp, load_checkpoint

TINY_CONFIG = """
swarm: {n: 2, r_scan: unbounded}
reward: {mode: undefined_point, rho_g: 30.0}
init: {kind: packed, epsilon: 0.5}
train: {epochs: 2, horizon: 12, aux_horizon: 8, episodes_per_batch: 2,
        update_epochs: 2, minibatches: 2}
discovery: {sigma_size: 3, eval_episodes: 2}
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_CONFIG)
    return str(path)


def still_chain(n: int, horizons=(25,), mode=RewardMode.PREDEFINED_POINT):
    dim = 2 * n
    policies = [GaussianPolicy(Mlp([dim, dim], weights=[np.zeros((dim, dim))],
                                   biases=[np.zeros(dim)]),
                               np.full(dim, -40.0)) for _ in horizons]
    return PolicyChain(policies, list(horizons), SwitchCriterion(), mode)


class TestPresets:
    @pytest.mark.parametrize("exp_id,n,mode,kind", [
        ("A", 6, RewardMode.PREDEFINED_POINT, InitKind.PACKED),
        ("B", 8, RewardMode.PREDEFINED_POINT, InitKind.SCATTERED),
        ("C", 10, RewardMode.PREDEFINED_POINT, InitKind.DISTRIBUTED),
        ("D", 6, RewardMode.UNDEFINED_POINT, InitKind.PACKED),
        ("E", 8, RewardMode.UNDEFINED_POINT, InitKind.SCATTERED),
        ("F", 10, RewardMode.UNDEFINED_POINT, InitKind.DISTRIBUTED),
    ])
    def test_table_fields(self, exp_id, n, mode, kind):
        rc = experiment_preset(exp_id)
        assert rc.swarm.n == n
        assert rc.mode is mode
        assert rc.init.kind is kind
        assert rc.init.epsilon == 2.0 * rc.swarm.r_bot

    def test_scan_radius_per_mode(self):
        assert experiment_preset("A").swarm.r_scan == 6.0
        assert math.isinf(experiment_preset("D").swarm.r_scan)

    def test_unknown_experiment(self):
        with pytest.raises(UnknownExperiment):
            experiment_preset("Z")


class TestConfigFile:
    def test_round_trip_fields(self, tiny_config):
        rc = load_run_config(tiny_config, seed=5)
        assert rc.swarm.n == 2
        assert math.isinf(rc.swarm.r_scan)
        assert rc.mode is RewardMode.UNDEFINED_POINT
        assert rc.goal.rho_g == 30.0
        assert rc.init.kind is InitKind.PACKED
        assert rc.init.seed == 5
        assert rc.hp.epochs == 2 and rc.hp.horizon == 12
        assert rc.discovery.sigma_size == 3

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("swarm: {n: 2, wheels: 4}\n")
        with pytest.raises(ConfigError):
            load_run_config(str(path))

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_run_config("/nonexistent/config.yaml")

    def test_weight_overrides(self, tmp_path):
        path = tmp_path / "weights.yaml"
        path.write_text("swarm: {n: 3}\nreward: {weights: {w_close: 0.125}}\n")
        rc = load_run_config(str(path))
        assert rc.weights.w_close == 0.125
        assert rc.weights.w_neighbors == pytest.approx(1.0 / 6.0)


class TestTrainCommand:
    def test_writes_checkpoint_and_metrics(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--config", tiny_config, "--seed", "3",
                     "--out", str(out), "--quiet"])
        assert code == 0
        ckpt = load_checkpoint(out / "checkpoint.ckpt")
        assert ckpt.policy.act_dim == 4
        assert ckpt.value_net is not None
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,mean_return,mean_length,objective,value_loss"

    def test_same_seed_byte_identical_metrics(self, tiny_config, tmp_path):
        outs = []
        for name in ("one", "two"):
            out = tmp_path / name
            assert main(["train", "--config", tiny_config, "--seed", "11",
                         "--out", str(out), "--quiet"]) == 0
            outs.append((out / "metrics.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_missing_config_fails(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "nope.yaml"),
                     "--out", str(tmp_path / "o"), "--quiet"])
        assert code != 0
        assert "error" in capsys.readouterr().err

    def test_requires_config_or_experiment(self, tmp_path, capsys):
        code = main(["train", "--out", str(tmp_path / "o"), "--quiet"])
        assert code == 2
        assert "required" in capsys.readouterr().err


class TestDiscoverCommand:
    def test_tiny_discovery_outputs(self, tiny_config, tmp_path):
        out = tmp_path / "disc"
        code = main(["discover", "--config", tiny_config, "--seed", "7",
                     "--out", str(out), "--quiet"])
        assert code == 0
        verdict = json.loads((out / "verdict.json").read_text())
        assert verdict["valid"] is True
        for rep in verdict["episodes"]:
            assert rep["steps_total"] == rep["steps_base"] + rep["steps_aux"]
        assert (out / "chain" / "chain.json").exists()
        lines = (out / "trajectories.jsonl").read_text().splitlines()
        assert json.loads(lines[0])["type"] == "meta"
        assert (out / "metrics_run_0.csv").exists()

    def test_deterministic_outputs(self, tiny_config, tmp_path):
        blobs = []
        for name in ("p", "q"):
            out = tmp_path / name
            assert main(["discover", "--config", tiny_config, "--seed", "7",
                         "--out", str(out), "--quiet"]) == 0
            blobs.append(((out / "verdict.json").read_bytes(),
                          (out / "trajectories.jsonl").read_bytes()))
        assert blobs[0] == blobs[1]

    def test_unknown_experiment_exit_code(self, tmp_path, capsys):
        code = main(["discover", "--experiment", "Z",
                     "--out", str(tmp_path / "o"), "--quiet"])
        assert code == 2
        assert "unknown experiment" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_evaluates_saved_chain(self, tiny_config, tmp_path):
        out = tmp_path / "disc"
        assert main(["discover", "--config", tiny_config, "--seed", "7",
                     "--out", str(out), "--quiet"]) == 0
        out2 = tmp_path / "eval"
        code = main(["evaluate", "--config", tiny_config, "--seed", "9",
                     "--chain", str(out / "chain"), "--episodes", "2",
                     "--out", str(out2), "--quiet"])
        assert code == 0
        verdict = json.loads((out2 / "verdict.json").read_text())
        assert len(verdict["episodes"]) == 2

    def test_missing_chain(self, tiny_config, tmp_path, capsys):
        code = main(["evaluate", "--config", tiny_config,
                     "--chain", str(tmp_path / "nochain"),
                     "--out", str(tmp_path / "o"), "--quiet"])
        assert code == 2
        assert "no chain bundle" in capsys.readouterr().err


class TestBenchCommand:
    def test_zero_episodes_empty_table(self, tmp_path):
        out = tmp_path / "bench"
        code = main(["bench", "--experiment", "A", "--episodes", "0",
                     "--chains", str(tmp_path), "--out", str(out), "--quiet"])
        assert code == 0
        lines = (out / "bench.csv").read_text().splitlines()
        assert lines == ["experiment,seed,steps_base,steps_aux,steps_total,"
                         "success_rate,collisions"]

    def test_bench_with_prebuilt_chain(self, tmp_path):
        save_chain(str(tmp_path / "A" / "chain"), still_chain(6))
        out = tmp_path / "bench"
        code = main(["bench", "--experiment", "A", "--episodes", "3",
                     "--seed", "2", "--chains", str(tmp_path),
                     "--out", str(out), "--quiet"])
        assert code == 0
        lines = (out / "bench.csv").read_text().splitlines()
        assert len(lines) == 2
        row = lines[1].split(",")
        assert row[0] == "A"
        assert float(row[4]) == float(row[2]) + float(row[3])

    def test_missing_chain_fails(self, tmp_path, capsys):
        code = main(["bench", "--experiment", "B", "--episodes", "2",
                     "--chains", str(tmp_path), "--out", str(tmp_path / "o"),
                     "--quiet"])
        assert code == 2
        assert "no chain bundle" in capsys.readouterr().err


class TestRenderCommand:
    def write_tiny_trajectory(self, path, steps=1):
        rows = [{"type": "meta", "n": 2, "x_w": 20.0, "y_w": 20.0,
                 "r_bot": 1.0, "r_scan": 6.0, "mode": "predefined_point"},
                {"type": "step", "episode": 0, "step": 0, "phase": "init",
                 "positions": [[-3.0, 0.0], [3.0, 0.0]],
                 "action": None, "reward": None}]
        for s in range(1, steps + 1):
            rows.append({"type": "step", "episode": 0, "step": s, "phase": "base",
                         "positions": [[-3.0 + 0.1 * s, 0.0], [3.0 - 0.1 * s, 0.0]],
                         "action": [[0.1, 0.0], [-0.1, 0.0]], "reward": 0.01})
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")

    def test_one_step_trajectory_two_files(self, tmp_path):
        traj = tmp_path / "t.jsonl"
        self.write_tiny_trajectory(traj, steps=1)
        out = tmp_path / "svg"
        assert main(["render", "--trajectories", str(traj),
                     "--out", str(out), "--quiet"]) == 0
        files = sorted(os.listdir(out))
        assert files == ["base_final.svg", "initial.svg"]

    def test_robot_circle_count(self, tmp_path):
        traj = tmp_path / "t.jsonl"
        self.write_tiny_trajectory(traj, steps=2)
        out = tmp_path / "svg"
        main(["render", "--trajectories", str(traj), "--out", str(out), "--quiet"])
        svg = (out / "initial.svg").read_text()
        assert svg.count('fill="#d98032"') == 2

    def test_malformed_line_reports_number(self, tmp_path, capsys):
        traj = tmp_path / "bad.jsonl"
        traj.write_text('{"type": "meta", "n": 1, "x_w": 20.0, "y_w": 20.0, '
                        '"r_bot": 1.0, "r_scan": null, "mode": "x"}\n'
                        "this is not json\n")
        code = main(["render", "--trajectories", str(traj),
                     "--out", str(tmp_path / "o"), "--quiet"])
        assert code == 2
        assert "line 2" in capsys.readouterr().err

    def test_render_discovery_output(self, tiny_config, tmp_path):
        out = tmp_path / "disc"
        assert main(["discover", "--config", tiny_config, "--seed", "7",
                     "--out", str(out), "--quiet"]) == 0
        svg_out = tmp_path / "svg"
        assert main(["render", "--trajectories", str(out / "trajectories.jsonl"),
                     "--out", str(svg_out), "--scan-rings", "--shade", "0",
                     "--quiet"]) == 0
        assert (svg_out / "initial.svg").exists()


class TestEnvVarOverrides:
    def test_seed_from_environment(self, tiny_config, tmp_path, monkeypatch):
        monkeypatch.setenv("SWARMGATHER_SEED", "11")
        out_env = tmp_path / "env_seeded"
        assert main(["train", "--config", tiny_config,
                     "--out", str(out_env), "--quiet"]) == 0
        monkeypatch.delenv("SWARMGATHER_SEED")
        out_flag = tmp_path / "flag_seeded"
        assert main(["train", "--config", tiny_config, "--seed", "11",
                     "--out", str(out_flag), "--quiet"]) == 0
        assert (out_env / "metrics.csv").read_bytes() \
            == (out_flag / "metrics.csv").read_bytes()
