import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ctvf import cli
from ctvf.config import ValidationError, load_config, parse_config, with_overrides
from ctvf.experiments import (
    DATA_STREAM,
    Scaling,
    collect_episodes,
    fit_value,
    initial_policy,
    make_env,
    mean_duration,
    run_policy_evaluation,
    run_rl_loop,
)
from ctvf.numeric import NotSpd

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def _small(name, **kw):
    cfg = load_config(CONFIGS / f"{name}.cfg")
    return with_overrides(cfg, **kw)


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def _data(cfg):
    env = make_env(cfg)
    return env, collect_episodes(cfg, env, initial_policy(cfg), 2, DATA_STREAM)


def test_ct_fit_ignores_dt_metadata():
    cfg = _small("mountain_car_ctgp", episodes_per_phase=2)
    env, trajs = _data(cfg)
    sc = Scaling.for_env(env)
    a = fit_value(cfg, env, initial_policy(cfg), trajs, sc)
    b = fit_value(with_overrides(cfg, time_interval=20.0), env, initial_policy(cfg), [t.with_dt(20.0) for t in trajs], sc)
    Q = np.array([[-0.5, 0.0], [0.2, 0.03]])
    assert np.array_equal(a.value(Q)[0], b.value(Q)[0])


def test_dt_fit_depends_on_interval():
    cfg1 = _small("mountain_car_gptd_dt1", episodes_per_phase=2)
    cfg20 = _small("mountain_car_gptd_dt20", episodes_per_phase=2)
    env, trajs = _data(cfg1)
    sc = Scaling.for_env(env)
    Q = np.array([[-0.5, 0.0], [0.2, 0.03]])
    a = fit_value(cfg1, env, initial_policy(cfg1), trajs, sc).value(Q)[0]
    b = fit_value(cfg20, env, initial_policy(cfg20), trajs, sc).value(Q)[0]
    assert np.max(np.abs(a - b)) > 1e-3


def test_zero_length_episode_rejected():
    with pytest.raises(ValidationError):
        parse_config("seed = 0\nepisode_horizon = 0\n")


def test_rl_loop_without_updates(tmp_path):
    cfg = _small("pendulum_ctgp", policy_updates=0)
    history = run_rl_loop(cfg, tmp_path)
    assert len(history) == 1 and len(history[0]) == cfg.episodes_per_phase
    assert 0 < mean_duration(history[0]) <= 10.0


@pytest.mark.parametrize("name", ["mountain_car_ctgp", "mountain_car_ctkf", "mountain_car_gptd_dt1", "mountain_car_dtkf_dt20"])
def test_policy_evaluation_artifacts(tmp_path, name):
    cfg = _small(name, episodes_per_phase=2, grid_resolution=6)
    res = run_policy_evaluation(cfg, tmp_path)
    grid = _rows(tmp_path / "value_grid.csv")
    assert grid[0] == ["x1", "x2", "mean", "variance"] and len(grid) == 37
    metrics = _rows(tmp_path / "metrics.csv")
    assert metrics[0][:7] == ["phase", "update", "episode", "policy", "cumulative_cost", "violations", "duration"]
    upd = [r for r in res.records if r.phase == "updated"]
    assert len(upd) == 2 and sum(r.violations for r in upd) == 0
    assert "energy pumping" in (tmp_path / "provenance.txt").read_text()
    for e, tr in enumerate(res.data):
        assert res.records[e].cumulative_cost == pytest.approx(float(np.sum(tr.cost[:-1])) * cfg.control_cycle)
    assert all(r.barrier_activations >= 0 and r.infeasible_events == 0 for r in upd)


def test_in_process_determinism(tmp_path):
    cfg = _small("mountain_car_dtkf_dt1", episodes_per_phase=2, grid_resolution=5)
    run_policy_evaluation(cfg, tmp_path / "a")
    run_policy_evaluation(cfg, tmp_path / "b")
    for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def _cfg_file(tmp_path, name, **kw):
    text = (CONFIGS / f"{name}.cfg").read_text()
    text += "".join(f"{k} = {v}\n" for k, v in kw.items())
    path = tmp_path / "run.cfg"
    path.write_text(text.replace("episodes_per_phase = 5\n", "").replace("grid_resolution = 50\n", ""))
    return path


def test_cli_eval_and_grid(tmp_path, capsys):
    path = _cfg_file(tmp_path, "mountain_car_ctgp", episodes_per_phase=2, grid_resolution=7)
    out = tmp_path / "out"
    assert cli.main(["eval", "--config", str(path), "--out", str(out)]) == 0
    assert "violations 0" in capsys.readouterr().out
    regrid = tmp_path / "regrid"
    code = cli.main(["grid", "--config", str(path), "--out", str(regrid), "--dictionary", str(out / "dictionary.json")])
    assert code == 0
    a = np.loadtxt(out / "value_grid.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(regrid / "value_grid_mean.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(a[:, :3], b[:, :3])


def test_cli_validation_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed = 0\nunknown_key = 1\n")
    assert cli.main(["eval", "--config", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert cli.main(["eval", "--config", str(tmp_path / "missing.cfg")]) == 1
    neg = tmp_path / "neg.cfg"
    neg.write_text("seed = 0\nkernel_sigma = -1\n")
    assert cli.main(["check", "--config", str(neg)]) == 1


def test_cli_numeric_exit_code(tmp_path, monkeypatch):
    import ctvf.experiments

    def boom(cfg):
        raise NotSpd("pivot <= 0 after jitter")

    monkeypatch.setattr(ctvf.experiments, "run_policy_evaluation", boom)
    assert cli.main(["eval", "--config", str(CONFIGS / "mountain_car_ctgp.cfg"), "--out", str(tmp_path)]) == 2


def test_cli_check_subprocess():
    r = subprocess.run([sys.executable, "-m", "ctvf", "check"], capture_output=True, text=True, cwd=ROOT)
    assert r.returncode == 0
    lines = r.stdout.strip().splitlines()
    assert len(lines) == 7 and all(line.startswith("PASS") for line in lines)
