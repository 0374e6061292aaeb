import csv
import json
from pathlib import Path

import numpy as np
import pytest

from ube import AgentSpec, ExperimentConfig, emit_plot_data, run_experiment
from ube.bench import RECORD_HEADER

CONFIGS = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.json"))


def small_config(**changes):
    doc = {
        "name": "tiny",
        "env": {"kind": "two_path", "H": 3},
        "agents": [{"variant": "ube_exact"}, {"variant": "count_bonus", "beta": 0.1}],
        "episodes": 15,
        "seeds": [3, 1, 2],
    }
    doc.update(changes)
    return ExperimentConfig.from_dict(doc)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    config = ExperimentConfig.from_file(path)
    assert config.episodes >= 1 and config.seeds


def test_fig2_config_matches_the_experiment():
    config = ExperimentConfig.from_file(next(p for p in CONFIGS if p.name == "fig2.json"))
    assert config.env == {"kind": "two_path", "H": 10, "sigma": 1.0, "mu1": 1.0, "mu2": 0.0}
    assert len(config.seeds) == 500 and config.episodes == 1000
    assert [a.variant for a in config.agents] == ["ube_exact", "count_bonus"]
    assert all(v > 0 for v in config.sweep.values)
    assert not set(config.sweep.seeds) & set(config.seeds)


@pytest.mark.parametrize("changes", [
    {"episodes": 0},
    {"seeds": []},
    {"seeds": [1, 1]},
    {"env": {"kind": "maze"}},
    {"env": {"kind": "two_path", "H": 0}},
    {"agents": []},
    {"agents": [{"variant": "ube_exact"}, {"variant": "ube_exact"}]},
    {"sweep": {"agent": "ghost", "param": "beta", "values": [1.0], "seeds": [0]}},
    {"sweep": {"agent": "count_bonus", "param": "beta", "values": [-1.0], "seeds": [0]}},
    {"colour": "red"},
])
def test_invalid_configs_are_rejected(changes):
    with pytest.raises((ValueError, TypeError)):
        small_config(**changes)


def test_single_run_single_episode():
    config = small_config(agents=[{"variant": "ube_exact"}], seeds=[0], episodes=1)
    results = run_experiment(config)
    assert results.regret["ube_exact"].shape == (1, 1)


def test_aggregates_are_recomputed_from_raw_records(tmp_path):
    results = run_experiment(small_config())
    files = emit_plot_data(results, tmp_path, small_config())
    results.write_records(tmp_path / "raw" / "records.csv")
    assert sorted(p.name for p in files) == ["count_bonus.csv", "manifest.json", "ube_exact.csv"]
    with open(tmp_path / "raw" / "records.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == RECORD_HEADER
    for agent in results.agents:
        with open(tmp_path / f"{agent}.csv") as fh:
            plot = list(csv.DictReader(fh))
        assert len(plot) == 15
        mine = [r for r in rows if r["variant"] == agent]
        for t in (1, 7, 15):
            per_seed = [float(r["cumulative_regret"]) for r in mine if int(r["episode"]) == t]
            assert len(per_seed) == 3
            assert float(plot[t - 1]["mean_cumulative_regret"]) == pytest.approx(np.mean(per_seed), abs=1e-9)
            se = np.std(per_seed, ddof=1) / np.sqrt(3)
            assert float(plot[t - 1]["std_error"]) == pytest.approx(se, abs=1e-9)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seeds"] == [3, 1, 2]
    assert manifest["config_sha256"] == small_config().sha256()
    assert "git_revision" in manifest


def test_reruns_are_byte_identical_for_any_worker_count(tmp_path):
    config = small_config()
    for name, workers in (("a", 1), ("b", 1), ("c", 2)):
        results = run_experiment(config, workers=workers)
        emit_plot_data(results, tmp_path / name, config)
        results.write_records(tmp_path / name / "records.csv")
    for f in ("ube_exact.csv", "count_bonus.csv", "records.csv", "manifest.json"):
        ref = (tmp_path / "a" / f).read_bytes()
        assert (tmp_path / "b" / f).read_bytes() == ref
        assert (tmp_path / "c" / f).read_bytes() == ref


def test_sweep_picks_the_lowest_final_regret():
    config = small_config(sweep={"agent": "count_bonus", "param": "beta", "values": [0.05, 3.0],
                                 "seeds": [10, 11]})
    results = run_experiment(config)
    sw = results.sweep
    assert sw["chosen"] == sw["values"][int(np.argmin(sw["final_mean_regret"]))]
    assert len(sw["final_mean_regret"]) == 2


def test_realized_regret_flag():
    config = small_config(realized_regret=True, agents=[{"variant": "ube_exact"}])
    results = run_experiment(config)
    np.testing.assert_allclose(results.regret["ube_exact"],
                               1.0 - results.realized_returns["ube_exact"], atol=1e-12)


def test_seed_shift():
    config = small_config().shifted(100)
    assert config.seeds == (103, 101, 102)


def test_round_trip_through_dict():
    config = small_config(sweep={"agent": "count_bonus", "param": "beta", "values": [0.1],
                                 "seeds": {"start": 5, "count": 2}})
    again = ExperimentConfig.from_dict(config.to_dict())
    assert again == config and again.sha256() == config.sha256()
    assert again.agents[0] == AgentSpec("ube_exact")
