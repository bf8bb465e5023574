import json
import os
from dataclasses import replace

import numpy as np
import pytest

from robustgp import ConfigError, NumericalError
from robustgp.bench import (Scenario, StageError, bundled_scenarios, emit_plot_data,
                            exit_code_for, normalized_rmse, parse_index_set, parse_lags,
                            resolve_scenario, run_scenario, score_identification, stage)


def test_nrmse_of_a_perfect_estimate_is_zero():
    assert normalized_rmse([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]) == 0.0


def test_nrmse_hand_value():
    # rmse 0.5 over a range of 1
    assert normalized_rmse([0.5, 0.5], [0.0, 1.0]) == pytest.approx(0.5)


def test_nrmse_is_scale_invariant():
    rng = np.random.default_rng(0)
    a, e = rng.standard_normal(50), rng.standard_normal(50)
    assert normalized_rmse(7.5 * e, 7.5 * a) == pytest.approx(normalized_rmse(e, a))


def test_nrmse_rejects_constant_truth_and_length_mismatch():
    with pytest.raises(ConfigError, match="constant"):
        normalized_rmse([1.0, 2.0], [3.0, 3.0])
    with pytest.raises(ConfigError, match="length"):
        normalized_rmse([1.0], [1.0, 2.0])


def test_identification_scores():
    assert score_identification([3, 1], [1, 3]) == {
        "precision": 1.0, "recall": 1.0, "exact_match": True, "flagged": [1, 3], "truth": [1, 3]}
    s = score_identification([], [2])
    assert s["precision"] == 1.0 and s["recall"] == 0.0
    s = score_identification([1, 2], [2, 3])
    assert s["precision"] == 0.5 and s["recall"] == 0.5 and not s["exact_match"]


def test_random_index_set_is_seeded_and_sorted():
    a = parse_index_set("random:5@3", range(22))
    assert a.tolist() == sorted(a.tolist()) and a.size == 5
    np.testing.assert_array_equal(a, parse_index_set("random:5@3", range(22)))
    assert parse_index_set([4, 1], range(6)).tolist() == [4, 1]


@pytest.mark.parametrize("spec", ["random:0@1", "random:9@1", "pick:2@1", "random:2", [7]])
def test_bad_index_sets(spec):
    with pytest.raises(ConfigError):
        parse_index_set(spec, range(6))


def test_lag_grid_from_range_and_list():
    assert parse_lags({"start": 0, "stop": 0.3, "step": 0.1}) == (0.0, 0.1, 0.2, 0.3)
    assert parse_lags([0, 0.132, 0.264]) == (0.0, 0.132, 0.264)
    assert len(parse_lags({"start": 0, "stop": 3, "step": 0.1})) == 31


def test_scenario_needs_exactly_one_grid_source():
    with pytest.raises(ConfigError):
        Scenario.from_dict({"simulation": {}})
    with pytest.raises(ConfigError):
        Scenario.from_dict({"simulation": {}, "case": "case30", "model_path": "m.json"})
    with pytest.raises(ConfigError, match="unknown"):
        Scenario.from_dict({"simulation": {}, "case": "case30", "colour": 1})


def test_with_seed_offsets_every_seed():
    sc = resolve_scenario("case300_fdi").with_seed(2)
    assert sc.simulation["seed"] == 2
    assert sc.corruption["seed"] == 102
    assert sc.corruption["target_meters"] == "random:5@2"


def test_unknown_scenario_name():
    with pytest.raises(ConfigError, match="bundled"):
        resolve_scenario("no_such_case")


def test_bundled_suite_is_complete():
    assert set(bundled_scenarios()) >= {"case30_clean", "case30_fdi", "case30_gross",
                                        "case300_fdi", "case300_drift", "case1354_cluster",
                                        "case30_240hz"}


def test_drift_scenario_uses_seven_lags_and_100ms_per_s():
    sc = resolve_scenario("case300_drift")
    assert len(parse_lags(sc.learning["lags"])) == 7
    assert sc.corruption["parameters"]["rate"] == 0.1


def test_exit_codes():
    assert exit_code_for(ConfigError("x")) == 2
    assert exit_code_for(NumericalError("x")) == 3
    assert exit_code_for(np.linalg.LinAlgError("x")) == 3
    assert exit_code_for(OSError("x")) == 4
    assert exit_code_for(StageError("fit", NumericalError("x"))) == 3


def test_stage_wraps_errors_with_its_name():
    with pytest.raises(StageError, match=r"\[fit\]"):
        with stage("fit"):
            raise NumericalError("singular")


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    sc = replace(resolve_scenario("smoke"), outputs=str(out))
    return run_scenario(sc), out


def test_smoke_run_writes_every_artifact(smoke):
    _, out = smoke
    for name in ("observed.csv", "labels.json", "A_l1.csv", "A_l2.csv", "fit_l1.txt",
                 "identification.txt", "scores.json", "clusters.csv"):
        assert (out / name).exists(), name
    scores = json.loads((out / "scores.json").read_text())
    assert scores["identification"]["truth"] == [1]


def test_plot_data_formats(smoke, tmp_path):
    result, _ = smoke
    paths = emit_plot_data(result, str(tmp_path))
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["residual_l1.csv", "residual_l2.csv", "timing.csv", "trajectory_g6.csv"]
    traj = (tmp_path / "trajectory_g6.csv").read_text().splitlines()
    assert traj[0] == "time,actual,predicted_l2,predicted_l1_masked"
    assert len(traj) == 1 + result.span[1]
    timing = [l.split(",")[0] for l in (tmp_path / "timing.csv").read_text().splitlines()]
    assert timing == ["method", "full", "dimension_reduced", "dimension_reduced+aggregate"]
    grid = (tmp_path / "residual_l1.csv").read_text().splitlines()
    assert grid[0] == "meter,g1,g2,g3,g4,g5"
    assert [l.split(",")[0] for l in grid[1:]] == ["g1", "g2", "g3", "g4", "g5"]


def test_smoke_scores_are_consistent(smoke):
    result, _ = smoke
    s = result.scores
    assert s["sigma11_max_reduced"] < s["sigma11_full"]
    assert len(s["nrmse_l1_masked"]) == len(result.targets)
    assert 0.0 <= s["residual_share_l1"] <= 1.0


def test_240hz_scenario_runs_end_to_end():
    sc = resolve_scenario("case30_240hz")
    result = run_scenario(sc, write=False)
    assert result.observed.reporting_rate == 240
    assert result.observed.T == 2400
    assert np.all(np.isfinite(result.predictions["predicted_l1_masked"]))


def test_clean_scenario_flags_nothing():
    sc = replace(resolve_scenario("smoke"), corruption=None, clustering=None)
    result = run_scenario(sc, write=False)
    assert result.weights.flagged.size == 0
    assert result.labels.size == 0
