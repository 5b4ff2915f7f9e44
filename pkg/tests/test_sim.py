import json
from pathlib import Path

import numpy as np
import pytest

from coupled360.model import FovWindow, TileGrid, fov_tiles
from coupled360.problem import ConfigError
from coupled360.sim import (ExperimentConfig, PredictionModel, TraceSpec, predict_trace, run_experiment,
                            sample_fov)

from geometry_oracle import random_lattice_fov, sampled_tiles

DATA = Path(__file__).resolve().parents[1] / "src" / "coupled360" / "data"
GRID = TileGrid(4, 4)


class _FixedNormal:
    def __init__(self, value):
        self.value = value

    def standard_normal(self, shape):
        return np.full(shape, float(self.value))


# -- FOV ------------------------------------------------------------------------

def test_sample_fov_deterministic():
    a = [sample_fov(np.random.default_rng(3)) for _ in range(2)]
    assert a[0] == a[1]


def test_sample_fov_yaw_is_uniform():
    rng = np.random.default_rng(0)
    yaws = np.array([sample_fov(rng).yaw_center for _ in range(10_000)])
    assert abs(yaws.mean() - 180.0) <= 360 * 0.02


def test_full_height_fov_has_zero_pitch():
    fov = sample_fov(np.random.default_rng(1), GRID, 120.0, 180.0)
    assert fov.pitch_center == 0.0


def test_fov_tiles_reference_window():
    tiles = fov_tiles(FovWindow(45.0, 0.0, 120.0, 90.0), GRID)
    assert tiles == (4, 5, 7, 8, 9, 11)           # columns {3, 0, 1} x rows {1, 2}


def test_fov_tiles_full_sphere_and_single_tile():
    assert len(fov_tiles(FovWindow(0.0, 0.0, 360.0, 180.0), GRID)) == 16
    assert fov_tiles(FovWindow(45.0, 67.5, 90.0, 45.0), GRID) == (0,)


def test_edge_contact_does_not_count():
    # window [0, 90] x [0, 45]: touches column 1 and row 2 only along edges
    assert fov_tiles(FovWindow(45.0, 22.5, 90.0, 45.0), GRID) == (4,)


@pytest.mark.parametrize("grid", [TileGrid(4, 4), TileGrid(6, 3), TileGrid(8, 2)])
def test_fov_tiles_match_lattice_oracle(grid):
    rng = np.random.default_rng(grid.columns)
    for _ in range(150):
        yaw, pitch, w, h = random_lattice_fov(rng)
        got = set(fov_tiles(FovWindow(yaw, pitch, w, h), grid))
        assert got == sampled_tiles(yaw, pitch, w, h, grid.columns, grid.rows), (yaw, pitch, w, h)


# -- prediction -----------------------------------------------------------------

def test_zero_noise_is_identity():
    b = np.array([1.0, 2.5, 0.0 + 7.0])
    assert np.array_equal(predict_trace(b, PredictionModel(0.0)), b)


def test_relative_noise_values():
    model = PredictionModel(0.3)
    assert predict_trace([10.0], model, _FixedNormal(1.0))[0] == pytest.approx(13.0)
    assert predict_trace([10.0], model, _FixedNormal(-4.0))[0] == 0.01


def test_absolute_noise_mode():
    model = PredictionModel(0.5, mode="absolute")
    assert predict_trace([2.0], model, _FixedNormal(1.0))[0] == pytest.approx(2.5)


def test_prediction_model_validation():
    with pytest.raises(ValueError):
        PredictionModel(-0.1)
    with pytest.raises(ValueError):
        PredictionModel(0.1, floor=0.0)
    with pytest.raises(ValueError):
        predict_trace([-1.0], PredictionModel())


def test_prediction_seeded():
    b = np.linspace(1, 5, 20)
    assert np.array_equal(predict_trace(b, PredictionModel(seed=4)), predict_trace(b, PredictionModel(seed=4)))


# -- experiment driver ----------------------------------------------------------

def _small(**kw):
    base = json.loads((DATA / "default_experiment.json").read_text())
    base.update(users=2, gops=2, noise_seeds=2, node_limit=10, sub_node_limit=2)
    base.update(kw)
    return ExperimentConfig.from_dict(base, base_dir=DATA)


def test_no_users_gives_zero_totals():
    report = run_experiment(_small(users=0))
    assert report.rows and all(r["total_qoe"] == 0.0 for r in report.rows)


def test_knowledge_filter():
    report = run_experiment(_small(knowledge=["perfect"], traces=[
        {"name": "car", "path": "traces/car.log", "format": {"preset": "lte_log"}}]))
    assert {r["knowledge"] for r in report.rows} == {"perfect"}
    assert len(report.rows) == 3


def test_run_is_deterministic_and_rows_recombine():
    cfg = _small(traces=[{"name": "bus", "path": "traces/bus.log", "format": {"preset": "lte_log"}}])
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert a.to_json() == b.to_json()
    for r in a.rows:
        if r["total_qoe"] is not None:
            assert r["total_qoe"] == pytest.approx(r["quality"] - cfg.alpha * r["stall_s"] - cfg.beta * r["switch"])


def test_workers_do_not_change_the_report():
    cfg = _small(traces=[{"name": "bus", "path": "traces/bus.log", "format": {"preset": "lte_log"}}],
                 noise_seeds=1)
    assert run_experiment(cfg).to_json() == run_experiment(cfg, workers=2).to_json()


def test_on_row_callback_streams_rows():
    seen = []
    report = run_experiment(_small(users=1, knowledge=["perfect"]), on_row=seen.append)
    assert seen == report.rows


def test_missing_trace_file(tmp_path):
    cfg = ExperimentConfig.from_dict({"traces": [{"path": "nope.log"}]}, base_dir=tmp_path)
    with pytest.raises(FileNotFoundError):
        run_experiment(cfg)


def test_config_round_trip():
    cfg = _small()
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("patch, field", [
    ({"gops": 0}, "gops"),
    ({"users": 1.5}, "users"),
    ({"algorithms": ["magic"]}, "algorithms"),
    ({"knowledge": ["psychic"]}, "knowledge"),
    ({"coupling": "none"}, "coupling"),
    ({"user_scale": [0.0, 1.0]}, "user_scale"),
    ({"bogus": 1}, "bogus"),
    ({"warm_start": "yes"}, "warm_start"),
])
def test_config_errors_name_the_field(patch, field):
    data = {"traces": [{"path": "x.log"}], **patch}
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(data)
    assert err.value.path == field


def test_trace_entry_needs_path():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"traces": [{"name": "a"}]})
    assert err.value.path == "traces[0].path"


def test_trace_spec_name_defaults_to_stem():
    cfg = ExperimentConfig.from_dict({"traces": [{"path": "dir/car.log"}]})
    assert cfg.traces == (TraceSpec("car", "dir/car.log", {}),)
