import numpy as np
import pytest

from coupled360.model import GopTimeline, QoEParams, QualityLadder, Selection, TileGrid
from coupled360.problem import (ConfigError, CouplingMode, ProblemInstance, User, check_feasible,
                                coupling_cap, max_admissible_level, tile_camera_map)

from instances import instance_batch, single_user


def _six_camera_grid(coupling="per_gop_bitrate", ul_bw=12.0):
    users = (User(GopTimeline.uniform([5.0, 5.0]), tiles=(0, 1, 5)),)
    return ProblemInstance(6, QualityLadder([1.5, 2.0, 2.5, 3.0]), ul_bw, TileGrid(4, 4),
                           QualityLadder([0.2, 0.6, 1.0, 1.4]), users, coupling=coupling)


def test_tile_camera_map_six_cameras():
    mapping = tile_camera_map(TileGrid(4, 4), 6)
    assert mapping[:4] == (1, 2, 4, 5)
    assert all(mapping[t] == mapping[t % 4] for t in range(16))


def test_tile_camera_map_single_camera():
    assert set(tile_camera_map(TileGrid(4, 4), 1)) == {0}


def test_tile_camera_map_one_column_per_camera():
    # column c spans [c, c+1) sectors, so its centre is equidistant from cameras c and c+1;
    # ties go to the lower index, which gives the identity except where the last column wraps
    for c in (2, 4, 8):
        assert tile_camera_map(TileGrid(c, 1), c) == tuple(range(c - 1)) + (0,)


def test_tile_camera_map_exact_alignment():
    # one column spanning the whole circle has its centre at 180 = camera 1 of 2
    assert tile_camera_map(TileGrid(1, 1), 2) == (1,)
    with pytest.raises(ValueError):
        tile_camera_map(TileGrid(4, 4), 0)


def test_coupling_cap_per_gop_bitrate():
    inst = _six_camera_grid()
    tile = 0                                   # camera 1
    ul = [0, 3, 0, 0, 0, 0]
    assert coupling_cap(inst, ul, tile) == pytest.approx(1.125)
    assert max_admissible_level(inst, ul, tile) == 2       # 1.0 Mbps
    ul = [0, 0, 0, 0, 0, 0]
    assert coupling_cap(inst, ul, tile) == pytest.approx(0.5625)
    assert max_admissible_level(inst, ul, tile) == 0


def test_coupling_cap_level_index():
    inst = _six_camera_grid("level_index")
    assert coupling_cap(inst, [0] * 6, 0) == 0
    caps = [coupling_cap(inst, [0, lvl, 0, 0, 0, 0], 0) for lvl in range(4)]
    assert caps == sorted(caps)


def test_coupling_cap_literal_aggregate():
    inst = _six_camera_grid("literal_aggregate")
    assert coupling_cap(inst, [0, 3, 0, 0, 0, 0], 0) == pytest.approx(3.0 / 16)


def test_coupling_cap_unknown_tile():
    with pytest.raises(IndexError):
        coupling_cap(_six_camera_grid(), [0] * 6, 16)


def test_uplink_violation_reported_with_slack():
    inst = ProblemInstance(2, QualityLadder([1.5, 3.0]), 5.0, TileGrid(4, 1), QualityLadder([0.2]),
                           (User(GopTimeline.uniform([1.0]), tiles=(0,)),))
    rep = check_feasible(inst, Selection((1, 1), (np.zeros((1, 1), dtype=int),)))
    assert not rep.feasible
    assert not rep.checks["uplink_budget"].passed
    assert rep.checks["uplink_budget"].min_slack == pytest.approx(-1.0)


def test_lowest_selection_with_generous_budgets_feasible():
    inst = _six_camera_grid(ul_bw=1000.0)
    inst = inst.with_bandwidth(dl_factor=100.0)
    sel = Selection((0,) * 6, (np.zeros((3, 2), dtype=int),))
    assert check_feasible(inst, sel).feasible


def test_coupling_violation_lists_tile_and_gop():
    inst = _six_camera_grid()
    levels = np.zeros((3, 2), dtype=int)
    levels[0, 1] = 3                                      # 1.4 > 0.5625
    rep = check_feasible(inst, Selection((0,) * 6, (levels,)))
    viol = rep.checks["coupling"].violations
    assert not rep.feasible and viol == [{"user": 0, "tile": 0, "gop": 1, "slack": pytest.approx(0.5625 - 1.4)}]


def test_downlink_budget_modes():
    inst = single_user([1.0, 0.2], tiles=(0,), budget="aggregate")
    sel = Selection((0,), (np.array([[2, 0]]),))          # 1.0 + 0.2 = 1.2 total
    assert check_feasible(inst, sel).feasible
    per_gop = single_user([1.0, 0.1], tiles=(0,), budget="per_gop")
    rep = check_feasible(per_gop, sel)
    assert not rep.feasible and rep.checks["downlink_budget"].violations[0]["gop"] == 1


def test_tightening_bandwidth_never_helps():
    rng = np.random.default_rng(11)
    for inst in instance_batch(12, 40):
        ul = tuple(int(rng.integers(len(inst.ul_ladder))) for _ in range(inst.cameras))
        dl = tuple(rng.integers(0, len(inst.dl_ladder), size=(len(u.tiles), inst.gops))
                   for u in inst.users)
        sel = Selection(ul, dl)
        if not check_feasible(inst, sel).feasible:
            for f_ul, f_dl in ((0.7, 1.0), (1.0, 0.7), (0.5, 0.5)):
                assert not check_feasible(inst.with_bandwidth(f_ul, f_dl), sel).feasible


def test_instance_validation():
    with pytest.raises(ValueError):
        ProblemInstance(0, QualityLadder([1.0]), 1.0, TileGrid(4, 4), QualityLadder([0.2]), ())
    with pytest.raises(ValueError):
        ProblemInstance(1, QualityLadder([1.0]), 0.0, TileGrid(4, 4), QualityLadder([0.2]), ())
    with pytest.raises(ValueError):
        ProblemInstance(2, QualityLadder([1.0]), 1.0, TileGrid(4, 1), QualityLadder([0.2]), (),
                        tile_camera=(0, 1, 2, 0))
    mixed = (User(GopTimeline.uniform([1.0]), tiles=(0,)), User(GopTimeline.uniform([1.0, 1.0]), tiles=(0,)))
    with pytest.raises(ValueError):
        ProblemInstance(1, QualityLadder([1.0]), 1.0, TileGrid(4, 4), QualityLadder([0.2]), mixed)


def test_config_roundtrip():
    for inst in instance_batch(2, 10):
        again = ProblemInstance.from_dict(inst.to_dict())
        assert again.to_dict() == inst.to_dict()


def test_config_errors_carry_field_path():
    doc = _six_camera_grid().to_dict()
    del doc["ul_bandwidth_mbps"]
    with pytest.raises(ConfigError, match="ul_bandwidth_mbps"):
        ProblemInstance.from_dict(doc)
    doc = _six_camera_grid().to_dict()
    del doc["users"][0]["dl_bandwidth_mbps"]
    with pytest.raises(ConfigError, match=r"users\[0\].dl_bandwidth_mbps"):
        ProblemInstance.from_dict(doc)
    doc = _six_camera_grid().to_dict()
    doc["coupling"] = "bogus"
    with pytest.raises(ConfigError, match="coupling"):
        ProblemInstance.from_dict(doc)


def test_coupling_enum_values():
    assert {m.value for m in CouplingMode} == {"per_gop_bitrate", "literal_aggregate", "level_index"}
    assert QoEParams().alpha == 1.0 and QoEParams().beta == 1.0
