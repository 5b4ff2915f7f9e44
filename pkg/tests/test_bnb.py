import numpy as np
import pytest

from coupled360.bnb import (BnbConfig, BranchRule, NoFractionalVariable, Status, decomposed_downlink,
                            select_branch_variable, solve)
from coupled360.model import GopTimeline, QoEParams, QualityLadder, Selection, TileGrid, qoe_total
from coupled360.oracle import enumerate_optimal
from coupled360.problem import ProblemInstance, User, check_feasible

from instances import instance_batch, single_user


# -- branching rule -------------------------------------------------------------

def test_most_fractional_picks_closest_to_half():
    var, _ = select_branch_variable(np.array([1.0, 0.3, 0.5]), BnbConfig())
    assert var == 2


def test_most_fractional_ties_to_lowest_index():
    var, _ = select_branch_variable(np.array([0.4, 0.6, 0.4]), BnbConfig())
    assert var == 0


@pytest.mark.parametrize("value, first", [(0.3, 0), (0.7, 1)])
def test_epsilon_rule_direction(value, first):
    cfg = BnbConfig(rule=BranchRule.EPSILON_THRESHOLD, epsilon_branch=0.4)
    assert select_branch_variable(np.array([1.0, value, 0.5]), cfg) == (1, first)


def test_no_fractional_variable():
    with pytest.raises(NoFractionalVariable):
        select_branch_variable(np.array([0.0, 1.0]), BnbConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        BnbConfig(epsilon_branch=1.0)
    with pytest.raises(ValueError):
        BnbConfig(node_limit=0)
    with pytest.raises(ValueError):
        BnbConfig(gap_tol=-1)
    with pytest.raises(ValueError):
        BnbConfig(sub_node_limit=0)


def test_epsilon_drawn_once_from_seed():
    a, b = BnbConfig(seed=5), BnbConfig(seed=5)
    assert a.branch_epsilon() == b.branch_epsilon()
    assert 0 < a.branch_epsilon() < 1


# -- search ---------------------------------------------------------------------

def _two_by_two():
    users = (User(GopTimeline.uniform([1.3]), tiles=(0, 1)),)
    return ProblemInstance(2, QualityLadder([1.5, 3.0]), 4.5, TileGrid(4, 1), QualityLadder([0.6, 1.4]),
                           users, QoEParams(1.0, 1.0), dl_budget="aggregate")


def test_small_case_matches_oracle():
    inst = _two_by_two()
    oracle = enumerate_optimal(inst)
    assert oracle.evaluated == 16          # 2^2 uplink x 2^(2*1) downlink
    res = solve(inst)
    assert res.status is Status.OPTIMAL
    assert res.objective == pytest.approx(oracle.objective, abs=1e-9)
    assert check_feasible(inst, res.selection).feasible


def test_single_level_ladders():
    inst = single_user([1.0, 1.0], tiles=(0, 1), dl=(0.2,))
    res = solve(inst)
    assert res.status is Status.OPTIMAL and res.nodes_explored == 1
    assert res.selection == Selection((0,), (np.zeros((2, 2), dtype=int),))


def test_integral_root_finishes_at_root():
    # ample bandwidth, no penalties: the relaxation puts everything on the top level
    inst = single_user([100.0], tiles=(0, 1), alpha=0.0, beta=0.0)
    res = solve(inst)
    assert res.status is Status.OPTIMAL and res.nodes_explored == 1
    assert res.selection.downlink[0].tolist() == [[3], [3]]


def test_infeasible_instance():
    inst = single_user([0.1], tiles=(0, 1))
    res = solve(inst)
    assert res.status is Status.INFEASIBLE and res.selection is None


def test_negative_optimum_kept_and_literal_zero_bound_loses_it():
    # heavy stall: every choice stalls, so the best QoE is negative
    inst = single_user([0.1, 0.1], tiles=(0,), dl=(0.2, 0.6), alpha=5.0, budget="aggregate")
    inst = ProblemInstance(inst.cameras, inst.ul_ladder, inst.ul_bandwidth, inst.grid, inst.dl_ladder,
                           (User(GopTimeline.uniform([0.1, 0.3]), tiles=(0,)),), inst.qoe)
    oracle = enumerate_optimal(inst)
    assert oracle.objective < 0
    res = solve(inst)
    assert res.objective == pytest.approx(oracle.objective, abs=1e-9)
    literal = solve(inst, BnbConfig(literal_initial_bound=True))
    assert literal.selection is None or literal.objective >= 0


@pytest.mark.parametrize("config", [
    BnbConfig(),
    BnbConfig(rule=BranchRule.EPSILON_THRESHOLD, seed=3),
    BnbConfig(uplink_first=False, decompose=False),
    BnbConfig(rounding=False),
])
def test_matches_oracle_on_random_instances(config):
    for inst in instance_batch(101, 20):
        oracle = enumerate_optimal(inst)
        res = solve(inst, config)
        if not oracle.feasible:
            assert res.status is Status.INFEASIBLE
            continue
        assert res.status is Status.OPTIMAL
        assert res.objective == pytest.approx(oracle.objective, abs=1e-9)
        assert qoe_total(inst, res.selection) == pytest.approx(res.objective, abs=1e-12)
        assert check_feasible(inst, res.selection).feasible


def test_bound_sandwich_and_monotone_history():
    for inst in instance_batch(202, 15):
        res = solve(inst)
        if res.selection is None:
            continue
        lows = [h[0] for h in res.history]
        ups = [h[1] for h in res.history]
        assert all(b >= a for a, b in zip(lows, lows[1:]))
        assert all(b <= a + 1e-9 for a, b in zip(ups, ups[1:]))
        assert res.lower <= res.objective <= res.upper + 1e-12
        assert res.objective <= res.root_bound + 1e-9


def test_trace_records():
    for inst in instance_batch(7, 20):
        records = []
        res = solve(inst, trace_fn=records.append)
        if res.nodes_explored > 3:
            break
    assert any(r["action"] == "branch" for r in records)
    assert {r["action"] for r in records} <= {"branch", "prune", "incumbent", "leaf", "infeasible"}
    assert all({"fixings", "bound", "L", "U"} <= set(r) for r in records)


def test_deterministic():
    inst = instance_batch(8, 1)[0]
    a, b = solve(inst, BnbConfig(seed=1)), solve(inst, BnbConfig(seed=1))
    assert a.to_dict() == b.to_dict() and a.history == b.history


def test_node_limit_status():
    rng_insts = instance_batch(9, 30)
    limited = [solve(i, BnbConfig(node_limit=1)) for i in rng_insts]
    assert any(r.status is Status.NODE_LIMIT for r in limited)
    for r in limited:
        if r.selection is not None:
            assert r.lower <= r.upper


def test_incumbent_seed_never_hurts():
    for inst in instance_batch(10, 10):
        oracle = enumerate_optimal(inst)
        if not oracle.feasible:
            continue
        res = solve(inst, BnbConfig(node_limit=1), incumbent=oracle.selection)
        assert res.objective >= oracle.objective - 1e-12


def test_decomposed_downlink_matches_fixed_uplink_oracle():
    for inst in instance_batch(11, 10):
        oracle = enumerate_optimal(inst)
        if not oracle.feasible:
            continue
        ul = oracle.selection.uplink
        res = decomposed_downlink(inst, ul, BnbConfig())
        assert res.objective == pytest.approx(oracle.objective, abs=1e-9)
        other = tuple((u + 1) % len(inst.ul_ladder) for u in ul)
        if other != ul:
            with pytest.raises(ValueError):
                decomposed_downlink(inst, ul, BnbConfig(),
                                    incumbent=Selection(other, oracle.selection.downlink))


def test_bandwidth_monotonicity_small():
    for inst in instance_batch(12, 8):
        base = enumerate_optimal(inst)
        for f_ul, f_dl in ((2.0, 1.0), (1.0, 2.0)):
            wider = inst.with_bandwidth(f_ul, f_dl)
            o = enumerate_optimal(wider)
            if base.feasible:
                assert o.objective >= base.objective - 1e-12
            r = solve(wider)
            if o.feasible:
                assert r.objective == pytest.approx(o.objective, abs=1e-9)
