import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from poplabel import build, run
from poplabel.labeling import pool_map
from poplabel.markov import expected_hitting_time
from poplabel.primitives import broadcast_protocol
from poplabel.verify import (
    MonitorFailure, PoolMonitor, SafetyLedger, SafetyMonitor, birthday_duplicate_probability,
    bounds_from_stats, broadcast_expectation, check_bounds, check_distinct, check_validity,
    dispenser_expectation, harmonic, observe, pool_bound, silent_safe_interaction_bound,
    state_lower_bound,
)


def test_validity_examples():
    assert check_validity([1, 2, 3, 4], 4).ok
    v = check_validity([1, 1, 3, 4], 4)
    assert v.status == "duplicate" and v.witness == (1,) and str(v) == "duplicate(1)"
    assert check_validity([1, 2, 9], 4).status == "out-of-range"
    assert check_validity([1, None, 2], 4).status == "missing"
    assert check_validity([1, 2], 4, completed=False).status == "incomplete"
    assert check_validity([1, 2], 4, applicable=False).status == "n/a"


@given(st.permutations(list(range(1, 30))))
def test_any_permutation_valid(perm):
    assert check_validity(perm, 29).ok
    assert check_validity(perm, 28).status == "out-of-range"


def test_interval_2n_n64_range():
    r = run(build("interval-2n", 64), seed=17)
    assert r.validity.ok and max(r.final_labels) <= 128


def test_check_distinct():
    assert check_distinct([1, None, None, 3])
    assert not check_distinct([2, 2])


def test_observe():
    led = SafetyLedger()
    observe(led, 0, None, 1)
    observe(led, 0, 7, 2)
    assert led.ok
    observe(led, 0, 8, 3)
    assert led.violations == [(3, 0, 7, 8)]
    observe(led, 1, 5, 4)
    observe(led, 1, None, 5)
    assert len(led.violations) == 2


def test_safety_monitor_agrees_with_engine():
    for name, n in (("naive", 6), ("single-cycle", 16), ("interval-2n", 30)):
        proto = build(name, n)
        for seed in range(5):
            m = SafetyMonitor()
            r = run(proto, seed=seed, monitors=[m])
            assert len(m.ledger.violations) == r.violation_count
            assert [v[0] for v in m.ledger.violations][:64] == [v[0] for v in r.violations]


def test_pool_monitor_catches_bad_protocol():
    # naive hands out labels from nowhere: not a pool protocol
    proto = build("naive", 4)
    with pytest.raises(MonitorFailure):
        run(proto, seed=1, monitors=[PoolMonitor(lambda states: [set() for _ in states])])


def test_pool_monitor_non_strict_collects():
    proto = build("naive", 4)
    m = PoolMonitor(lambda states: [set() for _ in states], strict=False)
    run(proto, seed=1, monitors=[m])
    assert m.failures


def test_bound_formulas():
    assert pool_bound(32, 0) == 1024
    assert state_lower_bound(5) == pytest.approx(5 + math.sqrt(2) - 1)
    assert math.ceil(state_lower_bound(5)) == 6
    assert silent_safe_interaction_bound(10, 4) == 20
    assert state_lower_bound(16) == pytest.approx(17.7386, abs=1e-4)


def test_single_cycle_n16_consistent():
    proto = build("single-cycle", 16)
    recs = [run(proto, seed=s) for s in range(20)]
    rep = check_bounds(recs, proto.metadata())
    assert rep.census_max <= 40
    assert rep.verdicts["state_lower_bound"] == "consistent"
    assert rep.verdicts["state_budget"] == "consistent"
    assert rep.verdicts["pool_bound"] == "consistent"
    assert rep.consistent
    d = rep.to_dict()
    assert d["consistent"] and d["pool_bound"] == 256


def test_bounds_missing_batch_omits_interaction_verdicts():
    meta = build("dispenser", 32).metadata()
    rep = check_bounds([], meta)
    assert "pool_bound" not in rep.verdicts and rep.trials == 0


def test_bounds_noise_not_hard_failure():
    meta = build("dispenser", 32).metadata()
    rep = bounds_from_stats(meta, 40, 64, 1000.0, 20.0, 10)
    assert rep.verdicts["pool_bound"] == "consistent-within-noise" and rep.consistent
    rep = bounds_from_stats(meta, 40, 64, 500.0, 20.0, 10)
    assert rep.verdicts["pool_bound"] == "inconsistent" and not rep.consistent


def test_naive_not_checked_against_silent_safe_bounds():
    meta = build("naive", 10).metadata()
    rep = bounds_from_stats(meta, 10, 10, 50.0, 1.0, 10)
    assert "state_lower_bound" not in rep.verdicts
    assert "silent_safe_interactions" not in rep.verdicts


def test_closed_forms_against_markov_oracle():
    for n in (2, 3, 4, 5):
        assert expected_hitting_time(broadcast_protocol(n)) == pytest.approx(broadcast_expectation(n))
        assert expected_hitting_time(build("dispenser", n)) == pytest.approx(dispenser_expectation(n))
    assert broadcast_expectation(8) == pytest.approx(7 * harmonic(7))


def test_birthday_exact():
    exact = 1 - math.prod(Fraction(32 ** 3 - i, 32 ** 3) for i in range(32))
    assert birthday_duplicate_probability(32, 32 ** 3) == pytest.approx(float(exact), rel=1e-12)
    assert birthday_duplicate_probability(32, 32 ** 3) <= math.comb(32, 2) / 32 ** 3
    assert birthday_duplicate_probability(2, 1) == 1.0


@pytest.mark.parametrize("name,n,params", [
    ("dispenser", 12, {}), ("interval-2n", 20, {}), ("single-cycle", 9, {}), ("k-cycle", 16, {"k": 4}),
])
def test_pool_maps_exist_for_pool_protocols(name, n, params):
    proto = build(name, n, **params)
    assert proto.pool and pool_map(proto) is not None
    run(proto, seed=0, monitors=[PoolMonitor(pool_map(proto))])
