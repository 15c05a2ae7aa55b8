import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsta.bench import (BenchConfig, PairCountMismatch, asymptotic_ratio, bench_one, coupled_pairs,
                        decoupled_pairs, even_groups, pair_count_bench, reports_json)


def test_default_config_pair_counts():
    g = even_groups(15, 5)
    assert coupled_pairs(15, 1) == 2025
    assert decoupled_pairs(15, 1, g) == 180
    assert coupled_pairs(15, 1) / decoupled_pairs(15, 1, g) == 11.25
    assert asymptotic_ratio(5) == 45


def test_single_frame_pair_counts():
    assert coupled_pairs(15, 0) == 225
    assert decoupled_pairs(15, 0, even_groups(15, 5)) == 15 + 45


def test_large_config_pair_counts():
    g = even_groups(60, 5)
    assert coupled_pairs(60, 4) == 291600
    assert decoupled_pairs(60, 4, g) == 60 * 81 + 5 * 144 == 5580
    assert 291600 / 5580 == pytest.approx(52.26, abs=0.01)


def test_even_groups_partition():
    g = even_groups(7, 3)
    assert [len(x) for x in g] == [3, 2, 2]
    assert sorted(j for x in g for j in x) == list(range(7))
    with pytest.raises(ValueError):
        even_groups(3, 4)


@pytest.mark.parametrize("cfg", [BenchConfig(15, 1, 5), BenchConfig(15, 0, 5), BenchConfig(7, 2, 3, D=8)])
def test_counters_match_closed_form(cfg):
    rep = bench_one(cfg, timing=False, batch=2)
    assert rep.measured == rep.closed_form
    assert rep.time_ms == {}


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2), st.data())
def test_counters_match_closed_form_property(n, T, data):
    K = data.draw(st.integers(1, n))
    rep = bench_one(BenchConfig(n, T, K, D=4, layers=1, heads=1), timing=False, batch=1)
    assert rep.measured["coupled"] == (n * (2 * T + 1)) ** 2
    assert rep.measured["decoupled"] == decoupled_pairs(n, T, even_groups(n, K))


def test_mismatch_is_a_hard_failure(monkeypatch):
    import dsta.bench as bench
    monkeypatch.setattr(bench, "coupled_pairs", lambda n, T: -1)
    with pytest.raises(PairCountMismatch):
        bench_one(BenchConfig(15, 1, 5), timing=False, batch=1)


def test_timing_report_and_json():
    reps = pair_count_bench([BenchConfig(15, 1, 5, D=8, layers=1)], runs=3, warmup=1, batch=1)
    r = reps[0]
    assert set(r.time_ms) == {"coupled", "decoupled"} and r.speedup > 0
    d = json.loads(reports_json(reps))[0]
    assert d["exact_ratio"] == 11.25 and d["asymptotic_ratio"] == 45 and d["runs"] == 3
