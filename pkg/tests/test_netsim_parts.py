"""Config parsing, mobility, RSU placement and metric summaries."""

import itertools
import json
import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vcrl.netsim.config import ConfigError, SimConfig, dump_config, parse_config
from vcrl.netsim.metrics import (
    VEHICLE_COLUMNS,
    MetricsLog,
    VehicleRecord,
    delay_cdf,
    read_vehicle_csv,
    summarize,
    write_summary_json,
    write_vehicle_csv,
)
from vcrl.netsim.mobility import (
    ManhattanMobility,
    TraceFormatError,
    TraceMobility,
    grid_rsus,
    load_trace,
    place_rsus,
)

# ---------------------------------------------------------------- config

BASIC = "mode = baseline\nseed = 4\nduration = 120\n"


def test_parse_config_basic():
    cfg = parse_config(BASIC + "# comment\n\nbandwidth = 10240  # trailing\nrsu_positions = 1,2; 3,4\n"
                       "delta_event_times = 10, 20.5\noptimized_disclosure = no\nrsu_placement = explicit\n"
                       "rsu_count = 2\n")
    assert (cfg.mode, cfg.seed, cfg.duration, cfg.bandwidth) == ("baseline", 4, 120.0, 10240)
    assert cfg.rsu_positions == [(1.0, 2.0), (3.0, 4.0)]
    assert cfg.delta_event_times == [10.0, 20.5]
    assert cfg.optimized_disclosure is False


@pytest.mark.parametrize("text,key", [
    ("seed = 1\nduration = 5\n", "mode"),
    ("mode = baseline\nduration = 5\n", "seed"),
    (BASIC + "bandwdith = 3\n", "bandwdith"),
    (BASIC + "bandwidth = lots\n", "bandwidth"),
    (BASIC + "loss_prob = 1.5\n", "loss_prob"),
    (BASIC + "gamma = 90\n", "gamma"),
    (BASIC + "adversary = pirate\n", "adversary"),
    (BASIC.replace("baseline", "fast"), "mode"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key
    assert key in str(err.value)


def test_config_line_errors():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("mode = baseline\nnonsense\n")
    with pytest.raises(ConfigError, match="line 4"):
        parse_config(BASIC + "nope = 1\n")


def test_dump_parse_round_trip():
    cfg = SimConfig(rsu_placement="explicit", rsu_count=1, rsu_positions=[(5.0, 6.0)],
                    delta_event_times=[1.0, 2.0], adversary="dos", adversary_fraction=0.25)
    assert parse_config(dump_config(cfg)) == cfg


def test_replace_validates():
    with pytest.raises(ConfigError):
        SimConfig().replace(tau_p=0)


# ---------------------------------------------------------------- traces


def write(tmp_path, text):
    p = tmp_path / "trace.csv"
    p.write_text(text)
    return p


@pytest.mark.parametrize("text,line", [
    ("id,t,x,y\n1,0,0,0\n", 1),
    ("", 1),
    ("vehicle_id,time_s,x_m,y_m\n1,0,0,0\n1,1,5\n", 3),
    ("vehicle_id,time_s,x_m,y_m\n1,0,0,0\n\n2,zero,0,0\n", 4),
    ("vehicle_id,time_s,x_m,y_m\n1,-1,0,0\n", 2),
    ("vehicle_id,time_s,x_m,y_m\n1,0,nan,0\n", 2),
])
def test_trace_errors_carry_line_numbers(tmp_path, text, line):
    with pytest.raises(TraceFormatError) as err:
        load_trace(write(tmp_path, text))
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_trace_replay(tmp_path):
    path = write(tmp_path, "vehicle_id,time_s,x_m,y_m\n"
                           "7,10,0,0\n7,0,100,0\n"  # out of order on purpose
                           "8,5,0,0\n8,15,0,100\n")
    assert load_trace(path)[7] == [(0.0, 100.0, 0.0), (10.0, 0.0, 0.0)]
    mob = TraceMobility.from_csv(path)
    assert mob.position(7, 5) == (50.0, 0.0)
    r0 = mob.step(0, 1)
    assert r0.ids == [7] and r0.started == [(7, 0.0)]
    r1 = mob.step(6, 1)
    assert r1.ids == [7, 8] and r1.started == [(8, 5.0)]
    assert np.allclose(r1.xy, [[40, 0], [0, 10]])
    r2 = mob.step(11, 1)
    assert r2.ended == [(7, 10.0)] and r2.ids == [8]


# ---------------------------------------------------------------- synthetic mobility


def test_manhattan_vehicles_stay_on_streets():
    mob = ManhattanMobility(1000, 800, 200, 40, 8, 14, 300, random.Random(2))
    res = mob.step(0, 1)
    assert len(res.ids) == 40 and len(res.started) == 40
    ended = 0
    for t in range(1, 400):
        res = mob.step(float(t), 1)
        ended += len(res.ended)
        assert len(res.ids) == 40  # constant population
        x, y = res.xy[:, 0], res.xy[:, 1]
        assert (x >= -1e-6).all() and (x <= 1000 + 1e-6).all() and (y >= -1e-6).all() and (y <= 800 + 1e-6).all()
        on_street = np.isclose(np.mod(x + 1e-9, 200), 0, atol=1e-6) | np.isclose(np.mod(y + 1e-9, 200), 0, atol=1e-6)
        assert on_street.all()
    assert ended > 0
    assert sum(mob.visits.values()) > 0


def test_manhattan_trip_durations_exponential():
    mob = ManhattanMobility(1000, 1000, 200, 200, 8, 14, 100, random.Random(5))
    begun, trips = {}, []
    for t in range(0, 1600):
        res = mob.step(float(t), 1)
        begun.update(res.started)
        trips += [end - begun[vid] for vid, end in res.ended if begun[vid] > 0]
    assert len(trips) > 1000
    assert np.mean(trips) == pytest.approx(100, rel=0.08)
    assert np.median(trips) == pytest.approx(100 * math.log(2), rel=0.12)


# ---------------------------------------------------------------- RSU placement


def lex_best(visits, count, spacing):
    """Brute force: the feasible subset of size <= count whose descending visit
    counts are lexicographically largest."""
    sites = list(visits)
    best, best_key = [], ()
    for r in range(1, count + 1):
        for combo in itertools.combinations(sites, r):
            if any(math.dist(a, b) <= spacing for a, b in itertools.combinations(combo, 2)):
                continue
            key = tuple(sorted((visits[s] for s in combo), reverse=True))
            if key > best_key:
                best, best_key = list(combo), key
    return best


@pytest.mark.parametrize("seed", range(8))
def test_place_rsus_matches_brute_force(seed):
    rng = random.Random(seed)
    grid = [(100.0 * i, 100.0 * j) for i in range(4) for j in range(4)]
    counts = rng.sample(range(1, 1000), len(grid))
    visits = Counter(dict(zip(grid, counts)))
    spacing = 150.0
    got = place_rsus(visits, 3, spacing)
    assert sorted(got) == sorted(lex_best(visits, 3, spacing))
    assert all(math.dist(a, b) > spacing for a, b in itertools.combinations(got, 2))


def test_place_rsus_edge_cases():
    visits = Counter({(0.0, 0.0): 5, (10.0, 0.0): 4})
    assert place_rsus(visits, 0, 100) == []
    with pytest.warns(UserWarning, match="1 of 2"):
        assert place_rsus(visits, 2, 100) == [(0.0, 0.0)]
    assert len(grid_rsus(1000, 1000, 5)) == 5 and grid_rsus(1000, 1000, 0) == []


# ---------------------------------------------------------------- metrics


def rec(vid, start, cog=None, trip_end=None, until=None, role="honest"):
    r = VehicleRecord(vid, role=role, trip_start=start, trip_end=trip_end, start=start, cognizant_at=cog)
    r.observed_until = until
    return r


def test_outcomes_and_summary():
    log = MetricsLog()
    log.records = {0: rec(0, 0, cog=4), 1: rec(1, 10, cog=12), 2: rec(2, 0, trip_end=50),
                   3: rec(3, 0, until=100), 4: rec(4, 0, cog=1, role="attacker")}
    s = summarize(log)
    assert (s["vehicles"], s["cognizant"], s["failed"], s["censored"]) == (4, 2, 1, 1)
    assert s["failure_ratio"] == pytest.approx(1 / 3)
    assert s["mean_delay_s"] == pytest.approx(3.0)
    # censored vehicle observed for 100 s leaves the risk set after both events
    assert s["quantiles_s"]["p50"] == pytest.approx(4.0)
    assert s["quantiles_s"]["p95"] == math.inf
    assert sum(s["histogram"]["counts"]) == 2


@given(st.lists(st.one_of(st.floats(0, 500), st.none()), min_size=1, max_size=60))
def test_cdf_without_censoring_is_empirical(delays):
    log = MetricsLog()
    for i, d in enumerate(delays):
        log.records[i] = rec(i, 0, cog=d) if d is not None else rec(i, 0, trip_end=1.0)
    times, cdf = delay_cdf(log)
    finite = sorted(d for d in delays if d is not None)
    n = len(delays)
    for t, f in zip(times, cdf):
        assert f == pytest.approx(sum(d <= t for d in finite) / n)
    s = summarize(log)
    tail = cdf[-1] if len(cdf) else 0.0
    assert tail + s["failure_ratio"] == pytest.approx(1.0)
    for q in (50, 90, 95, 99):
        k = math.ceil(q / 100 * n) - 1
        expected = finite[k] if k < len(finite) else math.inf
        assert s["quantiles_s"][f"p{q}"] == expected


def test_csv_golden_header_and_round_trip(tmp_path):
    assert VEHICLE_COLUMNS == ["vehicle_id", "role", "trip_start", "trip_end", "start", "cognizant_at",
                               "delay_s", "outcome", "pieces_received", "forged_dropped", "fingerprint_at"]
    log = MetricsLog()
    log.records = {1: rec(1, 2.5, cog=7.25), 0: rec(0, 0, trip_end=9.0), 2: rec(2, 1, until=30.0)}
    path = tmp_path / "v.csv"
    write_vehicle_csv(log, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(VEHICLE_COLUMNS)
    assert lines[1] == "0,honest,0.000000,9.000000,0.000000,,,failed,0,0,"
    assert lines[2] == "1,honest,2.500000,,2.500000,7.250000,4.750000,cognizant,0,0,"
    back = read_vehicle_csv(path, duration=30.0)
    assert summarize(back) == summarize(log)


def test_summary_json_handles_non_finite(tmp_path):
    path = tmp_path / "s.json"
    write_summary_json({"a": math.inf, "b": math.nan, "c": [1.0, -math.inf]}, path)
    assert json.loads(path.read_text()) == {"a": "inf", "b": None, "c": [1.0, "-inf"]}
