import math
from collections import defaultdict

import pytest

from vcrl.authority import verify_piece_signature
from vcrl.netsim import ConfigError, SimConfig, Simulation, run_simulation, write_vehicle_csv
from vcrl.netsim.scenario import build_material
from vcrl.vehicle import VehicleCrlState

SMALL = dict(seed=3, duration=120, width=1000, height=1000, n_vehicles=40, rsu_count=2)


def small(**kw) -> SimConfig:
    return SimConfig(**{**SMALL, **kw})


def legit_store(material) -> set[tuple[bytes, int]]:
    out = set()
    for p in material.pieces:
        out.update(VehicleCrlState.parse_crl_piece(p))
    return out


def test_repeat_runs_write_identical_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_vehicle_csv(run_simulation(small()).metrics, a)
    write_vehicle_csv(run_simulation(small()).metrics, b)
    assert a.read_bytes() == b.read_bytes()


def test_different_seeds_differ(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_vehicle_csv(run_simulation(small()).metrics, a)
    write_vehicle_csv(run_simulation(small(seed=4)).metrics, b)
    assert a.read_bytes() != b.read_bytes()


def test_empty_crl_completes_with_the_fingerprint():
    res = run_simulation(small(revocation_rate=0))
    assert res.material.pieces == []
    recs = [r for r in res.metrics.records.values() if r.fingerprint_at is not None]
    assert recs
    for r in recs:
        assert r.cognizant_at == r.fingerprint_at
        assert r.pieces_received == 0


@pytest.mark.parametrize("bandwidth", [2000, 6000])
def test_single_vehicle_meets_the_round_robin_schedule(bandwidth):
    # one RSU covering the whole area, one vehicle that never leaves
    cfg = SimConfig(seed=5, duration=120, width=400, height=400, block=100, n_vehicles=1,
                    rsu_count=1, rsu_placement="explicit", rsu_positions=((200.0, 200.0),),
                    mean_trip=1e9, bandwidth=bandwidth, carrier_fraction=0)
    res = run_simulation(cfg)
    n = len(res.material.pieces)
    size = max(p.size for p in res.material.pieces)
    assert n >= 2
    (rec,) = res.metrics.records.values()
    gap = max(cfg.piece_tx_interval, size / bandwidth) + 0.01
    # first request + jitter, then one piece per gap, plus the last airtime and CPU
    bound = rec.fingerprint_at + cfg.request_interval + 0.02 + n * gap + size / bandwidth + 0.1
    assert rec.cognizant_at is not None
    assert rec.cognizant_at <= bound
    assert rec.pieces_received == n


def test_senders_never_overlap_themselves_and_respect_the_budget():
    cfg = small()
    res = run_simulation(cfg)
    per_sender = defaultdict(list)
    for sender, start, end, size in res.tx_log:
        assert math.isclose(end - start, size / cfg.bandwidth)
        per_sender[sender].append((start, end, size))
    size_max = max(p.size for p in res.material.pieces)
    for txs in per_sender.values():
        txs.sort()
        for (s0, e0, _), (s1, _, _) in zip(txs, txs[1:]):
            assert s1 >= e0
        first = txs[0][0]
        elapsed = txs[-1][1] - first
        assert sum(s for *_, s in txs) <= cfg.bandwidth * elapsed + size_max


def test_dos_forgeries_never_become_knowledge():
    res = run_simulation(small(adversary="dos", adversary_fraction=0.5))
    assert res.metrics.counters.get("forged_accepted", 0) == 0
    legit = legit_store(res.material)
    legit_ids = {id(p) for p in res.material.pieces}
    dropped = 0
    for st in res.states.values():
        assert st.revocation_store() <= legit
        assert all(id(p) in legit_ids for p in st.received_pieces.values())
        dropped += st.forged_dropped
    assert dropped > 0


def test_cognizance_is_never_lost():
    res = run_simulation(small())
    for vid, rec in res.metrics.records.items():
        if rec.cognizant_at is not None:
            assert res.states[vid].cognizant


def test_closed_population_cognizant_count_never_drops():
    res = run_simulation(small(mean_trip=1e9))
    series = res.metrics.cognizant_series
    assert {p for _, _, p in series} == {40}
    counts = [c for _, c, _ in series]
    assert counts == sorted(counts)
    assert counts[-1] == 40


def test_delta_events_validate_under_flooding():
    cfg = small(duration=300, delta_event_times=(100.0,), adversary="delta_flood", adversary_fraction=0.3)
    res = run_simulation(cfg)
    c = res.metrics.counters
    assert c["delta_events"] == 1
    assert c.get("forged_delta_accepted", 0) == 0
    assert c.get("delta_rejected", 0) > 0
    assert res.metrics.delta_validated
    for st in res.states.values():
        assert st.buffered_bytes <= cfg.buffer_cap_bytes


def test_trace_mobility_run(tmp_path):
    trace = tmp_path / "trace.csv"
    lines = ["vehicle_id,time_s,x_m,y_m"]
    for v in range(6):
        for t in range(0, 61, 5):
            lines.append(f"{v},{t},{100 + 10 * t},{100 + 40 * v}")
    trace.write_text("\n".join(lines) + "\n")
    cfg = SimConfig(seed=2, duration=60, mobility="trace", trace_file=str(trace), width=1000, height=1000,
                    rsu_count=1, rsu_placement="explicit", rsu_positions=((400.0, 200.0),))
    res = run_simulation(cfg)
    assert set(res.metrics.records) == set(range(6))
    assert all(r.cognizant_at is not None for r in res.metrics.records.values())


def test_trace_placement_uses_visits(tmp_path):
    trace = tmp_path / "trace.csv"
    rows = ["vehicle_id,time_s,x_m,y_m"] + [f"{v},{t},{200 + v},{400}" for v in range(3) for t in (0, 30)]
    trace.write_text("\n".join(rows) + "\n")
    sim = Simulation(SimConfig(seed=1, duration=30, mobility="trace", trace_file=str(trace), rsu_count=1))
    (x, y), = sim.rsu_positions
    assert (x, y) == (200.0, 400.0)


def test_duration_beyond_one_window_is_rejected():
    with pytest.raises(ConfigError) as e:
        Simulation(small(duration=4000, gamma_crl=3600))
    assert e.value.key == "duration"


def test_baseline_material_is_the_signed_daily_list():
    m = build_material(SimConfig(mode="baseline"))
    assert len(m.pieces) == 49
    assert m.window_entries == 17128
    assert all(p.piece_signature is not None for p in m.pieces)
    pub = m.authority.public_key
    assert all(verify_piece_signature(p, pub) for p in m.pieces[:5])
