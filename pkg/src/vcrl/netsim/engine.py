"""Discrete-event simulation of CRL distribution in a vehicular network.

Radio model
-----------
* Unit-disk connectivity with range ``radio_range``, recomputed every mobility
  step (1 s).
* CRL pieces (base and delta) travel on a channel allocation of ``bandwidth``
  bytes/s shared by everyone in range, so a piece of S bytes is on the air for
  S / bandwidth seconds. Honest senders start a new piece no sooner than
  max(piece_tx_interval, S / bandwidth) after the previous one; attackers try
  every ``bogus_interval``.
* Senders defer while any node within ``cs_range_factor * radio_range`` is
  transmitting (carrier sense). A reception fails
  when two transmissions overlap at the receiver (hidden terminals) or the
  receiver is itself sending.
* Requests, CAMs, fingerprints and disclosed keys are small and ride the
  control channel; they are delivered instantly to current neighbours.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass, field

import numpy as np

from ..authority import CrlPiece, DeltaCrlPiece
from ..vehicle import RateLimiter, VehicleCrlState
from .config import ConfigError, SimConfig
from .metrics import MetricsLog, VehicleRecord
from .mobility import ManhattanMobility, TraceMobility, grid_rsus, place_rsus
from .scenario import CrlMaterial, build_material

MOBILITY_STEP = 1.0
BEACON_PERIOD = 1.0
BACKOFF_MAX = 0.01
RESPONSE_JITTER = 0.02
DELTA_REPEAT = 5.0

# event kinds, ordered so that equal-time ties resolve deterministically
_MOBILITY, _TX_END, _TRANSITION, _BEACON, _DELTA_EVENT, _TRY_TX, _REQUEST = range(7)


@dataclass(eq=False)
class Node:
    nid: int
    kind: str  # rsu | vehicle
    role: str = "honest"  # honest | selfish | attacker
    state: VehicleCrlState | None = None
    record: VehicleRecord | None = None
    carrier: bool = False
    alive: bool = True
    tx_busy_until: float = -math.inf
    rx_until: float = -math.inf
    rx_tx: int = -1
    cpu_free: float = 0.0
    next_tx_allowed: float = -math.inf
    scheduled: bool = False
    pending: dict[int, float] = field(default_factory=dict)
    rr_next: int = 0
    delta_due: dict[tuple[int, int], float] = field(default_factory=dict)
    bytes_sent: int = 0

    @property
    def responder(self) -> bool:
        return self.kind == "rsu" or self.role == "honest"


@dataclass
class Transmission:
    tid: int
    sender: int
    start: float
    end: float
    payload: object
    size: int
    receivers: list[int]


@dataclass
class SimResult:
    config: SimConfig
    metrics: MetricsLog
    rsu_positions: list[tuple[float, float]]
    material: CrlMaterial
    tx_log: list[tuple[int, float, float, int]]  # (sender, start, end, bytes)
    states: dict[int, VehicleCrlState]

    def summary(self) -> dict:
        out = self.metrics.summary()
        out["mode"] = self.config.mode
        out["seed"] = self.config.seed
        out["adversary"] = self.config.adversary
        out["pieces"] = len(self.material.pieces)
        out["piece_bytes"] = [p.size for p in self.material.pieces]
        out["window_entries"] = self.material.window_entries
        out["revoked_per_day"] = self.material.revoked_per_day
        out["rsu_positions"] = [list(p) for p in self.rsu_positions]
        return out


def baseline_mode(cfg: SimConfig) -> SimConfig:
    return cfg.replace(mode="baseline")


class Simulation:
    def __init__(self, cfg: SimConfig, material: CrlMaterial | None = None, mobility=None):
        cfg.validate()
        if cfg.duration > cfg.gamma_crl:
            raise ConfigError("a run covers a single CRL window; keep duration <= gamma_crl", "duration")
        self.cfg = cfg
        self.rng = random.Random(f"{cfg.seed}:engine")
        self.material = material or build_material(cfg)
        self.authority = self.material.authority
        self.vc = cfg.mode == "vehicle_centric"
        self.pieces = self.material.pieces
        self.legit_ids = {id(p) for p in self.pieces}
        self.piece_size = max((p.size for p in self.pieces), default=cfg.bandwidth)
        self.mobility = mobility or self._make_mobility()
        self.rsu_positions = self._place_rsus()
        self.nodes: dict[int, Node] = {}
        self.vehicle_ids: list[int] = []
        self.nbrs: dict[int, list[int]] = {}
        self.nbr_sets: dict[int, set[int]] = {}
        self.cs_nbrs: dict[int, list[int]] = {}
        self.metrics = MetricsLog()
        self.tx_log: list[tuple[int, float, float, int]] = []
        self.in_flight: dict[int, Transmission] = {}
        self.corrupted: set[tuple[int, int]] = set()
        self._heap: list = []
        self._seq = itertools.count()
        self._tids = itertools.count()
        self.schedule = self.authority.schedule(0)
        self._delta_cache: dict[int, list[DeltaCrlPiece]] = {}
        self._delta_ids: set[int] = set()
        self._bogus_pool = self._make_bogus_pool()
        self._states: dict[int, VehicleCrlState] = {}
        for j, _ in enumerate(self.rsu_positions):
            self.nodes[-(j + 1)] = Node(-(j + 1), "rsu")

    # setup -----------------------------------------------------------------

    def _make_mobility(self):
        c = self.cfg
        if c.mobility == "trace":
            return TraceMobility.from_csv(c.trace_file)
        return ManhattanMobility(c.width, c.height, c.block, c.n_vehicles, c.speed_min, c.speed_max,
                                 c.mean_trip, random.Random(f"{c.seed}:mobility"))

    def _place_rsus(self) -> list[tuple[float, float]]:
        c = self.cfg
        if c.rsu_count == 0:
            return []
        if c.rsu_placement == "explicit":
            return list(c.rsu_positions)
        if c.rsu_placement == "grid":
            return grid_rsus(c.width, c.height, c.rsu_count)
        if c.mobility == "trace":
            visits = TraceMobility(self.mobility.samples).dry_run(c.duration, block=c.block)
        else:
            probe = ManhattanMobility(c.width, c.height, c.block, c.n_vehicles, c.speed_min, c.speed_max,
                                      c.mean_trip, random.Random(f"{c.seed}:rsu-survey"))
            visits = probe.dry_run(min(c.duration, 600.0))
        return place_rsus(visits, c.rsu_count, 2 * c.radio_range)

    def _make_bogus_pool(self) -> list:
        """Forged pieces that look like genuine ones (same size and header)."""
        rng = random.Random(f"{self.cfg.seed}:bogus")
        pool = []
        if self.cfg.adversary == "dos" and self.pieces:
            for src in self.pieces:
                entries = tuple(
                    type(e)(rng.randbytes(32), rng.randbytes(32), e.remaining, e.first_interval)
                    for e in src.entries)
                pool.append(CrlPiece(src.gamma_crl_index, src.piece_index, src.total_pieces, src.crl_version,
                                     entries, src.tesla_anchor, src.anchor_signature, src.piece_signature))
        return pool

    # event plumbing ----------------------------------------------------------

    def _push(self, t: float, kind: int, arg=None) -> None:
        heapq.heappush(self._heap, (t, kind, next(self._seq), arg))

    def run(self) -> SimResult:
        self._push(0.0, _MOBILITY)
        for nid in sorted(n for n in self.nodes if n < 0):
            self._push(0.0, _BEACON, nid)
        for t in self.cfg.delta_event_times:
            self._push(t, _DELTA_EVENT)
        self._push(self.cfg.tau_p, _TRANSITION)
        handlers = {_MOBILITY: self._on_mobility, _TX_END: self._on_tx_end, _BEACON: self._on_beacon,
                    _TRANSITION: self._on_transition,
                    _DELTA_EVENT: self._on_delta_event, _TRY_TX: self._on_try_tx, _REQUEST: self._on_request}
        end = self.cfg.duration
        while self._heap:
            t, kind, _, arg = heapq.heappop(self._heap)
            if t > end:
                break
            handlers[kind](t, arg)
        for vid, st in self._states.items():
            rec = self.metrics.records[vid]
            rec.forged_dropped = st.forged_dropped
            if rec.outcome == "censored":
                rec.observed_until = end
        return SimResult(self.cfg, self.metrics, self.rsu_positions, self.material, self.tx_log, self._states)

    # mobility and control channel ----------------------------------------

    def _spawn(self, vid: int, t: float, trip_start: float) -> None:
        c = self.cfg
        rng = self.rng
        role = "honest"
        if c.adversary != "none" and rng.random() < c.adversary_fraction:
            role = "selfish" if c.adversary == "selfish" else "attacker"
        limiter = RateLimiter(c.rate_limit_factor / c.piece_tx_interval, burst=2 * c.rate_limit_factor)
        state = VehicleCrlState(self.authority.public_key, tau_p=c.tau_p, gamma_crl=c.gamma_crl,
                                mode=c.mode, optimized_disclosure=c.optimized_disclosure,
                                max_clock_error=c.max_clock_error, rate_limiter=limiter,
                                buffer_cap_bytes=c.buffer_cap_bytes, selfish=role == "selfish",
                                rng=random.Random(f"{c.seed}:v{vid}"))
        start = max(trip_start, 0.0)
        node = Node(vid, "vehicle", role, state, VehicleRecord(vid, role, trip_start, None, start))
        self.nodes[vid] = node
        self._states[vid] = state
        self.vehicle_ids.append(vid)
        self.metrics.records[vid] = node.record
        if role == "attacker":
            self._push(t + rng.uniform(0, c.bogus_interval), _TRY_TX, vid)
            return
        self._draw_carrier(node, t)
        self._push(t + rng.uniform(0, c.request_interval), _REQUEST, vid)

    def _draw_carrier(self, node: Node, t: float) -> None:
        """Pseudonyms issued after the CRL release carry the fingerprint with probability carrier_fraction."""
        node.carrier = False
        if self.vc and self.material.carrier_pseudonym is not None and \
                self.rng.random() < self.cfg.carrier_fraction:
            node.carrier = True
            if node.state.current_fingerprint is None:
                self._give_fingerprint(node, t, carrier=True)

    def _on_transition(self, t: float, _):
        """Every vehicle switches to its next pseudonym at each tau_p boundary."""
        for vid in self.vehicle_ids_alive():
            node = self.nodes[vid]
            if node.role != "attacker":
                self._draw_carrier(node, t)
        self._push(t + self.cfg.tau_p, _TRANSITION)

    def _give_fingerprint(self, node: Node, t: float, carrier: bool = False) -> None:
        st = node.state
        if carrier:
            ok = st.handle_carrier_pseudonym(self.material.carrier_pseudonym, sender=node.nid)
        else:
            ok = st.handle_fingerprint(self.material.fingerprint)
        if ok:
            node.cpu_free = max(node.cpu_free, t) + self.cfg.sig_verify_cost
            if node.record.fingerprint_at is None:
                node.record.fingerprint_at = node.cpu_free
            self._check_cognizant(node)  # an empty CRL completes immediately

    def _on_mobility(self, t: float, _):
        res = self.mobility.step(t, MOBILITY_STEP)
        for vid, t_end in res.ended:
            node = self.nodes.get(vid)
            if node is not None:
                node.alive = False
                node.record.trip_end = t_end
                node.record.forged_dropped = node.state.forged_dropped
                del self.nodes[vid]
        for vid, t_start in res.started:
            self._spawn(vid, t, t_start)
        self._update_neighbours(res)
        if self.vc and self.material.carrier_pseudonym is not None:
            self._cam_exchange(t)
        present = [self.nodes[v] for v in res.ids if self.nodes[v].role != "attacker"]
        self.metrics.cognizant_series.append((t, sum(1 for n in present if n.state.cognizant), len(present)))
        self._push(t + MOBILITY_STEP, _MOBILITY)

    def _update_neighbours(self, res) -> None:
        ids = [-(j + 1) for j in range(len(self.rsu_positions))] + list(res.ids)
        pts = [np.asarray(self.rsu_positions, dtype=float).reshape(-1, 2), res.xy]
        xy = np.vstack(pts) if ids else np.zeros((0, 2))
        self.nbrs, self.nbr_sets, self.cs_nbrs = {}, {}, {}
        if not ids:
            return
        diff = xy[:, None, :] - xy[None, :, :]
        d2 = (diff ** 2).sum(-1)
        np.fill_diagonal(d2, np.inf)
        adj = d2 <= self.cfg.radio_range ** 2
        sense = d2 <= (self.cfg.radio_range * self.cfg.cs_range_factor) ** 2
        id_arr = np.array(ids)
        for row, nid in enumerate(ids):
            lst = id_arr[adj[row]].tolist()
            self.nbrs[nid] = lst
            self.nbr_sets[nid] = set(lst)
            self.cs_nbrs[nid] = id_arr[sense[row]].tolist()

    def _cam_exchange(self, t: float) -> None:
        """Carrier pseudonyms ride every CAM; one CAM period suffices for neighbours to see them."""
        for nid in self.vehicle_ids_alive():
            node = self.nodes[nid]
            if node.role == "attacker" or node.state.current_fingerprint is not None:
                continue
            for other in self.nbrs.get(nid, ()):
                o = self.nodes.get(other)
                if o is not None and o.carrier:
                    self._give_fingerprint(node, t + self.rng.uniform(0, 1 / self.cfg.cam_rate))
                    break

    def vehicle_ids_alive(self) -> list[int]:
        self.vehicle_ids = [v for v in self.vehicle_ids if v in self.nodes]
        return self.vehicle_ids

    def _on_beacon(self, t: float, rsu: int):
        c = self.cfg
        fp_due = self.vc and self.material.fingerprint is not None and \
            round(t / BEACON_PERIOD) % max(1, round(c.fingerprint_tx_interval / BEACON_PERIOD)) == 0
        key_i = self._latest_key_interval(t)
        for nid in self.nbrs.get(rsu, ()):
            node = self.nodes.get(nid)
            if node is None or node.role == "attacker":
                continue
            if fp_due and node.state.current_fingerprint is None:
                self._give_fingerprint(node, t)
            if key_i is not None and (0, key_i) not in node.state.known_keys:
                self._deliver_key(node, key_i, t)
        self._wake(rsu, t)
        self._push(t + BEACON_PERIOD, _BEACON, rsu)

    # delta CRLs -------------------------------------------------------------

    def _latest_key_interval(self, t: float) -> int | None:
        """Highest interval whose key has been released and that has delta traffic."""
        best = None
        for i in sorted(self._delta_cache):
            if self.authority.key_release_time(0, i, self.cfg.optimized_disclosure) <= t:
                best = i
        return best

    def _deliver_key(self, node: Node, i: int, t: float) -> None:
        st = node.state
        if 0 not in st.anchors:
            st.handle_anchor(0, self.schedule.anchor, self.schedule.anchor_signature)
        key = self.authority.disclose_key(self.schedule, i, t, self.cfg.optimized_disclosure)
        outcome = st.validate_on_key_disclosure(0, i, key)
        for piece in outcome.accepted:
            if id(piece) not in self._delta_ids:
                self.metrics.bump("forged_delta_accepted")
            self.metrics.delta_validated.append((node.nid, piece.interval_index, t))
        if outcome.rejected:
            self.metrics.bump("delta_rejected", len(outcome.rejected))

    def _on_delta_event(self, t: float, _):
        """New revocations that missed the base CRL: vehicles revoked from the next slot on."""
        auth = self.authority
        slot = int(t // auth.tau_p) + 1
        per_batch = auth.gamma // auth.tau_p
        last_slot = auth.window_slots(0)[1]
        for _ in range(self.cfg.delta_event_size):
            g = slot // per_batch
            while g * per_batch <= last_slot:
                bid, _b = auth.issue_batch(g)
                auth.revoke(bid, max(slot, g * per_batch), now=t)
                g += 1
        self.metrics.bump("delta_events")
        self._generate_deltas(t)

    def _generate_deltas(self, t: float) -> None:
        """Pieces for interval i go out from the release of K_{i-1} until K_i is released."""
        auth = self.authority
        for i in range(2, auth.n_intervals + 1):
            send_from = auth.key_release_time(0, i - 1, self.cfg.optimized_disclosure)
            send_until = auth.key_release_time(0, i, self.cfg.optimized_disclosure)
            if send_until <= t or send_from > self.cfg.duration:
                continue
            if i in self._delta_cache:
                continue
            gen_time = max(send_from, t)
            key = self.schedule.chain[i]
            pieces = auth.gen_delta_crl(0, i, key, self.cfg.bandwidth, now=gen_time)
            if pieces:
                self._delta_cache[i] = pieces
                self._delta_ids.update(id(p) for p in pieces)

    def _delta_due(self, t: float) -> list[DeltaCrlPiece]:
        out = []
        rel = self.authority.key_release_time
        opt = self.cfg.optimized_disclosure
        for i, pieces in self._delta_cache.items():
            if rel(0, i - 1, opt) <= t < rel(0, i, opt):
                out.extend(pieces)
        return out

    # requests and transmissions -------------------------------------------

    def _on_request(self, t: float, vid: int):
        node = self.nodes.get(vid)
        if node is None:
            return
        st = node.state
        if st.cognizant:
            return
        if not self.vc or st.current_fingerprint is not None:
            for other in self.nbrs.get(vid, ()):
                o = self.nodes.get(other)
                if o is None or not o.responder:
                    continue
                if o.kind == "vehicle" and not o.state.received_pieces:
                    continue
                o.pending[vid] = t
                if not o.scheduled:
                    self._wake(other, t + self.rng.uniform(0, RESPONSE_JITTER))
        self._push(t + self.cfg.request_interval, _REQUEST, vid)

    def _wake(self, nid: int, t: float) -> None:
        node = self.nodes.get(nid)
        if node is not None and not node.scheduled:
            node.scheduled = True
            self._push(t, _TRY_TX, nid)

    def _channel_busy_until(self, nid: int, t: float) -> float:
        busy = self.nodes[nid].tx_busy_until
        for other in self.cs_nbrs.get(nid, ()):
            o = self.nodes.get(other)
            if o is not None and o.tx_busy_until > busy:
                busy = o.tx_busy_until
        return busy

    def _choose_payload(self, node: Node, t: float):
        if node.role == "attacker":
            return self._bogus_payload(t)
        if node.kind == "rsu":
            for piece in self._delta_due(t):
                key = (piece.interval_index, piece.piece_index)
                if node.delta_due.get(key, -math.inf) <= t:
                    return piece
        requests = self._live_requests(node, t)
        if not requests:
            return None
        if node.kind == "rsu":
            # round-robin over everything currently asked for
            order = sorted(set().union(*(m for _, _, m in requests)))
            j = next((w for w in order if w >= node.rr_next), order[0])
            node.rr_next = j + 1
            return self.pieces[j]
        # a vehicle answers the oldest outstanding request with a random piece from it
        _, vid, missing = min(requests)
        del node.pending[vid]
        return node.state.choose_piece(missing)

    def _live_requests(self, node: Node, t: float) -> list[tuple[float, int, set[int]]]:
        """Outstanding requests this node can serve: (time, requester, servable indices)."""
        ttl = 2 * self.cfg.request_interval
        nb = self.nbr_sets.get(node.nid, set())
        held = None if node.kind == "rsu" else node.state.received_pieces.keys()
        out = []
        for vid, seen in list(node.pending.items()):
            req = self.nodes.get(vid)
            if t - seen > ttl or req is None or vid not in nb or req.state.cognizant:
                del node.pending[vid]
                continue
            missing = req.state.missing_indices()
            if missing is None:
                missing = set(range(len(self.pieces)))
            servable = missing if held is None else {m for m in missing if m in held}
            if servable:
                out.append((seen, vid, servable))
            else:
                del node.pending[vid]
        return out

    def _bogus_payload(self, t: float):
        c = self.cfg
        if c.adversary == "dos":
            return self.rng.choice(self._bogus_pool) if self._bogus_pool else None
        if c.adversary == "delta_flood":
            i = int(t // c.tau_p) + 2
            if i > self.authority.n_intervals:
                return None
            n = max(1, min(100, (c.bandwidth - 120) // 32))
            serials = tuple(self.rng.randbytes(32) for _ in range(n))
            return DeltaCrlPiece(0, i, 0, 1, serials, self.rng.randbytes(32), self.rng.randbytes(32))
        return None

    def _on_try_tx(self, t: float, nid: int):
        node = self.nodes.get(nid)
        if node is None:
            return
        node.scheduled = False
        c = self.cfg
        if t < node.next_tx_allowed:
            self._wake(nid, node.next_tx_allowed)
            return
        busy = self._channel_busy_until(nid, t)
        if busy > t:
            self._wake(nid, busy + self.rng.uniform(0, BACKOFF_MAX))
            return
        payload = self._choose_payload(node, t)
        if payload is None:
            if node.role == "attacker":
                self._wake(nid, t + c.bogus_interval)
            return
        if isinstance(payload, DeltaCrlPiece) and node.kind == "rsu":
            node.delta_due[(payload.interval_index, payload.piece_index)] = t + DELTA_REPEAT
        tx = self._start_tx(node, t, payload)
        if node.role == "attacker":
            gap = c.bogus_interval
        else:
            gap = max(c.piece_tx_interval, tx.size / c.bandwidth)
        # post-transmission backoff, as for any deferring sender
        node.next_tx_allowed = max(tx.end + self.rng.uniform(0, BACKOFF_MAX), t + gap)
        self._wake(nid, node.next_tx_allowed)

    def _start_tx(self, node: Node, t: float, payload) -> Transmission:
        size = payload.size
        end = t + size / self.cfg.bandwidth
        receivers = list(self.nbrs.get(node.nid, ()))
        tx = Transmission(next(self._tids), node.nid, t, end, payload, size, receivers)
        # half duplex: anything we were receiving is lost
        if node.rx_until > t:
            self.corrupted.add((node.rx_tx, node.nid))
        for r in receivers:
            rn = self.nodes.get(r)
            if rn is None:
                continue
            if rn.tx_busy_until > t:
                self.corrupted.add((tx.tid, r))
            if rn.rx_until > t:
                self.corrupted.add((tx.tid, r))
                self.corrupted.add((rn.rx_tx, r))
            if end > rn.rx_until:
                rn.rx_until, rn.rx_tx = end, tx.tid
        node.tx_busy_until = end
        node.bytes_sent += size
        self.tx_log.append((node.nid, t, end, size))
        self.in_flight[tx.tid] = tx
        self._push(end, _TX_END, tx.tid)
        self.metrics.bump("tx_" + ("delta" if isinstance(payload, DeltaCrlPiece) else "piece"))
        return tx

    def _on_tx_end(self, t: float, tid: int):
        tx = self.in_flight.pop(tid)
        loss = self.cfg.loss_prob
        for r in tx.receivers:
            if (tid, r) in self.corrupted:
                self.corrupted.discard((tid, r))
                self.metrics.bump("collisions")
                continue
            node = self.nodes.get(r)
            if node is None or node.kind == "rsu" or node.role == "attacker":
                continue
            if loss and self.rng.random() < loss:
                continue
            if isinstance(tx.payload, DeltaCrlPiece):
                node.state.buffer_delta_piece(tx.payload, t, sender=tx.sender)
            else:
                self._deliver_piece(node, tx.payload, tx.sender, t)

    def _deliver_piece(self, node: Node, piece: CrlPiece, sender: int, t: float) -> None:
        st = node.state
        if st.cognizant:
            return
        bf0, sig0 = st.bf_checks, st.signature_verifications
        accepted = st.handle_piece(piece, sender=sender)
        cost = (st.bf_checks - bf0) * self.cfg.bf_check_cost + \
            (st.signature_verifications - sig0) * self.cfg.sig_verify_cost
        if cost:
            node.cpu_free = max(node.cpu_free, t) + cost
        if accepted:
            if id(piece) not in self.legit_ids:
                self.metrics.bump("forged_accepted")
            node.record.pieces_received += 1
            self._check_cognizant(node)

    def _check_cognizant(self, node: Node) -> None:
        if node.state.cognizant and node.record.cognizant_at is None:
            node.record.cognizant_at = node.cpu_free


def run_simulation(cfg: SimConfig, material: CrlMaterial | None = None) -> SimResult:
    return Simulation(cfg, material).run()
