"""PCA side: revocation ledger, base-CRL pieces, fingerprints and delta-CRLs.

Interval numbering: ``slot`` is an absolute pseudonym-lifetime index
(``valid_from // tau_p``). Inside one CRL window the delta/TESLA interval
``i`` runs 1..N and maps to slot ``window_first_slot + i - 1``.
"""

from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass, field
from enum import Enum

from .bloom import Fingerprint, ParameterError, build_fingerprint
from .credentials import (
    ENTRY_SIZE,
    PseudonymBatch,
    RevocationEntry,
    chain_value_at,
    expand_entry_with_intervals,
    issue_batch,
)
from .crypto import (
    DIGEST_SIZE,
    H,
    KeySchedule,
    Signature,
    SigningKey,
    VerifyKey,
    derive_interval_keys,
    mac_compute,
    make_key_schedule,
    verify_sig,
)


class LedgerStateError(RuntimeError):
    pass


class ScheduleViolation(RuntimeError):
    pass


class KeyMismatch(RuntimeError):
    pass


# --------------------------------------------------------------------------
# wire formats

CRL_PIECE_MAGIC = b"VCP1"
_PIECE_HEAD = struct.Struct(">4sQIII32s")
DELTA_MAGIC = b"VDP1"
_DELTA_HEAD = struct.Struct(">4sQIIII")


@dataclass(frozen=True)
class CrlPiece:
    gamma_crl_index: int
    piece_index: int
    total_pieces: int
    crl_version: int
    entries: tuple[RevocationEntry, ...]
    tesla_anchor: bytes
    anchor_signature: Signature
    # only set in the per-piece-signature baseline
    piece_signature: Signature | None = None

    def body(self) -> bytes:
        cached = self.__dict__.get("_body")
        if cached is None:
            head = _PIECE_HEAD.pack(CRL_PIECE_MAGIC, self.gamma_crl_index, self.piece_index,
                                    self.total_pieces, self.crl_version, self.tesla_anchor)
            cached = b"".join([head, self.anchor_signature.encode(), struct.pack(">I", len(self.entries))]
                              + [e.encode() for e in self.entries])
            object.__setattr__(self, "_body", cached)
        return cached

    def encode(self) -> bytes:
        cached = self.__dict__.get("_encoded")
        if cached is None:
            body = self.body()
            if self.piece_signature is None:
                cached = body + b"\x00"
            else:
                cached = body + b"\x01" + self.piece_signature.encode()
            object.__setattr__(self, "_encoded", cached)
        return cached

    @classmethod
    def decode(cls, data: bytes) -> "CrlPiece":
        if len(data) < _PIECE_HEAD.size:
            raise ValueError("truncated CRL piece")
        magic, gidx, pidx, total, version, anchor = _PIECE_HEAD.unpack_from(data, 0)
        if magic != CRL_PIECE_MAGIC:
            raise ValueError("bad CRL piece magic")
        sig, off = Signature.decode(data, _PIECE_HEAD.size)
        if len(data) < off + 4:
            raise ValueError("truncated CRL piece")
        (count,) = struct.unpack_from(">I", data, off)
        off += 4
        entries = []
        for _ in range(count):
            entries.append(RevocationEntry.decode(data, off))
            off += ENTRY_SIZE
        if off >= len(data):
            raise ValueError("truncated CRL piece")
        piece_sig = None
        if data[off] == 1:
            piece_sig, off = Signature.decode(data, off + 1)
        elif data[off] == 0:
            off += 1
        else:
            raise ValueError("bad piece signature flag")
        if off != len(data):
            raise ValueError("trailing bytes after CRL piece")
        if pidx >= total:
            raise ValueError("piece index out of range")
        return cls(gidx, pidx, total, version, tuple(entries), anchor, sig, piece_sig)

    def digest(self) -> bytes:
        cached = self.__dict__.get("_digest")
        if cached is None:
            cached = H(self.encode())
            object.__setattr__(self, "_digest", cached)
        return cached

    @property
    def size(self) -> int:
        return len(self.encode())


def piece_digest(piece: CrlPiece) -> bytes:
    return piece.digest()


@dataclass(frozen=True)
class DeltaCrlPiece:
    gamma_crl_index: int
    interval_index: int
    piece_index: int
    total_pieces: int
    serials: tuple[bytes, ...]
    mac: bytes
    disclosed_prev_key: bytes

    def authenticated_part(self) -> bytes:
        return delta_payload(self.gamma_crl_index, self.interval_index, self.piece_index,
                             self.total_pieces, self.serials)

    def encode(self) -> bytes:
        return self.authenticated_part() + self.mac + self.disclosed_prev_key

    @classmethod
    def decode(cls, data: bytes) -> "DeltaCrlPiece":
        if len(data) < _DELTA_HEAD.size:
            raise ValueError("truncated delta piece")
        magic, gidx, interval, pidx, total, count = _DELTA_HEAD.unpack_from(data, 0)
        if magic != DELTA_MAGIC:
            raise ValueError("bad delta piece magic")
        off = _DELTA_HEAD.size
        if len(data) != off + count * DIGEST_SIZE + 2 * DIGEST_SIZE:
            raise ValueError("delta piece length mismatch")
        serials = tuple(data[off + j * DIGEST_SIZE: off + (j + 1) * DIGEST_SIZE] for j in range(count))
        off += count * DIGEST_SIZE
        return cls(gidx, interval, pidx, total, serials, data[off:off + 32], data[off + 32:off + 64])

    @property
    def size(self) -> int:
        return _DELTA_HEAD.size + DIGEST_SIZE * (len(self.serials) + 2)


def delta_payload(gamma_crl_index: int, interval_index: int, piece_index: int, total: int,
                  serials) -> bytes:
    return _DELTA_HEAD.pack(DELTA_MAGIC, gamma_crl_index, interval_index, piece_index, total,
                            len(serials)) + b"".join(serials)


# --------------------------------------------------------------------------
# ledger


class Status(str, Enum):
    ACTIVE = "active"
    REVOKED = "revoked"
    REINSTATED = "reinstated"


@dataclass
class RevocationPeriod:
    from_slot: int
    until_slot: int | None = None  # exclusive; set on reinstatement
    recorded_at: float = 0.0


@dataclass
class BatchRecord:
    batch: PseudonymBatch
    periods: list[RevocationPeriod] = field(default_factory=list)

    @property
    def first_slot(self) -> int:
        return self.batch.start // self.batch.tau_p

    @property
    def last_slot(self) -> int:
        return self.first_slot + self.batch.size - 1

    @property
    def status(self) -> Status:
        if not self.periods:
            return Status.ACTIVE
        return Status.REVOKED if self.periods[-1].until_slot is None else Status.REINSTATED

    def revoked_at(self, slot: int) -> bool:
        return any(p.from_slot <= slot and (p.until_slot is None or slot < p.until_slot)
                   for p in self.periods)

    def serial_at(self, slot: int) -> bytes | None:
        if not self.first_slot <= slot <= self.last_slot:
            return None
        return self.batch.pseudonyms[slot - self.first_slot].serial


class RevocationLedger:
    """Append-only revocation state per batch, plus an event log."""

    def __init__(self):
        self.records: dict[int, BatchRecord] = {}
        self.events: list[tuple[float, str, int, int]] = []

    def register(self, batch_id: int, batch: PseudonymBatch) -> None:
        if batch_id in self.records:
            raise LedgerStateError(f"batch {batch_id} already registered")
        self.records[batch_id] = BatchRecord(batch)

    def status(self, batch_id: int) -> Status:
        return self.records[batch_id].status

    def revoke(self, batch_id: int, from_interval: int, now: float = 0.0) -> None:
        rec = self._get(batch_id)
        if rec.status is Status.REVOKED:
            raise LedgerStateError(f"batch {batch_id} is already revoked")
        if rec.periods and from_interval < rec.periods[-1].until_slot:
            raise LedgerStateError("revocation would overlap an earlier period")
        rec.periods.append(RevocationPeriod(from_interval, None, now))
        self.events.append((now, "revoke", batch_id, from_interval))

    def reinstate(self, batch_id: int, at_interval: int, now: float = 0.0) -> None:
        rec = self._get(batch_id)
        if rec.status is not Status.REVOKED:
            raise LedgerStateError(f"batch {batch_id} is not revoked")
        period = rec.periods[-1]
        if at_interval <= period.from_slot:
            raise LedgerStateError("reinstatement must come after the revocation interval")
        period.until_slot = at_interval
        self.events.append((now, "reinstate", batch_id, at_interval))

    def _get(self, batch_id: int) -> BatchRecord:
        try:
            return self.records[batch_id]
        except KeyError:
            raise LedgerStateError(f"unknown batch {batch_id}") from None

    def revoked_serials(self, first_slot: int, last_slot: int, known_by: float | None = None) -> set[tuple[bytes, int]]:
        """Brute-force (serial, slot) set of revoked serials within a slot range."""
        out = set()
        for rec in self.records.values():
            for slot in range(max(first_slot, rec.first_slot), min(last_slot, rec.last_slot) + 1):
                if _revoked_known(rec, slot, known_by):
                    out.add((rec.serial_at(slot), slot))
        return out

    def revocation_rate(self) -> float:
        total = sum(r.batch.size for r in self.records.values())
        if total == 0:
            return 0.0
        revoked = sum(sum(1 for s in range(r.first_slot, r.last_slot + 1) if r.revoked_at(s))
                      for r in self.records.values())
        return revoked / total


def _revoked_known(rec: BatchRecord, slot: int, known_by: float | None) -> bool:
    for p in rec.periods:
        if known_by is not None and p.recorded_at > known_by:
            continue
        if p.from_slot <= slot and (p.until_slot is None or slot < p.until_slot):
            return True
    return False


# --------------------------------------------------------------------------
# the authority


@dataclass
class BaseCrl:
    gamma_crl_index: int
    crl_version: int
    pieces: list[CrlPiece]
    fingerprint: Fingerprint
    schedule: KeySchedule
    covered: set[tuple[bytes, int]]


def split_evenly(items: list, n: int) -> list[list]:
    if n <= 0:
        return []
    q, r = divmod(len(items), n)
    out, start = [], 0
    for j in range(n):
        size = q + (1 if j < r else 0)
        out.append(items[start:start + size])
        start += size
    return out


class RevocationAuthority:
    """Single pseudonymous CA managing one domain's revocation data."""

    def __init__(self, signer: SigningKey, *, tau_p: int = 60, gamma: int = 3600,
                 gamma_crl: int = 3600, fp_rate: float = 1e-30, seed: int = 0,
                 sign_pseudonyms: bool = True):
        if gamma_crl % tau_p or gamma % tau_p:
            raise ParameterError("gamma and gamma_crl must be multiples of tau_p")
        self.signer = signer
        self.public_key: VerifyKey = signer.public_key()
        self.tau_p = tau_p
        self.gamma = gamma
        self.gamma_crl = gamma_crl
        self.fp_rate = fp_rate
        self.sign_pseudonyms = sign_pseudonyms
        self.rng = random.Random(seed)
        self.ledger = RevocationLedger()
        self._next_batch_id = 0
        self._schedules: dict[int, KeySchedule] = {}
        self._base: dict[int, BaseCrl] = {}

    @property
    def n_intervals(self) -> int:
        return self.gamma_crl // self.tau_p

    def window_slots(self, gamma_crl_index: int) -> tuple[int, int]:
        first = gamma_crl_index * self.n_intervals
        return first, first + self.n_intervals - 1

    def interval_start(self, gamma_crl_index: int, i: int) -> float:
        return gamma_crl_index * self.gamma_crl + (i - 1) * self.tau_p

    def _secret(self) -> bytes:
        return self.rng.getrandbits(256).to_bytes(32, "big")

    # issuance ------------------------------------------------------------

    def issue_batch(self, gamma_index: int, *, is_carrier: bool = False,
                    fingerprint: Fingerprint | None = None, vehicle_keys=None) -> tuple[int, PseudonymBatch]:
        batch = issue_batch(gamma_index, self.tau_p, self.gamma, self.signer,
                            sn_anchor=self._secret(), rnd_seed=self._secret(),
                            is_carrier=is_carrier, fingerprint=fingerprint,
                            ticket_id=self._secret()[:16], vehicle_keys=vehicle_keys)
        batch_id = self._next_batch_id
        self._next_batch_id += 1
        self.ledger.register(batch_id, batch)
        return batch_id, batch

    def revoke(self, batch_id: int, from_interval: int, now: float = 0.0) -> None:
        self.ledger.revoke(batch_id, from_interval, now)

    def reinstate(self, batch_id: int, at_interval: int, now: float = 0.0) -> None:
        self.ledger.reinstate(batch_id, at_interval, now)

    # key chains ----------------------------------------------------------

    def schedule(self, gamma_crl_index: int) -> KeySchedule:
        if gamma_crl_index not in self._schedules:
            self._schedules[gamma_crl_index] = make_key_schedule(
                gamma_crl_index, self.n_intervals, self._secret(), self.signer)
        return self._schedules[gamma_crl_index]

    def disclose_key(self, schedule: KeySchedule, interval_i: int, now: float,
                     optimized: bool = False) -> bytes:
        """Release ``K_i`` once the disclosure time for interval ``i`` has been reached.

        Strict mode releases at the start of interval ``i``; optimized mode half a
        pseudonym lifetime earlier.
        """
        if not 1 <= interval_i <= schedule.n_intervals:
            raise ScheduleViolation(f"interval {interval_i} outside 1..{schedule.n_intervals}")
        release = self.key_release_time(schedule.gamma_crl_index, interval_i, optimized)
        if now < release:
            raise ScheduleViolation(
                f"key for interval {interval_i} not releasable before t={release} (now={now})")
        return schedule.chain[interval_i]

    def key_release_time(self, gamma_crl_index: int, interval_i: int, optimized: bool = False) -> float:
        t = self.interval_start(gamma_crl_index, interval_i)
        return t - self.tau_p / 2 if optimized else t

    # base CRL --------------------------------------------------------------

    def base_entries(self, gamma_crl_index: int, now: float | None = None) -> list[RevocationEntry]:
        first, last = self.window_slots(gamma_crl_index)
        if now is not None:
            first = max(first, int(now // self.tau_p))
        entries = []
        for rec in self.ledger.records.values():
            for period in rec.periods:
                if now is not None and period.recorded_at > now:
                    continue
                lo = max(period.from_slot, first, rec.first_slot)
                hi = min(last, rec.last_slot)
                if period.until_slot is not None:
                    hi = min(hi, period.until_slot - 1)
                if lo > hi:
                    continue
                index = lo - rec.first_slot + 1
                entries.append(RevocationEntry(rec.batch.pseudonyms[index - 1].serial,
                                               chain_value_at(rec.batch, index), hi - lo, lo))
        entries.sort(key=lambda e: (e.first_interval, e.first_revoked_serial))
        return entries

    def build_base_crl(self, gamma_crl_index: int, bandwidth: int, now: float | None = None) -> BaseCrl:
        """Assemble, split and fingerprint the base CRL for one window.

        Each rebuild within a window bumps ``crl_version``; the key schedule is
        shared across versions of the same window.
        """
        if bandwidth <= 0:
            raise ParameterError("bandwidth must be positive")
        schedule = self.schedule(gamma_crl_index)
        version = self._base[gamma_crl_index].crl_version + 1 if gamma_crl_index in self._base else 1
        entries = self.base_entries(gamma_crl_index, now)
        pieces = self._split_entries(entries, bandwidth, gamma_crl_index, version, schedule)
        fp = build_fingerprint(gamma_crl_index, version, [p.digest() for p in pieces],
                               self.signer, self.fp_rate)
        covered = set()
        for e in entries:
            covered.update(expand_entry_with_intervals(e))
        base = BaseCrl(gamma_crl_index, version, pieces, fp, schedule, covered)
        self._base[gamma_crl_index] = base
        return base

    def _split_entries(self, entries, bandwidth, gamma_crl_index, version, schedule,
                       sign_each: bool = False) -> list[CrlPiece]:
        if not entries:
            return []
        n = math.ceil(len(entries) * ENTRY_SIZE / bandwidth)
        while True:
            groups = split_evenly(entries, n)
            pieces = [self._make_piece(gamma_crl_index, j, n, version, g, schedule, sign_each)
                      for j, g in enumerate(groups)]
            if all(p.size <= bandwidth for p in pieces):
                return pieces
            if n >= len(entries):
                raise ParameterError(f"bandwidth {bandwidth} too small for a single entry piece")
            n += 1

    def _make_piece(self, gamma_crl_index, j, n, version, group, schedule, sign_each) -> CrlPiece:
        piece = CrlPiece(gamma_crl_index, j, n, version, tuple(group), schedule.anchor,
                         schedule.anchor_signature)
        if sign_each:
            piece = CrlPiece(piece.gamma_crl_index, j, n, version, piece.entries, piece.tesla_anchor,
                             piece.anchor_signature, self.signer.sign(piece.body()))
        return piece

    def base_crl(self, gamma_crl_index: int) -> BaseCrl | None:
        return self._base.get(gamma_crl_index)

    # baseline: unscoped CRL, every piece signed ---------------------------

    def build_full_crl(self, bandwidth: int, first_slot: int, last_slot: int, version: int = 1) -> list[CrlPiece]:
        """Every revoked, non-expired pseudonym in ``[first_slot, last_slot]``, one
        entry per revoked pseudonym, each piece carrying its own signature."""
        entries = []
        for rec in self.ledger.records.values():
            for slot in range(max(first_slot, rec.first_slot), min(last_slot, rec.last_slot) + 1):
                if rec.revoked_at(slot):
                    index = slot - rec.first_slot + 1
                    entries.append(RevocationEntry(rec.batch.pseudonyms[index - 1].serial,
                                                   chain_value_at(rec.batch, index), 0, slot))
        entries.sort(key=lambda e: (e.first_interval, e.first_revoked_serial))
        schedule = self.schedule(first_slot // self.n_intervals)
        return self._split_entries(entries, bandwidth, 0, version, schedule, sign_each=True)

    # delta CRL -------------------------------------------------------------

    def delta_serials(self, gamma_crl_index: int, interval_i: int, now: float | None = None) -> list[bytes]:
        slot = self.window_slots(gamma_crl_index)[0] + interval_i - 1
        base = self._base.get(gamma_crl_index)
        covered = base.covered if base else set()
        out = []
        for rec in self.ledger.records.values():
            serial = rec.serial_at(slot)
            if serial is None or not _revoked_known(rec, slot, now):
                continue
            if (serial, slot) in covered:
                continue
            out.append(serial)
        out.sort()
        return out

    def gen_delta_crl(self, gamma_crl_index: int, interval_i: int, key_k_i: bytes, bandwidth: int,
                      now: float | None = None) -> list[DeltaCrlPiece]:
        schedule = self.schedule(gamma_crl_index)
        if not 1 <= interval_i <= schedule.n_intervals:
            raise ParameterError(f"interval {interval_i} outside 1..{schedule.n_intervals}")
        if key_k_i != schedule.chain[interval_i]:
            raise KeyMismatch(f"supplied key is not K_{interval_i} of window {gamma_crl_index}")
        if bandwidth <= 0:
            raise ParameterError("bandwidth must be positive")
        serials = self.delta_serials(gamma_crl_index, interval_i, now)
        if not serials:
            return []
        k_prev, mac_key = derive_interval_keys(key_k_i, interval_i)
        n = math.ceil(len(serials) * DIGEST_SIZE / bandwidth)
        overhead = _DELTA_HEAD.size + 2 * DIGEST_SIZE
        while max(len(g) for g in split_evenly(serials, n)) * DIGEST_SIZE + overhead > bandwidth:
            if n >= len(serials):
                raise ParameterError(f"bandwidth {bandwidth} too small for a delta piece")
            n += 1
        pieces = []
        for w, group in enumerate(split_evenly(serials, n)):
            zeta = delta_payload(gamma_crl_index, interval_i, w, n, group)
            pieces.append(DeltaCrlPiece(gamma_crl_index, interval_i, w, n, tuple(group),
                                        mac_compute(mac_key, zeta), k_prev))
        return pieces


def verify_piece_signature(piece: CrlPiece, pubkey: VerifyKey) -> bool:
    if piece.piece_signature is None:
        return False
    return verify_sig(pubkey, piece.body(), piece.piece_signature)
