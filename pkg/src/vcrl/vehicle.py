"""OBU-side CRL state machine."""

from __future__ import annotations

import bisect
import random
import struct
from collections import defaultdict
from dataclasses import dataclass, field

from .authority import CrlPiece, DeltaCrlPiece, verify_piece_signature
from .bloom import Fingerprint
from .credentials import Pseudonym, expand_entry_with_intervals
from .crypto import (
    Signature,
    SigningKey,
    VerifyKey,
    derive_interval_keys,
    hash_iter,
    mac_verify,
    verify_anchor,
    verify_key_against_anchor,
    verify_sig,
)


class TokenBucket:
    """Token bucket driven by caller-supplied timestamps (simulation time)."""

    def __init__(self, rate: float, capacity: float, now: float = 0.0):
        self.rate = rate
        self.capacity = capacity
        self.tokens = capacity
        self.last = now

    def consume(self, now: float, amount: float = 1.0) -> bool:
        if now > self.last:
            self.tokens = min(self.capacity, self.tokens + (now - self.last) * self.rate)
            self.last = now
        if self.tokens >= amount:
            self.tokens -= amount
            return True
        return False


class RateLimiter:
    """Per-sender token buckets; a sender that overruns its bucket is muted for ``mute_for`` seconds."""

    def __init__(self, rate: float, burst: float | None = None, mute_for: float = 60.0):
        self.rate = rate
        self.burst = burst if burst is not None else max(rate, 1.0)
        self.mute_for = mute_for
        self._buckets: dict = {}
        self.muted_until: dict = {}
        self.violations: dict = defaultdict(int)

    def allow(self, sender, now: float) -> bool:
        if self.muted_until.get(sender, float("-inf")) > now:
            self.violations[sender] += 1
            return False
        bucket = self._buckets.get(sender)
        if bucket is None:
            bucket = self._buckets[sender] = TokenBucket(self.rate, self.burst, now)
        if bucket.consume(now):
            return True
        self.violations[sender] += 1
        self.muted_until[sender] = now + self.mute_for
        return False

    def is_muted(self, sender, now: float) -> bool:
        return self.muted_until.get(sender, float("-inf")) > now


REQUEST_MAGIC = b"VRQ1"


@dataclass(frozen=True)
class PieceRequest:
    gamma_crl_index: int
    missing_indices: frozenset[int]
    requester_pseudonym: Pseudonym
    signature: Signature | None = None

    def signed_payload(self) -> bytes:
        idx = sorted(self.missing_indices)
        return (REQUEST_MAGIC + struct.pack(">QI", self.gamma_crl_index, len(idx))
                + b"".join(struct.pack(">I", i) for i in idx) + self.requester_pseudonym.serial)

    @classmethod
    def create(cls, gamma_crl_index: int, missing, pseudonym: Pseudonym, key: SigningKey) -> "PieceRequest":
        unsigned = cls(gamma_crl_index, frozenset(missing), pseudonym)
        return cls(gamma_crl_index, unsigned.missing_indices, pseudonym, key.sign(unsigned.signed_payload()))

    def verify(self, pca_key: VerifyKey, now: float) -> bool:
        p = self.requester_pseudonym
        if not p.valid_from <= now < p.valid_to or p.verify_key is None or self.signature is None:
            return False
        return p.verify(pca_key) and verify_sig(p.verify_key, self.signed_payload(), self.signature)


@dataclass
class DeltaOutcome:
    accepted: list[DeltaCrlPiece] = field(default_factory=list)
    rejected: list[DeltaCrlPiece] = field(default_factory=list)


class VehicleCrlState:
    """Everything one vehicle knows about the current CRL window.

    ``mode`` is ``"vehicle_centric"`` (pieces checked against the signed
    fingerprint) or ``"baseline"`` (every piece carries its own signature).
    """

    def __init__(self, pca_key: VerifyKey, *, tau_p: int = 60, gamma_crl: int = 3600,
                 mode: str = "vehicle_centric", optimized_disclosure: bool = True,
                 max_clock_error: float = 0.0, clock_offset: float = 0.0,
                 rate_limiter: RateLimiter | None = None, buffer_cap_bytes: int | None = 4 << 20,
                 selfish: bool = False, rng: random.Random | None = None):
        if mode not in ("vehicle_centric", "baseline"):
            raise ValueError(f"unknown mode {mode!r}")
        self.pca_key = pca_key
        self.tau_p = tau_p
        self.gamma_crl = gamma_crl
        self.mode = mode
        self.optimized_disclosure = optimized_disclosure
        self.max_clock_error = max_clock_error
        self.clock_offset = clock_offset
        self.rate_limiter = rate_limiter
        self.buffer_cap_bytes = buffer_cap_bytes
        self.selfish = selfish
        self.rng = rng or random.Random(0)

        self.current_fingerprint: Fingerprint | None = None
        self.received_pieces: dict[int, CrlPiece] = {}
        self.total_pieces: int | None = None
        self.crl_key: tuple[int, int] | None = None  # (gamma_crl_index, crl_version)
        self.delta_buffer: dict[int, list[tuple[DeltaCrlPiece, float]]] = defaultdict(list)
        self.buffered_bytes = 0
        self.anchors: dict[int, bytes] = {}
        self.known_keys: dict[tuple[int, int], bytes] = {}
        self.misbehavior: dict = defaultdict(int)
        self.forged_dropped = 0
        self.signature_verifications = 0
        self.bf_checks = 0
        self._store: dict[int, list[bytes]] = defaultdict(list)
        self._pending: list[CrlPiece] = []

    # fingerprint -----------------------------------------------------------

    @property
    def n_intervals(self) -> int:
        return self.gamma_crl // self.tau_p

    @property
    def cognizant(self) -> bool:
        return self.total_pieces is not None and len(self.received_pieces) >= self.total_pieces

    def _reset_collection(self, key: tuple[int, int], total: int | None) -> None:
        self.crl_key = key
        self.total_pieces = total
        self.received_pieces = {}

    def handle_fingerprint(self, fp: Fingerprint, pca_key: VerifyKey | None = None, sender=None,
                           preverified: bool = False) -> bool:
        """Adopt ``fp`` if authentic and not older than what we hold.

        ``preverified`` is set when the fingerprint rode inside a pseudonym whose
        signature was already checked as part of normal message validation.
        """
        key = (fp.gamma_crl_index, fp.crl_version)
        if self.crl_key is not None and key < self.crl_key:
            return False
        if self.current_fingerprint is not None and key == self.crl_key:
            return False
        if not preverified:
            self.signature_verifications += 1
            if not fp.verify(pca_key or self.pca_key):
                self.misbehavior[sender] += 1
                return False
        self.current_fingerprint = fp
        if key != self.crl_key:
            self._reset_collection(key, fp.piece_count)
        else:
            self.total_pieces = fp.piece_count
            self.received_pieces = {i: p for i, p in self.received_pieces.items()
                                    if fp.covers(p.digest())}
        return True

    def handle_carrier_pseudonym(self, pseudonym: Pseudonym, sender=None) -> bool:
        """Validate a CAM's pseudonym; an embedded fingerprint comes along for free."""
        self.signature_verifications += 1
        if not pseudonym.verify(self.pca_key):
            self.misbehavior[sender] += 1
            return False
        if pseudonym.carrier_payload is None:
            return False
        return self.handle_fingerprint(pseudonym.carrier_payload, sender=sender, preverified=True)

    # base CRL pieces -------------------------------------------------------

    def validate_piece(self, piece: CrlPiece) -> bool:
        if self.mode == "baseline":
            self.signature_verifications += 1
            return verify_piece_signature(piece, self.pca_key)
        if self.current_fingerprint is None:
            return False
        self.bf_checks += 1
        return self.current_fingerprint.covers(piece.digest())

    def handle_piece(self, piece: CrlPiece, sender=None) -> bool:
        if self.mode == "vehicle_centric":
            if self.current_fingerprint is None:
                return False
            if (piece.gamma_crl_index, piece.crl_version) != self.crl_key:
                return False  # another CRL version: nothing to check it against
        if piece.piece_index in self.received_pieces and \
                (piece.gamma_crl_index, piece.crl_version) == self.crl_key:
            return False
        if not self.validate_piece(piece):
            return self._drop(sender)
        if self.mode == "baseline":
            key = (piece.gamma_crl_index, piece.crl_version)
            if self.crl_key is None or key > self.crl_key:
                self._reset_collection(key, piece.total_pieces)
            elif key < self.crl_key:
                return False
        self.received_pieces[piece.piece_index] = piece
        self.anchors.setdefault(piece.gamma_crl_index, piece.tesla_anchor)
        self._pending.append(piece)
        return True

    def _drop(self, sender) -> bool:
        self.forged_dropped += 1
        self.misbehavior[sender] += 1
        return False

    def missing_indices(self) -> set[int] | None:
        """Indices still needed; ``None`` while the piece count is unknown."""
        if self.total_pieces is None:
            return None
        return set(range(self.total_pieces)) - self.received_pieces.keys()

    @staticmethod
    def parse_crl_piece(piece: CrlPiece) -> list[tuple[bytes, int]]:
        out = []
        for entry in piece.entries:
            out.extend(expand_entry_with_intervals(entry))
        out.sort(key=lambda x: x[1])
        return out

    def _flush(self) -> None:
        pending, self._pending = self._pending, []
        for piece in pending:
            for serial, slot in self.parse_crl_piece(piece):
                self._insert(serial, slot)

    def _insert(self, serial: bytes, slot: int) -> None:
        row = self._store[slot]
        j = bisect.bisect_left(row, serial)
        if j == len(row) or row[j] != serial:
            row.insert(j, serial)

    def is_revoked(self, serial: bytes, slot: int) -> bool:
        if self._pending:
            self._flush()
        row = self._store.get(slot)
        if not row:
            return False
        j = bisect.bisect_left(row, serial)
        return j < len(row) and row[j] == serial

    def prune(self, before_slot: int) -> int:
        if self._pending:
            self._flush()
        dead = [s for s in self._store if s < before_slot]
        for s in dead:
            del self._store[s]
        return len(dead)

    def revocation_store(self) -> set[tuple[bytes, int]]:
        if self._pending:
            self._flush()
        return {(s, slot) for slot, row in self._store.items() for s in row}

    # delta CRL -------------------------------------------------------------

    def handle_anchor(self, gamma_crl_index: int, anchor: bytes, signature: Signature) -> bool:
        self.signature_verifications += 1
        if not verify_anchor(gamma_crl_index, anchor, signature, self.pca_key):
            return False
        self.anchors[gamma_crl_index] = anchor
        return True

    def key_release_time(self, gamma_crl_index: int, interval_i: int) -> float:
        t = gamma_crl_index * self.gamma_crl + (interval_i - 1) * self.tau_p
        return t - self.tau_p / 2 if self.optimized_disclosure else t

    def delta_safe(self, gamma_crl_index: int, interval_i: int, now: float) -> bool:
        """TESLA condition: the key cannot have been released yet, even allowing for clock error."""
        local = now + self.clock_offset
        return local + self.max_clock_error < self.key_release_time(gamma_crl_index, interval_i)

    def buffer_delta_piece(self, piece: DeltaCrlPiece, now: float, sender=None) -> bool:
        g, i = piece.gamma_crl_index, piece.interval_index
        if not 1 <= i <= self.n_intervals:
            return self._drop(sender)
        if (g, i) in self.known_keys or not self.delta_safe(g, i, now):
            return False
        if self.rate_limiter is not None and not self.rate_limiter.allow(sender, now):
            self.misbehavior[sender] += 1
            return False
        if self.buffer_cap_bytes is not None and self.buffered_bytes + piece.size > self.buffer_cap_bytes:
            return False
        self.delta_buffer[(g, i)].append((piece, now))
        self.buffered_bytes += piece.size
        if i > 1 and (g, i - 1) not in self.known_keys:
            self.validate_on_key_disclosure(g, i - 1, piece.disclosed_prev_key)
        return True

    def validate_on_key_disclosure(self, gamma_crl_index: int, interval_i: int, key: bytes) -> DeltaOutcome:
        outcome = DeltaOutcome()
        anchor = self.anchors.get(gamma_crl_index)
        if anchor is None:
            return outcome
        # shortcut through a later known key when we have one
        if not verify_key_against_anchor(key, interval_i, anchor):
            return outcome
        window_first = gamma_crl_index * self.n_intervals
        j = interval_i
        k = key
        while j >= 1 and (gamma_crl_index, j) not in self.known_keys:
            self.known_keys[(gamma_crl_index, j)] = k
            self._release(gamma_crl_index, j, k, window_first, outcome)
            k = hash_iter(k, 1)
            j -= 1
        return outcome

    def _release(self, g: int, i: int, key: bytes, window_first: int, outcome: DeltaOutcome) -> None:
        buffered = self.delta_buffer.pop((g, i), [])
        if not buffered:
            return
        _, mac_key = derive_interval_keys(key, i)
        for piece, _ in buffered:
            self.buffered_bytes -= piece.size
            if mac_verify(mac_key, piece.authenticated_part(), piece.mac):
                outcome.accepted.append(piece)
                for s in piece.serials:
                    self._insert(s, window_first + i - 1)
            else:
                outcome.rejected.append(piece)
                self.forged_dropped += 1

    # peer service ----------------------------------------------------------

    def choose_piece(self, wanted) -> CrlPiece | None:
        if self.selfish:
            return None
        held = sorted(set(wanted) & self.received_pieces.keys())
        if not held:
            return None
        return self.received_pieces[self.rng.choice(held)]

    def answer_request(self, req: PieceRequest, now: float) -> CrlPiece | None:
        if not req.verify(self.pca_key, now):
            return None
        if self.crl_key is None or req.gamma_crl_index != self.crl_key[0]:
            return None
        return self.choose_piece(req.missing_indices)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "crl": list(self.crl_key) if self.crl_key else None,
            "total_pieces": self.total_pieces,
            "received": sorted(self.received_pieces),
            "cognizant": self.cognizant,
            "known_keys": sorted(f"{g}:{i}" for g, i in self.known_keys),
            "buffered_bytes": self.buffered_bytes,
            "forged_dropped": self.forged_dropped,
            "misbehavior": {str(k): v for k, v in sorted(self.misbehavior.items(), key=lambda kv: str(kv[0]))},
            "store_size": len(self.revocation_store()),
        }
