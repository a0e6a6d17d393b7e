"""Bloom filter, signed CRL fingerprints and the sizing/attack calculators."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .crypto import Signature, SigningKey, VerifyKey, verify_sig

_LN2_SQ = math.log(2) ** 2


class ParameterError(ValueError):
    pass


def bf_params(n: int, p: float, conservative: bool = False) -> tuple[int, int]:
    """Filter size ``m`` (bits) and hash count ``k`` for ``n`` items at target FP rate ``p``.

    The closed forms ``m = ceil(-n ln p / ln^2 2)`` and ``k = ceil(-log2 p)`` can
    overshoot ``p`` by a few percent under the exact FP formula (up to ~25% for
    n=1). With ``conservative=True``, ``m`` is grown until the exact rate is <= p.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not 0.0 < p < 1.0:
        raise ParameterError("p must lie strictly between 0 and 1")
    m = math.ceil(-n * math.log(p) / _LN2_SQ)
    k = max(math.ceil(-math.log2(p)), 1)
    if conservative:
        while false_positive_prob(m, k, n) > p:
            m += 1
    return m, k


def optimal_k(m: int, n: int) -> int:
    """Hash count minimising the FP rate for a fixed-size filter."""
    if n <= 0:
        return 1
    return max(1, round(m / n * math.log(2)))


def false_positive_prob(m: int, k: int, n: int) -> float:
    """``[1 - (1 - 1/m)^(k n)]^k``, evaluated in log space so tiny values survive."""
    if m < 1 or k < 1 or n < 0:
        raise ParameterError("need m >= 1, k >= 1, n >= 0")
    if n == 0:
        return 0.0
    if m == 1:
        return 1.0
    filled = -math.expm1(k * n * math.log1p(-1.0 / m))
    return filled ** k


def attack_time(p: float, k: int, hashrate: float) -> float:
    """Expected seconds for a query-only forger to hit one false positive.

    Each candidate costs ``k`` hash evaluations and succeeds with probability ``p``.
    """
    if p <= 0 or k <= 0 or hashrate <= 0:
        raise ParameterError("p, k and hashrate must be positive")
    return k / (p * hashrate)


def sync_period(clock_accuracy_ppm: float, max_error_seconds: float) -> float:
    """Longest interval between clock syncs that keeps drift under ``max_error_seconds``."""
    if clock_accuracy_ppm <= 0 or max_error_seconds <= 0:
        raise ParameterError("both arguments must be positive")
    return max_error_seconds / (clock_accuracy_ppm * 1e-6)


def probe_positions(item: bytes, m: int, k: int) -> list[int]:
    """``k`` independent bit positions: consecutive 8-byte words of SHAKE-256(0x02 || item), mod m.

    Double hashing (h1 + j*h2 mod m) is avoided on purpose. Two items that share
    h2 probe overlapping progressions, which puts a floor near 1/m^2 under the
    false-positive rate, far above the 1e-20 targets fingerprints are sized for.
    """
    words = struct.unpack(f">{k}Q", hashlib.shake_256(b"\x02" + item).digest(8 * k))
    return [w % m for w in words]


class BloomFilter:
    """Plain (non-counting) Bloom filter with ``k`` independent hash positions per item.

    Bits are stored MSB-first: bit ``i`` lives in byte ``i // 8`` under mask
    ``0x80 >> (i % 8)``, which is also the wire layout.
    """

    def __init__(self, m: int, k: int, bits: bytes | bytearray | None = None, n_inserted: int = 0):
        if m < 1 or k < 1:
            raise ParameterError("need m >= 1 and k >= 1")
        self.m = m
        self.k = k
        nbytes = (m + 7) // 8
        if bits is None:
            self.bits = bytearray(nbytes)
        else:
            if len(bits) != nbytes:
                raise ParameterError(f"bit array must be {nbytes} bytes for m={m}")
            self.bits = bytearray(bits)
        self.n_inserted = n_inserted
        self._frozen = False
        self._unpacked: np.ndarray | None = None

    @classmethod
    def for_capacity(cls, n: int, p: float) -> "BloomFilter":
        m, k = bf_params(n, p, conservative=True)
        return cls(m, k)

    def _positions(self, item: bytes) -> list[int]:
        return probe_positions(item, self.m, self.k)

    def add(self, item: bytes) -> None:
        if self._frozen:
            raise RuntimeError("filter is frozen")
        bits = self.bits
        for pos in self._positions(item):
            bits[pos >> 3] |= 0x80 >> (pos & 7)
        self.n_inserted += 1
        self._unpacked = None

    def __contains__(self, item: bytes) -> bool:
        # same positions as probe_positions, vectorised: membership checks are the hot path
        if self._unpacked is None:
            self._unpacked = np.unpackbits(np.frombuffer(bytes(self.bits), dtype=np.uint8)).astype(bool)
        words = np.frombuffer(hashlib.shake_256(b"\x02" + item).digest(8 * self.k), dtype=">u8")
        return bool(self._unpacked[words % np.uint64(self.m)].all())

    def freeze(self) -> "BloomFilter":
        self._frozen = True
        return self

    def popcount(self) -> int:
        return sum(bin(b).count("1") for b in self.bits)

    def expected_fp(self) -> float:
        return false_positive_prob(self.m, self.k, self.n_inserted)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BloomFilter):
            return NotImplemented
        return (self.m, self.k, self.n_inserted, bytes(self.bits)) == (
            other.m, other.k, other.n_inserted, bytes(other.bits))

    def __repr__(self) -> str:
        return f"BloomFilter(m={self.m}, k={self.k}, n_inserted={self.n_inserted})"


def bf_insert(bf: BloomFilter, item: bytes) -> None:
    bf.add(item)


def bf_query(bf: BloomFilter, item: bytes) -> bool:
    return item in bf


FP_MAGIC = b"VFP1"
_FP_HEADER = struct.Struct(">4sQIIIHI")


@dataclass(frozen=True)
class Fingerprint:
    """PCA-signed Bloom filter over the digests of one CRL interval's pieces."""

    gamma_crl_index: int
    crl_version: int
    piece_count: int
    filter: BloomFilter
    signature: Signature

    def signed_payload(self) -> bytes:
        return fingerprint_payload(self.gamma_crl_index, self.crl_version, self.piece_count, self.filter)

    def encode(self) -> bytes:
        return self.signed_payload() + self.signature.encode()

    @classmethod
    def decode(cls, data: bytes) -> "Fingerprint":
        if len(data) < _FP_HEADER.size:
            raise ValueError("truncated fingerprint")
        magic, gidx, ver, count, m, k, nbytes = _FP_HEADER.unpack_from(data, 0)
        if magic != FP_MAGIC:
            raise ValueError("bad fingerprint magic")
        start = _FP_HEADER.size
        if nbytes != (m + 7) // 8 or len(data) < start + nbytes:
            raise ValueError("bad fingerprint bit array length")
        bf = BloomFilter(m, k, data[start:start + nbytes], n_inserted=count).freeze()
        sig, end = Signature.decode(data, start + nbytes)
        if end != len(data):
            raise ValueError("trailing bytes after fingerprint")
        return cls(gidx, ver, count, bf, sig)

    def verify(self, pubkey: VerifyKey) -> bool:
        return verify_sig(pubkey, self.signed_payload(), self.signature)

    def covers(self, piece_digest: bytes) -> bool:
        return piece_digest in self.filter

    @property
    def size_bytes(self) -> int:
        return len(self.encode())


def fingerprint_payload(gamma_crl_index: int, crl_version: int, piece_count: int, bf: BloomFilter) -> bytes:
    return _FP_HEADER.pack(FP_MAGIC, gamma_crl_index, crl_version, piece_count, bf.m, bf.k,
                           len(bf.bits)) + bytes(bf.bits)


def build_fingerprint(gamma_crl_index: int, crl_version: int, piece_digests: list[bytes],
                      signer: SigningKey, fp_rate: float) -> Fingerprint:
    n = max(len(piece_digests), 1)
    bf = BloomFilter.for_capacity(n, fp_rate)
    for d in piece_digests:
        bf.add(d)
    bf.freeze()
    sig = signer.sign(fingerprint_payload(gamma_crl_index, crl_version, len(piece_digests), bf))
    return Fingerprint(gamma_crl_index, crl_version, len(piece_digests), bf, sig)


def concatenated_digest_size(n_pieces: int, digest_bytes: int = 20) -> int:
    """Size of the naive authenticator that lists one digest per piece."""
    return n_pieces * digest_bytes
