"""Hashing, hash chains, MACs and signatures.

Two hash functions are used throughout: ``H`` for chain steps and general
digests, and ``H'`` for deriving per-interval MAC keys. Both are SHA-256 with
a one-byte domain tag prepended (0x00 and 0x01 respectively).
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from enum import Enum

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)

DIGEST_SIZE = 32
CHAIN_TAG = b"\x00"
MAC_KEY_TAG = b"\x01"
MOCK_SIG_SIZE = 16
ECDSA_SIG_SIZE = 64

_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


def H(data: bytes) -> bytes:
    """Chain-step hash."""
    return hashlib.sha256(CHAIN_TAG + data).digest()


def H_mac(data: bytes) -> bytes:
    """Domain-separated hash used to turn a chain key into a MAC key."""
    return hashlib.sha256(MAC_KEY_TAG + data).digest()


def _check_digest(value: bytes, name: str = "digest") -> None:
    if len(value) != DIGEST_SIZE:
        raise ValueError(f"{name} must be {DIGEST_SIZE} bytes, got {len(value)}")


def hash_chain(seed: bytes, length: int) -> list[bytes]:
    """Return ``[seed, H(seed), ..., H^length(seed)]``."""
    if length < 0:
        raise ValueError("length must be >= 0")
    out = [seed]
    for _ in range(length):
        out.append(H(out[-1]))
    return out


def hash_iter(value: bytes, times: int) -> bytes:
    for _ in range(times):
        value = H(value)
    return value


@dataclass(frozen=True)
class MacKey:
    key: bytes
    interval_index: int


def derive_interval_keys(k_i: bytes, i: int) -> tuple[bytes, MacKey]:
    """Split chain key ``K_i`` into the previous chain key and the MAC key for ``i``."""
    if i < 1:
        raise ValueError("interval index must be >= 1")
    return H(k_i), MacKey(H_mac(k_i), i)


def verify_key_against_anchor(candidate: bytes, i: int, anchor: bytes) -> bool:
    """True iff hashing ``candidate`` ``i`` times lands on ``anchor``."""
    if i < 1 or len(candidate) != DIGEST_SIZE:
        return False
    return hmac.compare_digest(hash_iter(candidate, i), anchor)


def mac_compute(key: MacKey, payload: bytes) -> bytes:
    return hmac.new(key.key, payload, hashlib.sha256).digest()


def mac_verify(key: MacKey, payload: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac_compute(key, payload), tag)


class Scheme(str, Enum):
    ECDSA_P256 = "ecdsa_p256"
    MOCK = "mock"


_SCHEME_CODES = {Scheme.ECDSA_P256: 1, Scheme.MOCK: 2}
_CODE_SCHEMES = {v: k for k, v in _SCHEME_CODES.items()}


@dataclass(frozen=True)
class Signature:
    scheme: Scheme
    value: bytes

    def encode(self) -> bytes:
        return struct.pack(">BH", _SCHEME_CODES[self.scheme], len(self.value)) + self.value

    @classmethod
    def decode(cls, data: bytes, offset: int = 0) -> tuple["Signature", int]:
        if len(data) < offset + 3:
            raise ValueError("truncated signature")
        code, n = struct.unpack_from(">BH", data, offset)
        if code not in _CODE_SCHEMES:
            raise ValueError(f"unknown signature scheme code {code}")
        start = offset + 3
        if len(data) < start + n:
            raise ValueError("truncated signature")
        return cls(_CODE_SCHEMES[code], bytes(data[start:start + n])), start + n

    @property
    def is_mock(self) -> bool:
        return self.scheme is Scheme.MOCK


@dataclass(frozen=True)
class VerifyKey:
    scheme: Scheme
    # SEC1 compressed point for ECDSA, shared secret for the mock scheme
    material: bytes


class SigningKey:
    """Private signing key. The mock scheme is a keyed hash and is symmetric."""

    def __init__(self, scheme: Scheme | str, secret: bytes):
        self.scheme = Scheme(scheme)
        self._secret = secret
        if self.scheme is Scheme.ECDSA_P256:
            d = int.from_bytes(hashlib.sha256(b"vcrl-ecdsa" + secret).digest(), "big")
            d = d % (_P256_ORDER - 1) + 1
            self._ec = ec.derive_private_key(d, ec.SECP256R1())
        else:
            self._ec = None

    @classmethod
    def generate(cls, scheme: Scheme | str = Scheme.ECDSA_P256, seed: bytes | None = None) -> "SigningKey":
        import os

        return cls(scheme, seed if seed is not None else os.urandom(32))

    def public_key(self) -> VerifyKey:
        if self._ec is not None:
            from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

            point = self._ec.public_key().public_bytes(Encoding.X962, PublicFormat.CompressedPoint)
            return VerifyKey(self.scheme, point)
        return VerifyKey(self.scheme, self._secret)

    def sign(self, payload: bytes) -> Signature:
        if self._ec is not None:
            der = self._ec.sign(payload, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
            r, s = decode_dss_signature(der)
            return Signature(self.scheme, r.to_bytes(32, "big") + s.to_bytes(32, "big"))
        tag = hmac.new(self._secret, payload, hashlib.sha256).digest()[:MOCK_SIG_SIZE]
        return Signature(self.scheme, tag)


def sign(key: SigningKey, payload: bytes) -> Signature:
    return key.sign(payload)


def verify_sig(pubkey: VerifyKey, payload: bytes, sig: Signature) -> bool:
    """Verify ``sig`` over ``payload``. Malformed input yields False."""
    if not isinstance(sig, Signature) or sig.scheme is not pubkey.scheme:
        return False
    if pubkey.scheme is Scheme.MOCK:
        expected = hmac.new(pubkey.material, payload, hashlib.sha256).digest()[:MOCK_SIG_SIZE]
        return hmac.compare_digest(expected, sig.value)
    if len(sig.value) != ECDSA_SIG_SIZE:
        return False
    try:
        pub = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256R1(), pubkey.material)
        r = int.from_bytes(sig.value[:32], "big")
        s = int.from_bytes(sig.value[32:], "big")
        pub.verify(encode_dss_signature(r, s), payload, ec.ECDSA(hashes.SHA256()))
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class KeySchedule:
    """One-way key chain for a CRL interval; ``chain[0]`` is the signed anchor."""

    gamma_crl_index: int
    chain: tuple[bytes, ...]
    anchor_signature: Signature

    @property
    def anchor(self) -> bytes:
        return self.chain[0]

    @property
    def n_intervals(self) -> int:
        return len(self.chain) - 1

    def key(self, i: int) -> bytes:
        if not 0 <= i <= self.n_intervals:
            raise IndexError(f"interval {i} outside 0..{self.n_intervals}")
        return self.chain[i]


def anchor_payload(gamma_crl_index: int, anchor: bytes) -> bytes:
    return b"VCRL-ANCHOR" + struct.pack(">Q", gamma_crl_index) + anchor


def make_key_schedule(gamma_crl_index: int, n_intervals: int, seed: bytes, signer: SigningKey) -> KeySchedule:
    """Build the chain by hashing ``seed`` forward; keys are used in reverse order."""
    _check_digest(seed, "seed")
    chain = tuple(reversed(hash_chain(seed, n_intervals)))
    sig = signer.sign(anchor_payload(gamma_crl_index, chain[0]))
    return KeySchedule(gamma_crl_index, chain, sig)


def verify_anchor(schedule_index: int, anchor: bytes, sig: Signature, pubkey: VerifyKey) -> bool:
    return verify_sig(pubkey, anchor_payload(schedule_index, anchor), sig)
