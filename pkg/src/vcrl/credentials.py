"""Time-aligned pseudonym batches and the revocation entries that cover them.

Serial numbers inside a batch form a one-way chain::

    C_w  = H^w(rnd_seed)
    SN_1 = H(sn_anchor || C_1)
    SN_w = H(SN_{w-1} || C_w)

so disclosing ``(SN_i, C_i)`` lets anyone derive ``SN_{i+1} .. SN_D`` while the
serials before ``i`` stay hidden behind the hash.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from .bloom import Fingerprint, ParameterError
from .crypto import (
    DIGEST_SIZE,
    H,
    Scheme,
    Signature,
    SigningKey,
    VerifyKey,
    verify_sig,
)

ENTRY_SIZE = 72
ENTRY_TAG = 0xE1
_ENTRY = struct.Struct(">BBI32s32sH")
assert _ENTRY.size == ENTRY_SIZE


def chain_step(serial: bytes, chain_value: bytes) -> bytes:
    return H(serial + chain_value)


@dataclass(frozen=True)
class Pseudonym:
    serial: bytes
    valid_from: int
    valid_to: int
    index_in_batch: int
    issuer_signature: Signature | None = None
    carrier_payload: Fingerprint | None = None
    verify_key: VerifyKey | None = None

    def signed_payload(self) -> bytes:
        out = [b"VPS1", self.serial, struct.pack(">QQH", self.valid_from, self.valid_to, self.index_in_batch)]
        if self.verify_key is None:
            out.append(b"\x00")
        else:
            out.append(struct.pack(">BH", 1 if self.verify_key.scheme is Scheme.ECDSA_P256 else 2,
                                   len(self.verify_key.material)))
            out.append(self.verify_key.material)
        if self.carrier_payload is None:
            out.append(struct.pack(">I", 0))
        else:
            fp = self.carrier_payload.encode()
            out.append(struct.pack(">I", len(fp)))
            out.append(fp)
        return b"".join(out)

    def verify(self, pca_key: VerifyKey) -> bool:
        """One signature check authenticates the pseudonym and any embedded fingerprint."""
        if self.issuer_signature is None:
            return False
        return verify_sig(pca_key, self.signed_payload(), self.issuer_signature)

    @property
    def is_carrier(self) -> bool:
        return self.carrier_payload is not None

    def interval(self, tau_p: int) -> int:
        return self.valid_from // tau_p


@dataclass(frozen=True)
class PseudonymBatch:
    gamma_index: int
    tau_p: int
    gamma_len: int
    sn_anchor: bytes
    rnd_seed: bytes
    pseudonyms: tuple[Pseudonym, ...]
    ticket_id: bytes = b""

    @property
    def size(self) -> int:
        return len(self.pseudonyms)

    @property
    def serials(self) -> list[bytes]:
        return [p.serial for p in self.pseudonyms]

    @property
    def start(self) -> int:
        return self.gamma_index * self.gamma_len

    def pseudonym(self, index: int) -> Pseudonym:
        """1-based access, matching ``index_in_batch``."""
        if not 1 <= index <= self.size:
            raise IndexError(f"pseudonym index {index} outside 1..{self.size}")
        return self.pseudonyms[index - 1]

    def index_at(self, t: float) -> int | None:
        """Index of the pseudonym valid at time ``t``, if any."""
        if not self.start <= t < self.start + self.gamma_len:
            return None
        return int((t - self.start) // self.tau_p) + 1

    def to_json(self) -> str:
        return json.dumps(batch_to_dict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PseudonymBatch":
        return batch_from_dict(json.loads(text))


@dataclass(frozen=True)
class RevocationEntry:
    """``(SN_z, C_z, n_z)`` plus the absolute pseudonym interval of ``SN_z``."""

    first_revoked_serial: bytes
    chain_value: bytes
    remaining: int
    first_interval: int = 0

    def __post_init__(self):
        if self.remaining < 0 or self.remaining > 0xFFFF:
            raise ParameterError("remaining must fit in 0..65535")
        if len(self.first_revoked_serial) != DIGEST_SIZE or len(self.chain_value) != DIGEST_SIZE:
            raise ParameterError("serial and chain value must be 32 bytes")

    def encode(self) -> bytes:
        return _ENTRY.pack(ENTRY_TAG, 0, self.first_interval, self.first_revoked_serial,
                           self.chain_value, self.remaining)

    @classmethod
    def decode(cls, data: bytes, offset: int = 0) -> "RevocationEntry":
        if len(data) < offset + ENTRY_SIZE:
            raise ValueError("truncated revocation entry")
        tag, flags, first_interval, serial, chain_value, remaining = _ENTRY.unpack_from(data, offset)
        if tag != ENTRY_TAG or flags != 0:
            raise ValueError("malformed revocation entry")
        return cls(serial, chain_value, remaining, first_interval)

    @property
    def last_interval(self) -> int:
        return self.first_interval + self.remaining


def _batch_chain(sn_anchor: bytes, rnd_seed: bytes, d: int) -> list[tuple[bytes, bytes]]:
    out = []
    serial, c = sn_anchor, rnd_seed
    for _ in range(d):
        c = H(c)
        serial = chain_step(serial, c)
        out.append((serial, c))
    return out


def issue_batch(gamma_index: int, tau_p: int, gamma_len: int, signer: SigningKey, *,
                sn_anchor: bytes, rnd_seed: bytes, is_carrier: bool = False,
                fingerprint: Fingerprint | None = None, ticket_id: bytes = b"",
                vehicle_keys: list[VerifyKey] | None = None) -> PseudonymBatch:
    if tau_p <= 0 or gamma_len <= 0 or gamma_len % tau_p:
        raise ParameterError(f"gamma length {gamma_len} is not a positive multiple of tau_p {tau_p}")
    if is_carrier and fingerprint is None:
        raise ParameterError("a carrier batch needs a fingerprint")
    d = gamma_len // tau_p
    if vehicle_keys is not None and len(vehicle_keys) != d:
        raise ParameterError("need one vehicle key per pseudonym")
    start = gamma_index * gamma_len
    pseudonyms = []
    for w, (serial, _) in enumerate(_batch_chain(sn_anchor, rnd_seed, d), start=1):
        unsigned = Pseudonym(
            serial=serial,
            valid_from=start + (w - 1) * tau_p,
            valid_to=start + w * tau_p,
            index_in_batch=w,
            carrier_payload=fingerprint if is_carrier else None,
            verify_key=vehicle_keys[w - 1] if vehicle_keys else None,
        )
        sig = signer.sign(unsigned.signed_payload())
        pseudonyms.append(Pseudonym(unsigned.serial, unsigned.valid_from, unsigned.valid_to, w, sig,
                                    unsigned.carrier_payload, unsigned.verify_key))
    return PseudonymBatch(gamma_index, tau_p, gamma_len, sn_anchor, rnd_seed, tuple(pseudonyms), ticket_id)


def chain_value_at(batch: PseudonymBatch, index: int) -> bytes:
    c = batch.rnd_seed
    for _ in range(index):
        c = H(c)
    return c


def make_revocation_entry(batch: PseudonymBatch, from_index: int) -> RevocationEntry:
    if not 1 <= from_index <= batch.size:
        raise ParameterError(f"from_index {from_index} outside 1..{batch.size}")
    p = batch.pseudonym(from_index)
    return RevocationEntry(p.serial, chain_value_at(batch, from_index), batch.size - from_index,
                           p.valid_from // batch.tau_p)


def expand_entry(entry: RevocationEntry) -> list[bytes]:
    """All serials covered by ``entry``: ``SN_z`` followed by ``remaining`` derived ones."""
    serial, c = entry.first_revoked_serial, entry.chain_value
    out = [serial]
    for _ in range(entry.remaining):
        c = H(c)
        serial = chain_step(serial, c)
        out.append(serial)
    return out


def expand_entry_with_intervals(entry: RevocationEntry) -> list[tuple[bytes, int]]:
    return [(s, entry.first_interval + w) for w, s in enumerate(expand_entry(entry))]


def _sig_to_obj(sig: Signature | None):
    return None if sig is None else {"scheme": sig.scheme.value, "value": sig.value.hex()}


def _sig_from_obj(obj) -> Signature | None:
    return None if obj is None else Signature(Scheme(obj["scheme"]), bytes.fromhex(obj["value"]))


def batch_to_dict(batch: PseudonymBatch) -> dict:
    return {
        "gamma_index": batch.gamma_index,
        "tau_p": batch.tau_p,
        "gamma_len": batch.gamma_len,
        "sn_anchor": batch.sn_anchor.hex(),
        "rnd_seed": batch.rnd_seed.hex(),
        "ticket_id": batch.ticket_id.hex(),
        "pseudonyms": [
            {
                "serial": p.serial.hex(),
                "valid_from": p.valid_from,
                "valid_to": p.valid_to,
                "index": p.index_in_batch,
                "signature": _sig_to_obj(p.issuer_signature),
                "carrier": p.carrier_payload.encode().hex() if p.carrier_payload else None,
                "verify_key": None if p.verify_key is None else
                {"scheme": p.verify_key.scheme.value, "material": p.verify_key.material.hex()},
            }
            for p in batch.pseudonyms
        ],
    }


def batch_from_dict(obj: dict) -> PseudonymBatch:
    pseudonyms = []
    for p in obj["pseudonyms"]:
        vk = p.get("verify_key")
        pseudonyms.append(Pseudonym(
            serial=bytes.fromhex(p["serial"]),
            valid_from=p["valid_from"],
            valid_to=p["valid_to"],
            index_in_batch=p["index"],
            issuer_signature=_sig_from_obj(p["signature"]),
            carrier_payload=Fingerprint.decode(bytes.fromhex(p["carrier"])) if p["carrier"] else None,
            verify_key=None if vk is None else VerifyKey(Scheme(vk["scheme"]), bytes.fromhex(vk["material"])),
        ))
    return PseudonymBatch(obj["gamma_index"], obj["tau_p"], obj["gamma_len"],
                          bytes.fromhex(obj["sn_anchor"]), bytes.fromhex(obj["rnd_seed"]),
                          tuple(pseudonyms), bytes.fromhex(obj.get("ticket_id", "")))
