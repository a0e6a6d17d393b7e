"""Synthetic revocation workload for one simulated day."""

from __future__ import annotations

import random
from dataclasses import dataclass

from ..authority import CrlPiece, RevocationAuthority
from ..bloom import Fingerprint
from ..credentials import Pseudonym
from ..crypto import Scheme, SigningKey
from .config import SimConfig

DAY = 86_400


@dataclass
class CrlMaterial:
    authority: RevocationAuthority
    mode: str
    pieces: list[CrlPiece]
    fingerprint: Fingerprint | None
    carrier_pseudonym: Pseudonym | None
    revoked_per_day: int
    window_entries: int


def daily_revocations(cfg: SimConfig) -> int:
    """Revoked pseudonyms per day: rate x (vehicle-seconds on the road / tau_p)."""
    return round(cfg.revocation_rate * cfg.daily_vehicle_seconds / cfg.tau_p)


def make_signer(cfg: SimConfig) -> SigningKey:
    scheme = Scheme.ECDSA_P256 if cfg.signature_scheme == "ecdsa_p256" else Scheme.MOCK
    secret = random.Random(f"{cfg.seed}:pca").getrandbits(256).to_bytes(32, "big")
    return SigningKey(scheme, secret)


def populate_day(authority: RevocationAuthority, n_revoked: int, rng: random.Random,
                 recorded_at: float = -1.0) -> int:
    """Revoke ``n_revoked`` pseudonyms spread uniformly over slots of one day.

    Each event picks a slot, issues the batch covering it and revokes the batch
    from that slot on, so a batch longer than one pseudonym contributes every
    later pseudonym too. Returns the number of revocation events.
    """
    slots_per_day = DAY // authority.tau_p
    per_batch = authority.gamma // authority.tau_p
    revoked = events = 0
    while revoked < n_revoked:
        slot = rng.randrange(slots_per_day)
        gamma_index = slot // per_batch
        batch_id, _ = authority.issue_batch(gamma_index)
        authority.revoke(batch_id, slot, now=recorded_at)
        revoked += (gamma_index + 1) * per_batch - slot
        events += 1
    return events


def build_material(cfg: SimConfig) -> CrlMaterial:
    rng = random.Random(f"{cfg.seed}:workload")
    authority = RevocationAuthority(make_signer(cfg), tau_p=cfg.tau_p, gamma=cfg.gamma,
                                    gamma_crl=cfg.gamma_crl, fp_rate=cfg.fp_rate, seed=cfg.seed)
    n = daily_revocations(cfg)
    populate_day(authority, n, rng)
    if cfg.mode == "baseline":
        pieces = authority.build_full_crl(cfg.bandwidth, 0, DAY // cfg.tau_p - 1)
        entries = sum(len(p.entries) for p in pieces)
        return CrlMaterial(authority, cfg.mode, pieces, None, None, n, entries)
    base = authority.build_base_crl(0, cfg.bandwidth, now=0.0)
    carrier = None
    if cfg.carrier_fraction > 0:
        _, batch = authority.issue_batch(0, is_carrier=True, fingerprint=base.fingerprint)
        carrier = batch.pseudonyms[0]
    entries = sum(len(p.entries) for p in base.pieces)
    return CrlMaterial(authority, cfg.mode, base.pieces, base.fingerprint, carrier, n, entries)
