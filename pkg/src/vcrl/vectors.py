"""Deterministic golden vectors for cross-implementation testing.

Everything is derived from one integer seed and signed with deterministic
ECDSA-P256, so the JSON regenerates byte for byte.
"""

from __future__ import annotations

import random

from .authority import RevocationAuthority
from .credentials import batch_to_dict, expand_entry, make_revocation_entry
from .crypto import H, H_mac, Scheme, SigningKey, derive_interval_keys

TAU_P = 60
GAMMA = 600
BANDWIDTH = 256


def _hex(b: bytes) -> str:
    return b.hex()


def golden_vectors(seed: int = 1) -> dict:
    secret = random.Random(f"{seed}:vectors-pca").getrandbits(256).to_bytes(32, "big")
    signer = SigningKey(Scheme.ECDSA_P256, secret)
    ra = RevocationAuthority(signer, tau_p=TAU_P, gamma=GAMMA, gamma_crl=GAMMA, fp_rate=1e-20, seed=seed)
    pub = ra.public_key

    ids = [ra.issue_batch(0)[0] for _ in range(4)]
    batch = ra.ledger.records[ids[0]].batch
    from_index = 4
    entry = make_revocation_entry(batch, from_index)
    ra.revoke(ids[0], from_index - 1, now=0.0)
    ra.revoke(ids[1], 0, now=0.0)
    ra.revoke(ids[2], 7, now=0.0)

    base = ra.build_base_crl(0, BANDWIDTH, now=0.0)

    # revoked after the base CRL went out: travels as a delta for slot 5 (interval 6)
    ra.revoke(ids[3], 5, now=200.0)
    interval = 6
    schedule = ra.schedule(0)
    k_i = schedule.key(interval)
    deltas = ra.gen_delta_crl(0, interval, k_i, BANDWIDTH, now=200.0)
    _, mac_key = derive_interval_keys(k_i, interval)

    return {
        "seed": seed,
        "public_key": {"scheme": pub.scheme.value, "material": _hex(pub.material)},
        "hash": {
            "input": _hex(b"abc"),
            "H": _hex(H(b"abc")),
            "H_mac": _hex(H_mac(b"abc")),
        },
        "revocation": {
            "batch": batch_to_dict(batch),
            "from_index": from_index,
            "entry": _hex(entry.encode()),
            "expansion": [_hex(s) for s in expand_entry(entry)],
            "issuer_serials": [_hex(s) for s in batch.serials],
        },
        "base_crl": {
            "gamma_crl_index": 0,
            "bandwidth": BANDWIDTH,
            "pieces": [_hex(p.encode()) for p in base.pieces],
            "piece_digests": [_hex(p.digest()) for p in base.pieces],
            "fingerprint": _hex(base.fingerprint.encode()),
        },
        "delta_crl": {
            "interval": interval,
            "pieces": [_hex(p.encode()) for p in deltas],
            "key": _hex(k_i),
            "mac_key": _hex(mac_key.key),
            "anchor": _hex(schedule.anchor),
            "anchor_signature": _hex(schedule.anchor_signature.encode()),
            "key_chain": [_hex(k) for k in schedule.chain],
        },
    }
