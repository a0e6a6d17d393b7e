import random
from collections import Counter

import pytest
from scipy.stats import chisquare

from vcrl.authority import CrlPiece, DeltaCrlPiece
from vcrl.bloom import build_fingerprint
from vcrl.credentials import RevocationEntry
from vcrl.crypto import Scheme, SigningKey
from vcrl.vehicle import PieceRequest, RateLimiter, TokenBucket, VehicleCrlState


@pytest.fixture
def crl(authority):
    """A window with 12 revoked batches split into several pieces."""
    for j in range(12):
        bid, _ = authority.issue_batch(0)
        authority.revoke(bid, j % 10)
    return authority.build_base_crl(0, bandwidth=400, now=0.0)


def vehicle(authority, **kw):
    return VehicleCrlState(authority.public_key, tau_p=60, gamma_crl=600, **kw)


def forge(piece, rng):
    entries = tuple(RevocationEntry(rng.randbytes(32), rng.randbytes(32), e.remaining, e.first_interval)
                    for e in piece.entries)
    return CrlPiece(piece.gamma_crl_index, piece.piece_index, piece.total_pieces, piece.crl_version,
                    entries, piece.tesla_anchor, piece.anchor_signature)


def test_collects_base_crl(authority, crl):
    v = vehicle(authority)
    assert not v.handle_piece(crl.pieces[0])  # no fingerprint yet
    assert v.missing_indices() is None
    assert v.handle_fingerprint(crl.fingerprint)
    assert v.missing_indices() == set(range(len(crl.pieces)))
    for p in reversed(crl.pieces):
        assert v.handle_piece(p, sender=1)
        assert not v.handle_piece(p, sender=1)  # duplicate
    assert v.cognizant and v.missing_indices() == set()
    assert v.revocation_store() == crl.covered
    serial, slot = next(iter(crl.covered))
    assert v.is_revoked(serial, slot) and not v.is_revoked(serial, slot + 1)
    assert v.bf_checks == len(crl.pieces) and v.signature_verifications == 1


def test_forged_pieces_dropped_and_no_phantom_serials(authority, crl):
    v = vehicle(authority)
    v.handle_fingerprint(crl.fingerprint)
    rng = random.Random(1)
    for _ in range(200):
        assert not v.handle_piece(forge(rng.choice(crl.pieces), rng), sender="evil")
    assert v.forged_dropped == 200 and v.misbehavior["evil"] == 200
    v.handle_piece(crl.pieces[0])
    assert v.revocation_store() <= crl.covered


def test_fingerprint_checks(authority, crl, mock_signer):
    v = vehicle(authority)
    rogue = SigningKey(Scheme.MOCK, b"\xee" * 32)
    fake = build_fingerprint(0, 5, [p.digest() for p in crl.pieces], rogue, 1e-20)
    assert not v.handle_fingerprint(fake, sender="x")
    assert v.misbehavior["x"] == 1
    assert v.handle_fingerprint(crl.fingerprint)
    assert not v.handle_fingerprint(crl.fingerprint)  # already held
    older = build_fingerprint(0, crl.crl_version - 1, [], mock_signer, 1e-20)
    assert not v.handle_fingerprint(older)


def test_newer_version_restarts_collection(authority, crl):
    v = vehicle(authority)
    v.handle_fingerprint(crl.fingerprint)
    v.handle_piece(crl.pieces[0])
    newer = authority.build_base_crl(0, bandwidth=400, now=0.0)
    assert v.handle_fingerprint(newer.fingerprint)
    assert v.received_pieces == {}
    # a genuine piece of the superseded version is ignored without blame
    assert not v.handle_piece(crl.pieces[1], sender="old")
    assert v.forged_dropped == 0


def test_carrier_pseudonym_delivers_fingerprint(authority, crl):
    _, batch = authority.issue_batch(0, is_carrier=True, fingerprint=crl.fingerprint)
    v = vehicle(authority)
    assert v.handle_carrier_pseudonym(batch.pseudonym(1))
    assert v.current_fingerprint == crl.fingerprint
    assert v.signature_verifications == 1
    _, plain = authority.issue_batch(0)
    assert not vehicle(authority).handle_carrier_pseudonym(plain.pseudonym(1))


def test_baseline_mode_needs_signatures(authority):
    for g in range(2):
        bid, _ = authority.issue_batch(g)
        authority.revoke(bid, g * 10)
    pieces = authority.build_full_crl(300, 0, 19)
    v = vehicle(authority, mode="baseline")
    for p in pieces:
        assert v.handle_piece(p)
    assert v.cognizant and v.signature_verifications == len(pieces)
    unsigned = CrlPiece(0, 0, len(pieces), 1, pieces[0].entries, pieces[0].tesla_anchor,
                        pieces[0].anchor_signature)
    assert not vehicle(authority, mode="baseline").handle_piece(unsigned)


# --------------------------------------------------------------------------
# delta CRLs


@pytest.fixture
def delta_setup(authority, crl):
    bid, batch = authority.issue_batch(0)
    authority.revoke(bid, 4, now=150.0)
    ks = authority.schedule(0)
    pieces = authority.gen_delta_crl(0, 5, ks.key(5), 4096, now=150.0)
    v = vehicle(authority)
    v.handle_fingerprint(crl.fingerprint)
    v.handle_piece(crl.pieces[0])  # learns the chain anchor
    return v, ks, pieces, batch


def test_delta_validated_on_key(delta_setup):
    v, ks, pieces, batch = delta_setup
    # optimized disclosure: K_5 released at 240 - 30 = 210
    assert v.buffer_delta_piece(pieces[0], now=200.0, sender=2)
    assert not v.is_revoked(batch.pseudonym(5).serial, 4)
    out = v.validate_on_key_disclosure(0, 5, ks.key(5))
    assert out.accepted == pieces and not out.rejected
    assert v.is_revoked(batch.pseudonym(5).serial, 4)
    assert v.buffered_bytes == 0


def test_delta_rejects_late_and_forged(delta_setup):
    v, ks, pieces, _ = delta_setup
    assert not v.buffer_delta_piece(pieces[0], now=210.0)  # key may be out already
    rng = random.Random(5)
    forged = [DeltaCrlPiece(0, 5, 0, 1, (rng.randbytes(32),), rng.randbytes(32), ks.key(4)) for _ in range(50)]
    for f in forged:
        v.buffer_delta_piece(f, now=100.0, sender=rng.random())
    out = v.validate_on_key_disclosure(0, 5, ks.key(5))
    assert not out.accepted and len(out.rejected) == 50
    assert v.forged_dropped == 50


def test_delta_ignores_key_failing_anchor(delta_setup):
    v, ks, pieces, _ = delta_setup
    v.buffer_delta_piece(pieces[0], now=100.0)
    out = v.validate_on_key_disclosure(0, 5, b"\x00" * 32)
    assert not out.accepted and (0, 5) not in v.known_keys
    assert v.validate_on_key_disclosure(0, 5, ks.key(4)).accepted == []  # wrong interval
    assert v.validate_on_key_disclosure(0, 5, ks.key(5)).accepted == pieces


def test_later_key_releases_earlier_intervals(delta_setup):
    v, ks, pieces, _ = delta_setup
    v.buffer_delta_piece(pieces[0], now=100.0)
    out = v.validate_on_key_disclosure(0, 7, ks.key(7))
    assert out.accepted == pieces
    assert all((0, i) in v.known_keys for i in range(1, 8))


def test_clock_error_tightens_safety(authority):
    v = vehicle(authority, max_clock_error=5.0)
    assert v.delta_safe(0, 5, 204.9)
    assert not v.delta_safe(0, 5, 205.0)
    strict = vehicle(authority, optimized_disclosure=False)
    assert strict.delta_safe(0, 5, 239.0) and not strict.delta_safe(0, 5, 240.0)


def test_delta_buffer_cap(delta_setup, authority):
    _, ks, pieces, _ = delta_setup
    v = vehicle(authority, buffer_cap_bytes=pieces[0].size)
    assert v.buffer_delta_piece(pieces[0], now=0.0)
    assert not v.buffer_delta_piece(pieces[0], now=0.0)


# --------------------------------------------------------------------------
# rate limiting and relaying


def test_token_bucket():
    tb = TokenBucket(rate=2, capacity=3, now=0)
    assert [tb.consume(0) for _ in range(4)] == [True, True, True, False]
    assert tb.consume(0.5) and not tb.consume(0.5)
    assert tb.consume(10) and tb.tokens == pytest.approx(2)


def test_rate_limiter_mutes_flooders():
    rl = RateLimiter(rate=1, burst=2, mute_for=30)
    assert rl.allow("a", 0) and rl.allow("a", 0)
    assert not rl.allow("a", 0)
    assert rl.is_muted("a", 29) and not rl.allow("a", 5)
    assert rl.allow("b", 0)  # independent buckets
    assert rl.allow("a", 31)


def test_flooded_deltas_are_rate_limited(delta_setup, authority):
    _, ks, pieces, _ = delta_setup
    v = vehicle(authority, rate_limiter=RateLimiter(rate=4, burst=4))
    accepted = sum(v.buffer_delta_piece(pieces[0], now=t / 100, sender="f") for t in range(1000))
    assert accepted == 4


def test_choose_piece_uniform(authority, crl):
    v = vehicle(authority, rng=random.Random(11))
    v.handle_fingerprint(crl.fingerprint)
    for p in crl.pieces:
        v.handle_piece(p)
    wanted = list(range(len(crl.pieces)))
    counts = Counter(v.choose_piece(wanted).piece_index for _ in range(6000))
    assert set(counts) == set(wanted)
    assert chisquare([counts[i] for i in wanted]).pvalue > 0.001
    assert v.choose_piece([99]) is None
    selfish = vehicle(authority, selfish=True)
    selfish.received_pieces = dict(v.received_pieces)
    assert selfish.choose_piece(wanted) is None


def test_piece_requests(authority, crl, ecdsa_signer):
    vkey = SigningKey(Scheme.MOCK, b"\x31" * 32)
    _, batch = authority.issue_batch(0, vehicle_keys=[vkey.public_key()] * 10)
    pseud = batch.pseudonym(2)
    req = PieceRequest.create(0, {0, 1}, pseud, vkey)
    assert req.verify(authority.public_key, now=61.0)
    assert not req.verify(authority.public_key, now=130.0)  # pseudonym expired
    tampered = PieceRequest(0, frozenset({0, 1, 2}), pseud, req.signature)
    assert not tampered.verify(authority.public_key, now=61.0)

    helper = vehicle(authority)
    helper.handle_fingerprint(crl.fingerprint)
    helper.handle_piece(crl.pieces[1])
    assert helper.answer_request(req, now=61.0) is crl.pieces[1]
    assert helper.answer_request(tampered, now=61.0) is None
