import random

import pytest

from offline_cbdc import codec
from offline_cbdc.adversary import cheat_candidates
from offline_cbdc.crypto import schnorr_prove
from offline_cbdc.funds import TransactionStatement
from offline_cbdc.trust_anchor import (
    CREDITED,
    DOUBLE_SPEND,
    EXPIRED,
    INVALID,
    SETTLED,
    CutAndChooseFailed,
    DepositRequest,
    InsufficientBalance,
    TaError,
    UnknownAccount,
    UnknownSession,
    deposit_context,
)
from offline_cbdc.wallet import IssuanceAborted, TeeMode, file_recovery_claim

from helpers import Economy


def _request(e, name, st):
    """A deposit request for ``st`` built by ``name``'s wallet key."""
    holding = e.w[name].coins[st.serial]
    proof = schnorr_prove(holding.key(e.group), deposit_context(name.encode(), st.chain.digest()), e.rng)
    return DepositRequest(TransactionStatement.for_chain(holding.chain), name.encode(), proof)


def _conserved(ta):
    c = ta.conservation()
    return c["accounts_sum"] + c["outstanding"] == c["initial_total"]


def test_issue_rejects_bad_input():
    e = Economy()
    with pytest.raises(UnknownAccount):
        e.ta.issue(b"nobody", 10, [1] * 8, 1, 1)
    with pytest.raises(ValueError):
        e.ta.issue(b"alice", 0, [1] * 8, 1, 1)
    with pytest.raises(InsufficientBalance):
        e.ta.issue(b"alice", 101, [1] * 8, 1, 1)
    with pytest.raises(TaError):
        e.ta.issue(b"alice", 10, [1] * 7, 1, 1)
    with pytest.raises(UnknownSession):
        e.ta.finalize_issue(99, [], 1)


def test_issue_opens_half():
    e = Economy(k=4)
    sid, opened = e.ta.issue(b"alice", 10, [1] * 8, 1, 1)
    assert len(opened) == 4 and len(set(opened)) == 4
    assert all(0 <= i < 8 for i in opened)


def test_cheating_withdrawal_aborts_without_debit():
    e = Economy(k=4)
    rng = random.Random(3)
    aborted = 0
    for _ in range(40):
        cands = cheat_candidates(b"alice", 8, 8, rng)  # every candidate forged
        with pytest.raises(IssuanceAborted):
            e.w["alice"].withdraw(e.ta, 10, 1, rng, candidates=cands)
        aborted += 1
    assert aborted == 40
    assert e.ta.balance(b"alice") == 100
    assert e.ta.ledger.withdrawal_log == []


def test_missing_opening_is_cut_and_choose_failure():
    e = Economy(k=4)
    sid, opened = e.ta.issue(b"alice", 10, [1] * 8, 1, 1)
    with pytest.raises(CutAndChooseFailed):
        e.ta.finalize_issue(sid, [], 1)


def test_settle_is_idempotent():
    e = Economy()
    e.withdraw("alice")
    st = e.pay("alice", "bob")
    req = _request(e, "bob", st)
    assert e.ta.settle(req, 3).kind == SETTLED
    again = e.ta.settle(req, 4)
    assert again.kind == SETTLED and again.duplicate
    assert str(again) == "Settled(duplicate)"
    assert e.ta.balance(b"bob") == 110
    assert _conserved(e.ta)


def test_bad_deposit_proof():
    e = Economy()
    e.withdraw("alice")
    st = e.pay("alice", "bob")
    req = _request(e, "bob", st)
    stolen = DepositRequest(req.statement, b"carol", req.proof)
    result = e.ta.settle(stolen, 3)
    assert result.kind == INVALID and result.reason == "BadDepositProof"
    assert str(result) == "InvalidChain(BadDepositProof)"
    assert e.ta.balance(b"carol") == 100


def test_deposit_request_roundtrip():
    e = Economy()
    e.withdraw("alice")
    st = e.pay("alice", "bob")
    req = _request(e, "bob", st)
    assert DepositRequest.from_bytes(req.to_bytes()) == req


def test_double_spend_identifies_and_blacklists():
    e = Economy(tee=TeeMode.UNPROTECTED)
    e.withdraw("alice")
    snap = e.w["alice"].export_state()
    a = e.pay("alice", "bob", challenge=[0, 0, 1, 1])
    e.w["alice"].restore_state(snap)
    b = e.pay("alice", "carol", challenge=[1, 0, 1, 0])
    assert e.ta.settle(_request(e, "bob", a), 3).kind == SETTLED
    second = e.ta.settle(_request(e, "carol", b), 3)
    assert second.kind == DOUBLE_SPEND and second.identity == b"alice"
    assert second.evidence.kind == "fork" and second.evidence.hop == 0
    assert second.evidence.reproduce(b.chain.coin) == b"alice"
    assert b"alice" in e.ta.ledger.blacklist and a.serial in e.ta.ledger.blacklist
    assert e.ta.balance(b"carol") == 100  # the loser is not credited
    assert _conserved(e.ta)


def test_identical_challenges_detected_not_identified():
    e = Economy(tee=TeeMode.UNPROTECTED)
    e.withdraw("alice")
    snap = e.w["alice"].export_state()
    a = e.pay("alice", "bob", challenge=[1, 0, 1, 0])
    e.w["alice"].restore_state(snap)
    b = e.pay("alice", "carol", challenge=[1, 0, 1, 0])
    e.ta.settle(_request(e, "bob", a), 3)
    second = e.ta.settle(_request(e, "carol", b), 3)
    assert second.kind == DOUBLE_SPEND and second.identity is None
    assert a.serial in e.ta.ledger.blacklist


def test_blacklisted_depositor_is_flagged_not_refused():
    e = Economy(tee=TeeMode.UNPROTECTED)
    e.withdraw("alice")
    e.withdraw("alice")
    snap = e.w["alice"].export_state()
    a = e.pay("alice", "bob", challenge=[0, 0, 0, 0])
    e.w["alice"].restore_state(snap)
    b = e.pay("alice", "carol", challenge=[1, 1, 1, 1])
    e.w["bob"].sync(e.ta, 3, e.rng)
    e.w["carol"].sync(e.ta, 3, e.rng)
    assert b"alice" in e.ta.ledger.blacklist
    # alice now receives an honest coin and deposits it
    e.withdraw("carol")
    st = e.pay("carol", "alice", tick=4)
    result = e.ta.settle(_request(e, "alice", st), 5)
    assert result.kind == SETTLED and result.flagged


def test_recovery_double_dip_overcredits():
    e = Economy(expiry=10)
    e.withdraw("alice", tick=1)
    st = e.pay("alice", "bob", tick=8)
    claim = file_recovery_claim(b"alice", e.w["alice"].recovery_kit, 9, e.group, True, e.rng)
    e.ta.file_claim(claim)
    assert [o for _, _, o in e.ta.process_recoveries(11)] == [CREDITED]
    result = e.ta.settle(_request(e, "bob", st), 12)
    assert result.kind == EXPIRED and result.identity == b"alice" and result.over_credit == 10
    c = e.ta.conservation()
    assert c["over_credit"] == 10
    assert c["accounts_sum"] + c["outstanding"] == c["initial_total"]
    assert b"alice" in e.ta.ledger.blacklist


def test_ta_view_has_no_serials():
    e = Economy()
    coin = e.withdraw("alice")
    view = e.ta.ta_view()
    assert len(view.withdrawals) == 1 and view.deposits == ()
    w = view.withdrawals[0]
    assert (w.owner, w.denomination, w.tick) == (b"alice", 10, 1)
    assert w.blinded != coin.serial


def test_dump_format():
    e = Economy()
    e.withdraw("alice")
    st = e.pay("alice", "bob")
    e.ta.settle(_request(e, "bob", st), 3)
    lines = e.ta.dump().splitlines()
    assert [l.split("\t")[:2] for l in lines] == [["1", "withdraw"], ["3", "settle"]]
    tick, kind, payload = lines[1].split("\t")
    serial, depositor, outcome, identity = codec.unpack(bytes.fromhex(payload))
    assert (serial, depositor, outcome, identity) == (st.serial, b"bob", "Settled", b"")


def test_conservation_through_mixed_flow():
    e = Economy(expiry=6)
    for _ in range(3):
        e.withdraw("alice", tick=1)
    a = e.pay("alice", "bob", tick=2)
    b = e.pay("alice", "carol", tick=2)
    e.ta.settle(_request(e, "bob", a), 3)
    assert _conserved(e.ta)
    assert e.ta.settle(_request(e, "carol", b), 7).kind == EXPIRED
    claim = file_recovery_claim(b"alice", e.w["alice"].recovery_kit, 7, e.group, True, e.rng)
    e.ta.file_claim(claim)
    outcomes = sorted(o for _, _, o in e.ta.process_recoveries(8))
    assert outcomes == ["Credited", "Credited", "RejectedSpent"]
    assert _conserved(e.ta) and e.ta.conservation()["outstanding"] == 0
