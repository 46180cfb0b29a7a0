"""Scripted threat strategies, outcome classification and privacy experiments.

Each :class:`AttackKind` maps to one strategy that drives a fresh
:class:`~offline_cbdc.world.World`.  Attacker actions are tagged ``fraud`` in
the trace; :func:`classify` reads nothing but the trace, so an outcome can be
recomputed from a saved trace file.

``mallory`` is the attacker, ``victor`` and ``vera`` are the merchants she
targets and ``eve`` is an outsider with a network tap but no keys.
"""

import dataclasses
import enum
import json
import random
from dataclasses import dataclass
from typing import Optional

from .crypto import SALT_LEN, SchnorrProof, default_group, default_rsa_keypair, schnorr_keygen, schnorr_prove
from .funds import (
    RevealedShare,
    TransactionStatement,
    TransferRecord,
    append_transfer,
    extract_double_spender,
    make_candidates,
    record_context,
)
from .netsim import TA
from .trust_anchor import DepositRequest, TrustAnchor
from .wallet import IssuanceAborted, TeeMode, Wallet
from .world import World, WorldConfig, identity_of

ATTACKER = "mallory"
EXPIRY_TICKS = 10
DENOMINATION = 10


class AttackKind(enum.Enum):
    FORGE_SPEND = "ForgeSpend"
    TRIVIAL_DOUBLE_SPEND = "TrivialDoubleSpend"
    RACE_DOUBLE_SPEND = "RaceDoubleSpend"
    CLONE_ATTACK = "CloneAttack"
    ROLLBACK_ATTACK = "RollbackAttack"
    REPLAY_ATTACK = "ReplayAttack"
    RECOVERY_DOUBLE_DIP = "RecoveryDoubleDip"


class UnknownKind(ValueError):
    pass


class IncompleteBatch(ValueError):
    pass


class SerialUnknown(KeyError):
    pass


REJECTED = "RejectedImmediately"
TEMPORARY = "TemporarilyAccepted"
UNDETECTED = "Undetected"


@dataclass(frozen=True)
class AttackOutcome:
    label: str
    detected_at_sync: Optional[bool] = None
    identified: Optional[bool] = None

    def __str__(self):
        if self.label != TEMPORARY:
            return self.label
        return (f"{TEMPORARY}{{detected_at_sync={str(self.detected_at_sync).lower()},"
                f"identified={str(self.identified).lower()}}}")


REJECTED_IMMEDIATELY = AttackOutcome(REJECTED)
DETECTED_IDENTIFIED = AttackOutcome(TEMPORARY, True, True)


@dataclass
class AttackRun:
    kind: AttackKind
    tee_mode: TeeMode
    expiry_on: bool
    outcome: AttackOutcome
    world: World

    @property
    def trace(self) -> list:
        return self.world.trace

    @property
    def config_label(self) -> str:
        return f"tee={self.tee_mode.value},expiry={'on' if self.expiry_on else 'off'}"


# -- classification ----------------------------------------------------------


def classify(trace: list, attacker: str = ATTACKER) -> AttackOutcome:
    """Outcome class of a finished trace.

    No fraud-tagged event was ever accepted: rejected immediately.  Otherwise
    the attack was accepted for a while; it counts as detected if a later
    settlement exposed it, and identified if that settlement named the attacker.
    """
    accepted = any(e["data"].get("fraud") and e["data"].get("accepted") for e in trace)
    if not accepted:
        return REJECTED_IMMEDIATELY
    who = identity_of(attacker).hex()
    detections = [e for e in trace if e["kind"] == "settle" and _is_detection(e)]
    if not detections:
        return AttackOutcome(UNDETECTED)
    identified = any(e["data"].get("identity") == who for e in detections)
    return AttackOutcome(TEMPORARY, True, identified)


def _is_detection(event) -> bool:
    if event["outcome"] == "DoubleSpendDetected":
        return True
    return event["outcome"] == "Expired" and bool(event["data"].get("over_credit"))


def expected_outcome(kind: AttackKind, tee_mode: TeeMode, expiry_on: bool) -> AttackOutcome:
    unprotected = tee_mode is TeeMode.UNPROTECTED
    if kind in (AttackKind.RACE_DOUBLE_SPEND, AttackKind.CLONE_ATTACK, AttackKind.ROLLBACK_ATTACK):
        return DETECTED_IDENTIFIED if unprotected else REJECTED_IMMEDIATELY
    if kind is AttackKind.RECOVERY_DOUBLE_DIP:
        return DETECTED_IDENTIFIED if expiry_on else REJECTED_IMMEDIATELY
    return REJECTED_IMMEDIATELY


# -- strategies --------------------------------------------------------------


def _world(tee_mode: TeeMode, expiry_on: bool, k: int, seed: int, name: str) -> World:
    cfg = WorldConfig(seed=seed, parties={ATTACKER: 100, "victor": 0, "vera": 0, "eve": 0},
                      default_tee=tee_mode, expiry_ticks=EXPIRY_TICKS if expiry_on else None, k=k, name=name)
    return World(cfg)


def _fund_and_partition(w: World):
    w.withdraw(ATTACKER, DENOMINATION, 1)
    w.go_offline(2, ATTACKER, "victor", "vera", "eve")


def _settle_all(w: World, tick: int, *names):
    w.go_online(tick, *names)
    for i, name in enumerate(names):
        w.sync(name, tick + i)


def captured_statement(w: World, payee: str) -> TransactionStatement:
    """The last statement the eavesdropper saw reach ``payee`` from a peer."""
    hits = [e for e in w.net.log if e.receiver == payee and e.sender != TA and e.sender in w.wallets
            and _is_statement(e.payload)]
    if not hits:
        raise LookupError(f"no statement to {payee} on the wire")
    return TransactionStatement.from_bytes(hits[-1].payload)


def _is_statement(payload: bytes) -> bool:
    try:
        TransactionStatement.from_bytes(payload)
    except Exception:
        return False
    return True


def captured_deposit(w: World, depositor: str) -> bytes:
    hits = [e for e in w.net.log if e.sender == depositor and e.receiver == TA]
    if not hits:
        raise LookupError(f"no deposit from {depositor} on the wire")
    return hits[-1].payload


def forge_statements(w: World, attacker: str, victim: str, payee: str, tick: int) -> list:
    """Spend ``victim``'s coin without ``victim``'s keys.

    Two forgeries over a statement tapped off the wire: one names the victim's
    one-time key but proves with the attacker's secret, the other links the
    attacker's own key into the chain.  Neither knows the victim's share
    openings, so the revealed shares are random.
    """
    chain = captured_statement(w, victim).chain
    rng = w.rng(attacker)
    offer = w.wallets[payee].make_offer(w.config.k, w.rng(payee))
    w.net.deliver(payee, attacker, offer.to_bytes(), tick)
    key = schnorr_keygen(w.group, rng)
    width = len(identity_of(victim))
    fake = tuple(RevealedShare(rng.randbytes(width), rng.randbytes(SALT_LEN)) for _ in offer.challenge)
    out = []
    for payer_public in (chain.holder_public(), key.y):
        draft = TransferRecord(len(chain.records), None, offer.challenge, fake, offer.onetime_public, tick,
                               payer_public, 1, offer.commitments)
        proof = schnorr_prove(key, record_context(chain.coin.serial, draft.body_wire()), rng)
        record = dataclasses.replace(draft, payer_coin_proof=proof)
        out.append(TransactionStatement.for_chain(append_transfer(chain, record)))
    return out


def _forge(w: World):
    _fund_and_partition(w)
    w.pay(ATTACKER, "victor", 3)
    for statement in forge_statements(w, "eve", "victor", "vera", 4):
        w.deliver_statement("eve", "vera", statement, 4, fraud=True)
    w.go_online(5, "eve")
    garbage = DepositRequest(captured_statement(w, "victor"), identity_of("eve"), SchnorrProof(1, 1))
    w.submit_deposit("eve", garbage.to_bytes(), 5, fraud=True)
    _settle_all(w, 6, "victor")


def _trivial(w: World):
    _fund_and_partition(w)
    first = w.pay(ATTACKER, "victor", 3)
    w.pay(ATTACKER, "vera", 3, serial=first.serial, fraud=True)
    # the same statement pushed at a second merchant answers someone else's challenge
    w.deliver_statement(ATTACKER, "vera", first, 3, fraud=True)
    _settle_all(w, 4, "victor", "vera")


def _race(w: World):
    _fund_and_partition(w)
    if isinstance(w.export_state(ATTACKER, "snap", 2), Exception):
        return
    if isinstance(w.import_state("snap", "twin", 2), Exception):
        return
    w.set_connectivity(2, offline=["twin"], link=[("twin", "vera")])
    w.pay(ATTACKER, "victor", 3, fraud=True)
    w.pay("twin", "vera", 3, fraud=True)
    _settle_all(w, 4, "victor", "vera")


def _clone(w: World):
    _fund_and_partition(w)
    if isinstance(w.export_state(ATTACKER, "snap", 2), Exception):
        return
    w.pay(ATTACKER, "victor", 3)
    _settle_all(w, 4, "victor")
    if isinstance(w.import_state("snap", "twin", 6), Exception):
        return
    w.set_connectivity(6, offline=["twin", "vera"], link=[("twin", "vera")])
    w.pay("twin", "vera", 6, fraud=True)
    _settle_all(w, 7, "vera")


def _rollback(w: World):
    _fund_and_partition(w)
    if isinstance(w.export_state(ATTACKER, "snap", 2), Exception):
        return
    w.pay(ATTACKER, "victor", 3)
    if isinstance(w.import_state("snap", ATTACKER, 4), Exception):
        return
    w.pay(ATTACKER, "vera", 4, fraud=True)
    _settle_all(w, 5, "victor", "vera")


def _replay(w: World):
    _fund_and_partition(w)
    w.pay(ATTACKER, "victor", 3)
    w.deliver_statement("eve", "victor", captured_statement(w, "victor"), 3, fraud=True)
    _settle_all(w, 4, "victor", "eve")
    deposit = captured_deposit(w, "victor")
    w.submit_deposit("eve", deposit, 6, fraud=True)
    # the same bytes claimed for eve's own account
    request = DepositRequest.from_bytes(deposit)
    w.submit_deposit("eve", dataclasses.replace(request, depositor=identity_of("eve")).to_bytes(), 6,
                     fraud=True)


def _double_dip(w: World):
    coin = w.withdraw(ATTACKER, DENOMINATION, 1)
    w.go_offline(2, ATTACKER, "victor")
    expiry = coin.expiry if coin.expiry is not None else 1 + EXPIRY_TICKS
    w.pay(ATTACKER, "victor", expiry - 3)
    w.go_online(expiry - 2, ATTACKER)
    if isinstance(w.recovery_claim(ATTACKER, expiry - 2, fraud=True), Exception):
        return
    w.process_recoveries(expiry)
    _settle_all(w, expiry + 1, "victor")


STRATEGIES = {
    AttackKind.FORGE_SPEND: _forge,
    AttackKind.TRIVIAL_DOUBLE_SPEND: _trivial,
    AttackKind.RACE_DOUBLE_SPEND: _race,
    AttackKind.CLONE_ATTACK: _clone,
    AttackKind.ROLLBACK_ATTACK: _rollback,
    AttackKind.REPLAY_ATTACK: _replay,
    AttackKind.RECOVERY_DOUBLE_DIP: _double_dip,
}


def run_attack(kind: AttackKind, tee_mode: TeeMode = TeeMode.UNPROTECTED, expiry_on: bool = False,
               k: int = 16, seed: int = 0) -> AttackRun:
    strategy = STRATEGIES.get(kind)
    if strategy is None:
        raise UnknownKind(kind)
    w = _world(tee_mode, expiry_on, k, seed, f"{kind.value}:{tee_mode.value}:{int(expiry_on)}")
    strategy(w)
    return AttackRun(kind, tee_mode, expiry_on, classify(w.trace), w)


# -- the objective / countermeasure matrix -----------------------------------

CONFIGS = [(tee, expiry) for tee in (TeeMode.UNPROTECTED, TeeMode.SECURE_ELEMENT) for expiry in (False, True)]


def run_batch(seed: int = 0, k: int = 16) -> list:
    return [run_attack(kind, tee, expiry, k, seed) for kind in AttackKind for tee, expiry in CONFIGS]


def emit_matrix(runs: list) -> tuple:
    """Render a full batch as ``(tsv, json_report)``; both are deterministic."""
    cells = {(r.kind, r.tee_mode, r.expiry_on): r for r in runs}
    missing = [(kind, tee, expiry) for kind in AttackKind for tee, expiry in CONFIGS
               if (kind, tee, expiry) not in cells]
    if missing:
        kind, tee, expiry = missing[0]
        raise IncompleteBatch(f"{len(missing)} cells missing, first {kind.value} tee={tee.value} expiry={expiry}")
    header = ["kind", "tee", "expiry", "outcome", "expected", "match"]
    rows = []
    for kind in AttackKind:
        for tee, expiry in CONFIGS:
            got = cells[(kind, tee, expiry)].outcome
            want = expected_outcome(kind, tee, expiry)
            rows.append([kind.value, tee.value, "on" if expiry else "off", str(got), str(want),
                         "yes" if got == want else "no"])
    tsv = "".join("\t".join(r) + "\n" for r in [header] + rows)
    report = {
        "cells": [dict(zip(header, r)) for r in rows],
        "all_match": all(r[-1] == "yes" for r in rows),
        "undetected": sum(1 for r in rows if r[3] == UNDETECTED),
    }
    return tsv, json.dumps(report, indent=2, sort_keys=True) + "\n"


# -- double-spender identification -------------------------------------------


def race_identification(trials: int, k: int = 16, seed: int = 0) -> int:
    """Number of seeded race attacks in which the TA named the attacker."""
    hits = 0
    for i in range(trials):
        outcome = run_attack(AttackKind.RACE_DOUBLE_SPEND, TeeMode.UNPROTECTED, False, k, seed + i).outcome
        hits += bool(outcome.identified)
    return hits


def identification_table(k: int = 4, seed: int = 0) -> dict:
    """Extraction result for every ordered pair of ``k``-bit challenges on one coin.

    The coin's holder answers each of the ``2**k`` challenges once (rolling an
    unprotected wallet back between answers); every pair of answers is then
    handed to the extractor.  Maps ``(challenge_a, challenge_b)`` to the
    recovered identity or ``None``.
    """
    w = _world(TeeMode.UNPROTECTED, False, k, seed, "identification")
    w.withdraw(ATTACKER, DENOMINATION, 1)
    w.go_offline(2, ATTACKER, "victor")
    payer, payee = w.wallets[ATTACKER], w.wallets["victor"]
    snap = payer.export_state()
    records = {}
    for value in range(2 ** k):
        challenge = tuple((value >> (k - 1 - i)) & 1 for i in range(k))
        offer = dataclasses.replace(payee.make_offer(k, w.rng("victor")), challenge=challenge)
        payer.restore_state(snap)
        st = payer.pay_offline(offer, None, 3, w.rng(ATTACKER))
        records[challenge] = st.chain.records[-1]
    coin = st.chain.coin
    return {(a, b): extract_double_spender(ra, rb, coin)
            for a, ra in records.items() for b, rb in records.items()}


# -- cut-and-choose ----------------------------------------------------------


def cheat_candidates(identity: bytes, count: int, cheats: int, rng: random.Random) -> list:
    """Honest candidates except ``cheats`` of them, whose shares encode a different identity."""
    candidates = make_candidates(identity, count, rng)
    forged = make_candidates(bytes(len(identity)), max(4, cheats + cheats % 2), rng)[:cheats]
    for i, c in zip(rng.sample(range(count), cheats), forged):
        candidates[i] = c
    return candidates


def cut_and_choose_trials(trials: int, k: int = 4, cheats: int = 1, seed: int = 0) -> int:
    """How often the TA catches a withdrawer who cheats on ``cheats`` of ``2k`` candidates."""
    group = default_group()
    ta = TrustAnchor(default_rsa_keypair(), group, {}, None, k, random.Random(f"cc-ta:{seed}"))
    ta.open_account(identity_of(ATTACKER), DENOMINATION * trials)
    wallet = Wallet(ATTACKER, identity_of(ATTACKER), group, TeeMode.UNPROTECTED)
    rng = random.Random(f"cc:{seed}")
    caught = 0
    for _ in range(trials):
        candidates = cheat_candidates(wallet.owner_identity, 2 * k, cheats, rng)
        try:
            wallet.withdraw(ta, DENOMINATION, 1, rng, candidates=candidates)
        except IssuanceAborted:
            caught += 1
    return caught


# -- privacy -------------------------------------------------------------------


@dataclass(frozen=True)
class LinkageResult:
    n: int
    trials: int
    correct: int

    @property
    def success_rate(self) -> float:
        return self.correct / (self.n * self.trials)


def linkage_guess(view) -> dict:
    """The adversary: map each deposited serial to the index of a withdrawal.

    It first looks for any value a coin shares with a withdrawal entry (serial,
    signed message, signature against the blinded composite).  Blinding leaves
    nothing to find, so it falls back on timing: the i-th deposit is paired
    with the i-th withdrawal.
    """
    blinded = {e.blinded: i for i, e in enumerate(view.withdrawals)}
    guesses = {}
    fifo = 0
    for entry in view.deposits:
        coin = entry.chain.coin
        direct = [blinded[v] for v in (coin.serial, coin.issuer_signature, coin.owner_public) if v in blinded]
        if direct:
            guesses[entry.serial] = direct[0]
        else:
            guesses[entry.serial] = fifo
        fifo += 1
    return guesses


def serials_in_withdrawal_log(view) -> int:
    """How many deposited serials appear anywhere in the withdrawal log."""
    logged = {e.blinded for e in view.withdrawals}
    return sum(1 for d in view.deposits if d.serial in logged)


def linkage_world(n: int, rng: random.Random, k: int = 4):
    """``n`` users withdraw one equal coin each, pay one merchant in random order, and it deposits.

    All withdrawals share a tick, so neither amount nor expiry date leaks.
    Returns ``(ta, truth)`` with ``truth`` mapping serial to withdrawal index.
    """
    group = default_group()
    ta = TrustAnchor(default_rsa_keypair(), group, {}, None, k, random.Random(rng.getrandbits(64)))
    merchant = Wallet("merchant", b"merchant", group)
    ta.open_account(merchant.owner_identity, 0)
    truth = {}
    users = []
    for i in range(n):
        user = Wallet(f"user{i}", f"user{i}".encode(), group)
        ta.open_account(user.owner_identity, DENOMINATION)
        coin = user.withdraw(ta, DENOMINATION, 1, rng)
        truth[coin.serial] = i
        users.append(user)
    order = list(range(n))
    rng.shuffle(order)
    for i in order:
        statement = users[i].pay_offline(merchant.make_offer(k, rng), None, 2, rng)
        merchant.receive_offline(statement, ta.public, 2)
    merchant.sync(ta, 3, rng)
    return ta, truth


def run_linkage_experiment(n: int, trials: int, seed: int = 0, k: int = 4, guess=linkage_guess) -> LinkageResult:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = random.Random(f"linkage:{n}:{seed}")
    correct = 0
    for _ in range(trials):
        ta, truth = linkage_world(n, rng, k)
        guesses = guess(ta.ta_view())
        correct += sum(1 for serial, i in guesses.items() if truth.get(serial) == i)
    return LinkageResult(n, trials, correct)


def trace_attempt(ta: TrustAnchor, serial: int) -> Optional[bytes]:
    """The TA's best effort at naming who paid with ``serial``.

    Only fork evidence yields an identity; an honest chain reveals one share
    per position and nothing else.
    """
    led = ta.ledger
    if serial not in led.settled_serials:
        raise SerialUnknown(serial)
    coin = led.settled_chains[serial].coin
    for evidence in led.evidence.get(serial, ()):
        identity = evidence.reproduce(coin)
        if identity is not None:
            return identity
    return None
