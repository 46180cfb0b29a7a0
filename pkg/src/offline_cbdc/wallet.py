"""User-side wallet: keys, coins in custody, monotonic counter, emulated TEE guard."""

import enum
import random
from dataclasses import dataclass, field
from typing import Optional

from . import codec
from .crypto import (
    SchnorrGroup,
    SchnorrKeyPair,
    blind,
    digest,
    draw_blinding_factor,
    schnorr_keygen,
    schnorr_prove,
    unblind,
)
from .funds import (
    Coin,
    ShareOpening,
    TaPublic,
    TransactionStatement,
    TransferChain,
    TransferRecord,
    append_transfer,
    commit_identity,
    make_candidates,
    open_candidates,
    owner_message,
    record_context,
    serial_from_parts,
    verify_chain,
    verify_coin,
)
from .netsim import TA, Delivery, Network
from .trust_anchor import (
    CutAndChooseFailed,
    DepositRequest,
    RecoveryClaim,
    SettlementResult,
    TrustAnchor,
    deposit_context,
    recovery_context,
)


class TeeMode(enum.Enum):
    UNPROTECTED = "Unprotected"
    SECURE_ELEMENT = "SecureElement"


class WalletError(Exception):
    pass


class Offline(WalletError):
    pass


class IssuanceAborted(WalletError):
    pass


class CoinNotHeld(WalletError):
    pass


class Expired(WalletError):
    pass


class NoPeerLink(WalletError):
    pass


class TeeViolation(WalletError):
    pass


class RecoveryDisabled(WalletError):
    pass


class WalletLost(WalletError):
    pass


@dataclass
class Holding:
    """A coin in custody: its chain plus the secrets needed to pass it on."""

    chain: TransferChain
    secret: int
    public: int
    openings: tuple

    @property
    def serial(self) -> int:
        return self.chain.coin.serial

    def key(self, group: SchnorrGroup) -> SchnorrKeyPair:
        return SchnorrKeyPair(group, self.secret, self.public)

    def to_wire(self):
        return [self.chain.to_wire(), self.secret, self.public, [o.to_wire() for o in self.openings]]

    @classmethod
    def from_wire(cls, tree):
        chain, secret, public, openings = tree
        return cls(TransferChain.from_wire(chain), secret, public,
                   tuple(ShareOpening.from_wire(o) for o in openings))


@dataclass(frozen=True)
class PaymentOffer:
    """The payee's half of an offline payment: challenge, fresh pseudonym, share commitments."""

    payee: str
    challenge: tuple
    onetime_public: int
    commitments: tuple

    def to_wire(self):
        return [self.payee, list(self.challenge), self.onetime_public, [c.to_wire() for c in self.commitments]]

    def to_bytes(self) -> bytes:
        return codec.pack(self.to_wire())


@dataclass
class _OpenOffer:
    offer: PaymentOffer
    secret: int
    openings: tuple

    def to_wire(self):
        return [self.offer.to_wire(), self.secret, [o.to_wire() for o in self.openings]]

    @classmethod
    def from_wire(cls, tree):
        from .funds import SharePair

        (payee, challenge, pub, commits), secret, openings = tree
        offer = PaymentOffer(payee, tuple(challenge), pub, tuple(SharePair.from_wire(c) for c in commits))
        return cls(offer, secret, tuple(ShareOpening.from_wire(o) for o in openings))


@dataclass(frozen=True)
class ReceiveResult:
    accepted: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.accepted

    def __str__(self):
        return "Accept" if self.accepted else f"Reject({self.reason})"


@dataclass(frozen=True)
class RecoveryKitEntry:
    """Off-device note written at withdrawal: the coin body and its withdrawal key."""

    coin: Coin
    secret: int


@dataclass(frozen=True)
class ReconciliationReport:
    tick: int
    results: tuple
    balance: int


class Wallet:
    def __init__(self, name: str, owner_identity: bytes, group: SchnorrGroup,
                 tee_mode: TeeMode = TeeMode.SECURE_ELEMENT, net: Optional[Network] = None):
        self.name = name
        self.owner_identity = owner_identity
        self.group = group
        self.tee_mode = tee_mode
        self.net = net
        self.long_term_key = None
        self.coins = {}
        self.monotonic_counter = 0
        self.pending_incoming = []
        self.seen = set()
        self.offers = {}
        self.online_balance_shadow = 0
        self.recovery_kit = []
        self.lost = False

    def __repr__(self):
        return f"Wallet({self.name!r}, coins={len(self.coins)}, counter={self.monotonic_counter})"

    # -- helpers -------------------------------------------------------------

    def _alive(self):
        if self.lost:
            raise WalletLost(self.name)

    def _require_online(self):
        if self.net is not None and not self.net.matrix.reachable(self.name):
            raise Offline(self.name)

    def holds(self, serial: int) -> bool:
        return serial in self.coins

    def _select(self, coin_selector) -> Holding:
        if not self.coins:
            raise CoinNotHeld("wallet holds no coins")
        if coin_selector is None:
            return next(iter(self.coins.values()))
        if callable(coin_selector):
            for h in self.coins.values():
                if coin_selector(h.chain.coin):
                    return h
            raise CoinNotHeld("no held coin matches the selector")
        if coin_selector not in self.coins:
            raise CoinNotHeld(coin_selector)
        return self.coins[coin_selector]

    # -- funding -------------------------------------------------------------

    def withdraw(self, ta: TrustAnchor, denomination: int, tick: int, rng: random.Random,
                 candidates=None) -> Coin:
        """Blind cut-and-choose withdrawal.  ``candidates`` overrides the honest candidate set."""
        self._alive()
        self._require_online()
        pub = ta.public.rsa
        n = pub.n
        key = schnorr_keygen(self.group, rng)
        if candidates is None:
            candidates = make_candidates(self.owner_identity, 2 * ta.k, rng)
        blindings = [draw_blinding_factor(pub, rng) for _ in candidates]
        blinded = [blind(c.body.message(n), pub, r) for c, r in zip(candidates, blindings)]
        owner_r = draw_blinding_factor(pub, rng)
        owner_blinded = blind(owner_message(key.y, n), pub, owner_r)
        sid, opened = ta.issue(self.owner_identity, denomination, blinded, owner_blinded, tick)
        try:
            blind_sig, expiry = ta.finalize_issue(sid, open_candidates(candidates, opened, blindings), tick)
        except CutAndChooseFailed as exc:
            raise IssuanceAborted(str(exc)) from exc
        survivors = [c for i, c in enumerate(candidates) if i not in opened]
        total_r = owner_r
        for i in range(len(candidates)):
            if i not in opened:
                total_r = total_r * blindings[i] % n
        bodies = tuple(c.body for c in survivors)
        coin = Coin(serial_from_parts(bodies), denomination, unblind(blind_sig, total_r, pub), expiry,
                    bodies, key.y)
        if verify_coin(coin, pub):
            raise IssuanceAborted("issuer signature does not verify")
        self.coins[coin.serial] = Holding(TransferChain(coin), key.x, key.y,
                                          tuple(c.opening for c in survivors))
        self.recovery_kit.append(RecoveryKitEntry(coin, key.x))
        self.online_balance_shadow = ta.balance(self.owner_identity)
        return coin

    # -- offline payments ----------------------------------------------------

    def make_offer(self, k: int, rng: random.Random) -> PaymentOffer:
        """Payee side: fresh one-time key, random k-bit challenge, committed identity shares."""
        self._alive()
        key = schnorr_keygen(self.group, rng)
        openings = tuple(commit_identity(self.owner_identity, k, rng))
        challenge = tuple(rng.getrandbits(1) for _ in range(k))
        offer = PaymentOffer(self.name, challenge, key.y, tuple(o.pair for o in openings))
        self.offers[key.y] = _OpenOffer(offer, key.x, openings)
        return offer

    def pay_offline(self, offer: PaymentOffer, coin_selector=None, tick: int = 0,
                    rng: Optional[random.Random] = None) -> TransactionStatement:
        self._alive()
        if self.net is not None:
            m = self.net.matrix
            if not m.peer_link(self.name, offer.payee):
                raise NoPeerLink(f"{self.name} -> {offer.payee}")
            if m.reachable(self.name) or m.reachable(offer.payee):
                raise NoPeerLink("offline payment attempted while a party can reach the TA")
        holding = self._select(coin_selector)
        coin = holding.chain.coin
        if coin.expiry is not None and tick >= coin.expiry:
            raise Expired(coin.serial)
        if len(offer.challenge) != coin.k or len(offer.commitments) != coin.k:
            raise WalletError("offer does not match the coin's challenge length")
        counter = self.monotonic_counter + 1
        revealed = tuple(o.reveal(bit) for o, bit in zip(holding.openings, offer.challenge))
        hop = len(holding.chain.records)
        draft = TransferRecord(hop, None, tuple(offer.challenge), revealed, offer.onetime_public, tick,
                               holding.public, counter, tuple(offer.commitments))
        proof = schnorr_prove(holding.key(self.group), record_context(coin.serial, draft.body_wire()),
                              rng or random.Random(counter))
        record = TransferRecord(hop, proof, *_body_fields(draft))
        chain = append_transfer(holding.chain, record)
        del self.coins[coin.serial]
        self.monotonic_counter = counter
        return TransactionStatement.for_chain(chain)

    def receive_offline(self, statement: TransactionStatement, ta_public: TaPublic, tick: int) -> ReceiveResult:
        self._alive()
        chain = statement.chain
        if not chain.records:
            return ReceiveResult(False, "EmptyChain")
        last = chain.records[-1]
        # (serial, hop) rather than serial alone so a coin may legitimately circulate back
        if (statement.serial, last.hop_index) in self.seen:
            return ReceiveResult(False, "DuplicateSerial")
        pending = self.offers.get(last.payee_onetime_public)
        if pending is None:
            return ReceiveResult(False, "UnknownOffer")
        if tuple(last.challenge) != pending.offer.challenge or \
                tuple(last.payee_commitments) != pending.offer.commitments:
            return ReceiveResult(False, "ChallengeMismatch")
        verdict = verify_chain(statement, ta_public, at_tick=tick)
        if not verdict.valid:
            return ReceiveResult(False, verdict.reason)
        del self.offers[last.payee_onetime_public]
        self.seen.add((statement.serial, last.hop_index))
        self.coins[statement.serial] = Holding(chain, pending.secret, pending.offer.onetime_public,
                                               pending.openings)
        self.pending_incoming.append(statement)
        return ReceiveResult(True)

    # -- going online --------------------------------------------------------

    def _deposit(self, ta: TrustAnchor, holding: Holding, tick: int, rng) -> SettlementResult:
        chain = holding.chain
        proof = schnorr_prove(holding.key(self.group), deposit_context(self.owner_identity, chain.digest()), rng)
        request = DepositRequest(TransactionStatement.for_chain(chain), self.owner_identity, proof)
        if self.net is not None and self.net.deliver(self.name, TA, request.to_bytes(), tick) != Delivery.DELIVERED:
            raise Offline(self.name)
        return ta.settle(request, tick)

    def sync(self, ta: TrustAnchor, tick: int, rng: random.Random) -> ReconciliationReport:
        """Deposit every received coin still in custody; each leaves custody whatever the verdict."""
        self._alive()
        self._require_online()
        results = []
        for statement in self.pending_incoming:
            holding = self.coins.get(statement.serial)
            if holding is None or holding.chain != statement.chain:
                continue  # spent onward; the later holder deposits
            results.append(self._deposit(ta, holding, tick, rng))
            del self.coins[statement.serial]
        self.pending_incoming = []
        self.online_balance_shadow = ta.balance(self.owner_identity)
        return ReconciliationReport(tick, tuple(results), self.online_balance_shadow)

    def defund(self, ta: TrustAnchor, serial: int, tick: int, rng: random.Random) -> SettlementResult:
        """Return a held coin to the online account."""
        self._alive()
        self._require_online()
        holding = self._select(serial)
        result = self._deposit(ta, holding, tick, rng)
        del self.coins[serial]
        self.pending_incoming = [s for s in self.pending_incoming if s.serial != serial]
        self.online_balance_shadow = ta.balance(self.owner_identity)
        return result

    # -- raw state: the clone / rollback surface -------------------------------

    def state_wire(self):
        return [self.name, self.owner_identity, self.tee_mode.value, self.monotonic_counter,
                [h.to_wire() for h in self.coins.values()],
                [s.to_wire() for s in self.pending_incoming],
                [[s, h] for s, h in sorted(self.seen)],
                [o.to_wire() for o in self.offers.values()],
                self.online_balance_shadow]

    def state_digest(self) -> str:
        return digest("wallet", self.state_wire()).hex()

    def export_state(self) -> bytes:
        self._alive()
        if self.tee_mode is TeeMode.SECURE_ELEMENT:
            raise TeeViolation("secure element refuses raw state export")
        return codec.pack(self.state_wire())

    def _load(self, raw: bytes):
        name, identity, mode, counter, coins, pending, seen, offers, shadow = codec.unpack(raw)
        self.name, self.owner_identity, self.tee_mode = name, identity, TeeMode(mode)
        self.monotonic_counter = counter
        holdings = [Holding.from_wire(h) for h in coins]
        self.coins = {h.serial: h for h in holdings}
        self.pending_incoming = [TransactionStatement.from_wire(s) for s in pending]
        self.seen = {(s, h) for s, h in seen}
        opened = [_OpenOffer.from_wire(o) for o in offers]
        self.offers = {o.offer.onetime_public: o for o in opened}
        self.online_balance_shadow = shadow

    @classmethod
    def import_state(cls, raw: bytes, group: SchnorrGroup, net: Optional[Network] = None,
                     name: Optional[str] = None) -> "Wallet":
        """Build a wallet (a clone) from a raw snapshot."""
        w = cls("", b"", group, TeeMode.UNPROTECTED, net)
        w._load(raw)
        if w.tee_mode is TeeMode.SECURE_ELEMENT:
            raise TeeViolation("secure element refuses raw state import")
        if name is not None:
            w.name = name
        return w

    def restore_state(self, raw: bytes):
        """Roll this wallet back to a snapshot."""
        self._alive()
        if self.tee_mode is TeeMode.SECURE_ELEMENT:
            raise TeeViolation("secure element refuses raw state import")
        name, net = self.name, self.net
        self._load(raw)
        self.name, self.net = name, net


def _body_fields(draft: TransferRecord):
    return (draft.challenge, draft.revealed_shares, draft.payee_onetime_public, draft.tick,
            draft.payer_public, draft.counter, draft.payee_commitments)


def file_recovery_claim(owner_identity: bytes, kit, tick: int, group: SchnorrGroup,
                        recovery_enabled: bool, rng: random.Random) -> RecoveryClaim:
    """Build a claim for the coins in ``kit`` (a list of :class:`RecoveryKitEntry`)."""
    if not recovery_enabled:
        raise RecoveryDisabled("no expiry configured, so lost coins can never be invalidated")
    kit = list(kit)
    proofs = tuple(schnorr_prove(SchnorrKeyPair(group, e.secret, e.coin.owner_public),
                                 recovery_context(owner_identity, e.coin.serial), rng) for e in kit)
    return RecoveryClaim(owner_identity, tuple(e.coin for e in kit), proofs, tick)
