"""The trust anchor: blind issuance, settlement ledger, double-spend handling, recovery."""

import random
from dataclasses import dataclass, field
from typing import Optional

from . import codec
from .crypto import (
    RsaKeyPair,
    SchnorrGroup,
    SchnorrProof,
    blind,
    schnorr_verify,
    sign_blinded,
)
from .funds import (
    CandidateOpening,
    Coin,
    TaPublic,
    TransactionStatement,
    TransferChain,
    TransferRecord,
    SharePair,
    denomination_message,
    extract_double_spender,
    fork_point,
    opening_encodes,
    verify_chain,
    verify_coin,
)


class TaError(Exception):
    pass


class InsufficientBalance(TaError):
    pass


class CutAndChooseFailed(TaError):
    def __init__(self, index):
        super().__init__(f"candidate {index} failed the opening check")
        self.index = index


class UnknownSession(TaError):
    pass


class UnknownAccount(TaError):
    pass


SETTLED = "Settled"
DOUBLE_SPEND = "DoubleSpendDetected"
EXPIRED = "Expired"
INVALID = "InvalidChain"

CREDITED = "Credited"
REJECTED_SPENT = "RejectedSpent"
REJECTED_EARLY = "RejectedEarly"
REJECTED_INVALID = "RejectedInvalid"


def deposit_context(depositor: bytes, chain_digest: bytes) -> bytes:
    return codec.pack(["deposit", depositor, chain_digest])


def recovery_context(owner: bytes, serial: int) -> bytes:
    return codec.pack(["recovery", owner, serial])


@dataclass(frozen=True)
class DepositRequest:
    """A statement handed to the TA by its current holder, with proof of holding."""

    statement: TransactionStatement
    depositor: bytes
    proof: SchnorrProof

    def to_wire(self):
        return [self.statement.to_wire(), self.depositor, self.proof.to_wire()]

    @classmethod
    def from_wire(cls, tree):
        return cls(TransactionStatement.from_wire(tree[0]), tree[1], SchnorrProof.from_wire(tree[2]))

    def to_bytes(self) -> bytes:
        return codec.pack(self.to_wire())

    @classmethod
    def from_bytes(cls, data: bytes) -> "DepositRequest":
        return cls.from_wire(codec.unpack(data))


@dataclass(frozen=True)
class Evidence:
    """Why the TA believes ``identity`` double-spent.

    ``kind == "fork"``: two records at ``hop`` answering the same ``answered``
    commitments.  ``kind == "deposit"``: the holder at ``hop`` deposited the
    coin and also passed it on; the identity comes from the deposit itself.
    """

    kind: str
    hop: int
    record_a: Optional[TransferRecord] = None
    record_b: Optional[TransferRecord] = None
    answered: tuple = ()
    depositor: bytes = b""

    def reproduce(self, coin: Coin) -> Optional[bytes]:
        if self.kind == "fork":
            return extract_double_spender(self.record_a, self.record_b, coin, answered=self.answered)
        return self.depositor

    def to_wire(self):
        return [self.kind, self.hop,
                self.record_a.to_wire() if self.record_a else None,
                self.record_b.to_wire() if self.record_b else None,
                [p.to_wire() for p in self.answered], self.depositor]

    @classmethod
    def from_wire(cls, tree):
        kind, hop, ra, rb, answered, depositor = tree
        return cls(kind, hop,
                   TransferRecord.from_wire(ra) if ra is not None else None,
                   TransferRecord.from_wire(rb) if rb is not None else None,
                   tuple(SharePair.from_wire(p) for p in answered), depositor)


@dataclass(frozen=True)
class SettlementResult:
    kind: str
    serial: int
    identity: Optional[bytes] = None
    evidence: Optional[Evidence] = None
    duplicate: bool = False
    reason: Optional[str] = None
    over_credit: int = 0
    flagged: bool = False

    def __str__(self):
        if self.kind == INVALID:
            return f"{INVALID}({self.reason})"
        if self.kind == SETTLED and self.duplicate:
            return f"{SETTLED}(duplicate)"
        return self.kind


@dataclass(frozen=True)
class RecoveryClaim:
    """A claim that the listed coins were lost with the device.

    Carries the coin bodies and a proof of each coin's withdrawal key from the
    user's off-device backup; neither is enough to spend the coin.
    """

    owner_identity: bytes
    coins: tuple
    proofs: tuple
    tick: int

    @property
    def serials(self) -> tuple:
        return tuple(c.serial for c in self.coins)


@dataclass(frozen=True)
class WithdrawalEntry:
    tick: int
    owner: bytes
    denomination: int
    blinded: int


@dataclass(frozen=True)
class DepositEntry:
    tick: int
    serial: int
    depositor: bytes
    outcome: str
    chain: Optional[TransferChain] = None


@dataclass(frozen=True)
class TaView:
    """Everything the TA observes; the input of any linkage adversary."""

    withdrawals: tuple
    deposits: tuple


@dataclass
class IssueSession:
    owner: bytes
    denomination: int
    expiry: Optional[int]
    blinded: tuple
    owner_blinded: int
    opened: tuple
    done: bool = False


@dataclass
class LedgerState:
    accounts: dict = field(default_factory=dict)
    withdrawal_log: list = field(default_factory=list)
    settled_serials: dict = field(default_factory=dict)
    spend_records: dict = field(default_factory=dict)
    blacklist: set = field(default_factory=set)
    recovery_queue: list = field(default_factory=list)
    # bookkeeping beyond the minimal ledger
    settled_chains: dict = field(default_factory=dict)
    depositors: dict = field(default_factory=dict)
    recovered: dict = field(default_factory=dict)
    over_credited: set = field(default_factory=set)
    deposit_log: list = field(default_factory=list)
    evidence: dict = field(default_factory=dict)
    outstanding: int = 0
    initial_total: int = 0
    over_credit: int = 0
    events: list = field(default_factory=list)


class TrustAnchor:
    def __init__(self, keypair: RsaKeyPair, group: SchnorrGroup, accounts: Optional[dict] = None,
                 expiry_ticks: Optional[int] = None, k: int = 16, rng: Optional[random.Random] = None):
        self.keypair = keypair
        self.group = group
        self.expiry_ticks = expiry_ticks
        self.k = k
        self.rng = rng or random.Random(0)
        self.ledger = LedgerState()
        self._sessions = {}
        self._next_session = 0
        for owner, balance in (accounts or {}).items():
            self.open_account(owner, balance)

    @property
    def public(self) -> TaPublic:
        return TaPublic(self.keypair.public, self.group)

    @property
    def recovery_enabled(self) -> bool:
        return self.expiry_ticks is not None

    def open_account(self, owner: bytes, balance: int):
        self.ledger.accounts[owner] = self.ledger.accounts.get(owner, 0) + balance
        self.ledger.initial_total += balance

    def balance(self, owner: bytes) -> int:
        return self.ledger.accounts.get(owner, 0)

    def _log(self, tick, kind, *payload):
        self.ledger.events.append((tick, kind, codec.pack(list(payload))))

    # -- issuance ----------------------------------------------------------

    def issue(self, owner: bytes, denomination: int, blinded, owner_blinded: int, tick: int):
        """Open an issuance session; returns ``(session_id, indices_to_open)``."""
        if owner not in self.ledger.accounts:
            raise UnknownAccount(owner)
        if denomination <= 0:
            raise ValueError("denomination must be positive")
        if self.ledger.accounts[owner] < denomination:
            raise InsufficientBalance(f"balance {self.ledger.accounts[owner]} < {denomination}")
        if len(blinded) != 2 * self.k:
            raise TaError(f"expected {2 * self.k} candidates, got {len(blinded)}")
        opened = tuple(sorted(self.rng.sample(range(len(blinded)), len(blinded) // 2)))
        expiry = None if self.expiry_ticks is None else tick + self.expiry_ticks
        sid = self._next_session
        self._next_session += 1
        self._sessions[sid] = IssueSession(owner, denomination, expiry, tuple(blinded), owner_blinded, opened)
        return sid, opened

    def finalize_issue(self, session_id: int, openings, tick: int):
        """Check the opened half and blind-sign the rest; returns ``(blind_signature, expiry)``."""
        s = self._sessions.pop(session_id, None)
        if s is None:
            raise UnknownSession(session_id)
        pub = self.keypair.public
        by_index = {o.index: o for o in openings}
        if set(by_index) != set(s.opened):
            missing = sorted(set(s.opened) ^ set(by_index))
            raise CutAndChooseFailed(missing[0])
        for i in s.opened:
            o = by_index[i]
            if not opening_encodes(o, s.owner):
                raise CutAndChooseFailed(i)
            try:
                reblinded = blind(o.body.message(pub.n), pub, o.blinding)
            except ValueError:
                raise CutAndChooseFailed(i) from None
            if reblinded != s.blinded[i]:
                raise CutAndChooseFailed(i)
        if self.ledger.accounts[s.owner] < s.denomination:
            raise InsufficientBalance()
        n = pub.n
        composite = denomination_message(s.denomination, s.expiry, n) * s.owner_blinded % n
        for i, b in enumerate(s.blinded):
            if i not in s.opened:
                composite = composite * b % n
        signature = sign_blinded(composite, self.keypair)
        self.ledger.accounts[s.owner] -= s.denomination
        self.ledger.outstanding += s.denomination
        self.ledger.withdrawal_log.append(WithdrawalEntry(tick, s.owner, s.denomination, composite))
        self._log(tick, "withdraw", s.owner, s.denomination, composite)
        return signature, s.expiry

    # -- settlement --------------------------------------------------------

    def settle(self, request: DepositRequest, tick: int) -> SettlementResult:
        result = self._settle(request, tick)
        led = self.ledger
        led.deposit_log.append(DepositEntry(tick, request.statement.serial, request.depositor, result.kind,
                                            request.statement.chain))
        self._log(tick, "settle", request.statement.serial, request.depositor, str(result),
                  result.identity or b"")
        return result

    def _settle(self, request: DepositRequest, tick: int) -> SettlementResult:
        led = self.ledger
        st = request.statement
        chain = st.chain
        coin = chain.coin
        serial = coin.serial
        verdict = verify_chain(st, self.public)
        if not verdict.valid:
            if verdict.reason == "Expired":
                return SettlementResult(EXPIRED, serial)
            return SettlementResult(INVALID, serial, reason=verdict.reason)
        chain_digest = chain.digest()
        if not schnorr_verify(self.group, chain.holder_public(), deposit_context(request.depositor, chain_digest),
                              request.proof):
            return SettlementResult(INVALID, serial, reason="BadDepositProof")
        if request.depositor not in led.accounts:
            return SettlementResult(INVALID, serial, reason="UnknownAccount")
        flagged = request.depositor in led.blacklist

        if serial in led.settled_serials:
            if led.settled_serials[serial] == chain_digest:
                return SettlementResult(SETTLED, serial, duplicate=True, flagged=flagged)
            return self._double_spend(request, chain, chain_digest, flagged)

        if serial in led.recovered:
            claimant = led.recovered[serial]
            moved_before_expiry = any(r.tick < coin.expiry for r in chain.records)
            extra = 0
            if moved_before_expiry and serial not in led.over_credited:
                led.over_credited.add(serial)
                led.over_credit += coin.denomination
                extra = coin.denomination
                self._blacklist(tick, claimant, serial)
            return SettlementResult(EXPIRED, serial, identity=claimant if moved_before_expiry else None,
                                    over_credit=extra, flagged=flagged)

        if coin.expiry is not None and tick >= coin.expiry:
            return SettlementResult(EXPIRED, serial, flagged=flagged)

        led.settled_serials[serial] = chain_digest
        led.settled_chains[serial] = chain
        led.depositors[serial] = request.depositor
        led.spend_records.setdefault(serial, []).append(chain.records[0] if chain.records else None)
        led.accounts[request.depositor] += coin.denomination
        led.outstanding -= coin.denomination
        return SettlementResult(SETTLED, serial, flagged=flagged)

    def _double_spend(self, request, chain: TransferChain, chain_digest, flagged) -> SettlementResult:
        led = self.ledger
        serial = chain.coin.serial
        first = led.settled_chains[serial]
        hop = fork_point(first, chain)
        if hop is not None:
            answered = first.answered_pairs(hop)
            evidence = Evidence("fork", hop, first.records[hop], chain.records[hop], answered)
        elif len(chain.records) > len(first.records):
            # the earlier depositor kept spending after depositing
            evidence = Evidence("deposit", len(first.records), depositor=led.depositors[serial])
        else:
            evidence = Evidence("deposit", len(chain.records), depositor=request.depositor)
        identity = evidence.reproduce(chain.coin)
        led.evidence.setdefault(serial, []).append(evidence)
        records = led.spend_records.setdefault(serial, [])
        if chain.records and chain.records[0] not in records:
            records.append(chain.records[0])
        last_tick = chain.records[-1].tick if chain.records else 0
        if identity is not None:
            self._blacklist(last_tick, identity, serial)
        else:
            self._blacklist(last_tick, None, serial)
        return SettlementResult(DOUBLE_SPEND, serial, identity=identity, evidence=evidence, flagged=flagged)

    def _blacklist(self, tick, identity, serial):
        for item in (identity, serial):
            if item is not None and item not in self.ledger.blacklist:
                self.ledger.blacklist.add(item)
                self._log(tick, "blacklist", item)

    # -- recovery ----------------------------------------------------------

    def file_claim(self, claim: RecoveryClaim):
        self.ledger.recovery_queue.append(claim)

    def process_recoveries(self, tick: int) -> list:
        """Decide every queued claim; claims on coins not yet expired stay queued."""
        led = self.ledger
        results = []
        still_queued = []
        for claim in led.recovery_queue:
            keep = False
            for coin, proof in zip(claim.coins, claim.proofs):
                outcome = self._decide_claim(claim, coin, proof, tick)
                if outcome == REJECTED_EARLY:
                    keep = True
                results.append((claim, coin.serial, outcome))
                self._log(tick, "recovery", claim.owner_identity, coin.serial, outcome)
            if keep:
                # re-queue only the coins that were too early
                early = [(c, p) for c, p in zip(claim.coins, claim.proofs)
                         if c.expiry is not None and tick < c.expiry]
                still_queued.append(RecoveryClaim(claim.owner_identity, tuple(c for c, _ in early),
                                                  tuple(p for _, p in early), claim.tick))
        led.recovery_queue = still_queued
        return results

    def _decide_claim(self, claim: RecoveryClaim, coin: Coin, proof: SchnorrProof, tick: int) -> str:
        led = self.ledger
        if (coin.expiry is None or verify_coin(coin, self.keypair.public)
                or claim.owner_identity not in led.accounts
                or not schnorr_verify(self.group, coin.owner_public,
                                      recovery_context(claim.owner_identity, coin.serial), proof)):
            return REJECTED_INVALID
        if coin.serial in led.settled_serials or coin.serial in led.recovered:
            return REJECTED_SPENT
        if tick < coin.expiry:
            return REJECTED_EARLY
        led.recovered[coin.serial] = claim.owner_identity
        led.accounts[claim.owner_identity] += coin.denomination
        led.outstanding -= coin.denomination
        return CREDITED

    # -- views ---------------------------------------------------------------

    def ta_view(self) -> TaView:
        return TaView(tuple(self.ledger.withdrawal_log), tuple(self.ledger.deposit_log))

    def conservation(self) -> dict:
        led = self.ledger
        return {
            "accounts_sum": sum(led.accounts.values()),
            "outstanding": led.outstanding,
            "over_credit": led.over_credit,
            "initial_total": led.initial_total,
        }

    def dump(self) -> str:
        """Ledger events as ``tick<TAB>kind<TAB>payload-hex`` lines."""
        return "".join(f"{t}\t{kind}\t{payload.hex()}\n" for t, kind, payload in self.ledger.events)
