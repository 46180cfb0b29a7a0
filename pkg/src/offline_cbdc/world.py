"""A simulated economy: one TA, a set of wallets, the network, and an append-only trace.

Every action is recorded as a trace event whether it succeeds or not;
failures are part of the story (a refused export is how a secure element
defeats a clone).  Actions return the result object or the exception
instance instead of raising, so scripted strategies can branch on them.
"""

import json
import random
from dataclasses import dataclass, field
from typing import Optional

from . import codec
from .crypto import HASH_NAME, default_group, default_rsa_keypair, digest
from .funds import Coin, TransactionStatement, TransferRecord
from .netsim import TA, Delivery, Network
from .trust_anchor import (
    CREDITED,
    DOUBLE_SPEND,
    EXPIRED,
    SETTLED,
    DepositRequest,
    TaError,
    TrustAnchor,
)
from .wallet import (
    PaymentOffer,
    ReceiveResult,
    TeeMode,
    Wallet,
    WalletError,
    file_recovery_claim,
)


class ScheduleViolation(ValueError):
    def __init__(self, tick):
        super().__init__(f"schedule goes back in time at tick {tick}")
        self.tick = tick


@dataclass
class WorldConfig:
    seed: int = 0
    parties: dict = field(default_factory=dict)
    tee_modes: dict = field(default_factory=dict)
    default_tee: TeeMode = TeeMode.SECURE_ELEMENT
    expiry_ticks: Optional[int] = None
    k: int = 16
    rsa_bits: int = 512
    key_seed: int = 0
    name: str = "world"
    expect_failures: tuple = ()


def identity_of(name: str) -> bytes:
    return name.encode("utf-8")


def serial_hex(serial: int) -> str:
    return f"{serial:064x}"


class World:
    def __init__(self, config: WorldConfig):
        self.config = config
        self.tick = 0
        self.group = default_group()
        self.keypair = default_rsa_keypair(config.rsa_bits, config.key_seed)
        self._rngs = {}
        self.ta = TrustAnchor(self.keypair, self.group, {}, config.expiry_ticks, config.k, self.rng(TA))
        self.net = Network(list(config.parties))
        self.wallets = {}
        self.backups = {}
        self.snapshots = {}
        self.statements = []
        self.trace = []
        for name, balance in config.parties.items():
            self.ta.open_account(identity_of(name), balance)
            self._add_wallet(name, config.tee_modes.get(name, config.default_tee))
        self.emit("header", "world", "ok", name=config.name, seed=config.seed, hash=HASH_NAME, k=config.k,
                  expiry_ticks=config.expiry_ticks,
                  parties={n: {"balance": b, "tee": self.wallets[n].tee_mode.value}
                           for n, b in config.parties.items()},
                  expect_failures=sorted(config.expect_failures), ledger=self.ledger_snapshot())

    # -- plumbing --------------------------------------------------------------

    def rng(self, name: str) -> random.Random:
        if name not in self._rngs:
            self._rngs[name] = random.Random(f"{self.config.seed}:{name}")
        return self._rngs[name]

    def _add_wallet(self, name, tee_mode, wallet=None):
        if wallet is None:
            wallet = Wallet(name, identity_of(name), self.group, tee_mode, self.net)
        self.wallets[name] = wallet
        self.backups.setdefault(name, [])
        if name not in self.net.parties:
            self.net.parties.append(name)
            self.net.matrix.ta_reachable[name] = True
        return wallet

    def advance(self, tick: int):
        if tick < self.tick:
            raise ScheduleViolation(tick)
        self.tick = tick

    def ledger_snapshot(self) -> dict:
        snap = self.ta.conservation()
        snap["blacklist"] = len(self.ta.ledger.blacklist)
        return snap

    def emit(self, kind: str, actor: str, outcome: str, payload: bytes = b"", **data) -> dict:
        event = {
            "tick": self.tick,
            "actor": actor,
            "kind": kind,
            "digest": digest(payload).hex() if payload else "",
            "outcome": outcome,
            "data": data,
        }
        self.trace.append(event)
        return event

    def trace_lines(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.trace)

    def wallet(self, name: str) -> Wallet:
        return self.wallets[name]

    def party_of(self, identity: Optional[bytes]) -> Optional[str]:
        if identity is None:
            return None
        name = identity.decode("utf-8", "replace")
        return name if name in self.config.parties else None

    # -- connectivity ------------------------------------------------------------

    def set_connectivity(self, tick: int, **update):
        self.advance(tick)
        m = self.net.set_connectivity(tick, **update)
        self.emit("connectivity", "net", "ok",
                  online=sorted(p for p, r in m.ta_reachable.items() if r),
                  links=sorted(sorted(pair) for pair in m.peer_links))
        return m

    def go_offline(self, tick: int, *group):
        """Partition ``group`` away from the TA with pairwise peer links."""
        pairs = [(a, b) for i, a in enumerate(group) for b in group[i + 1:]]
        return self.set_connectivity(tick, offline=group, link=pairs)

    def go_online(self, tick: int, *names):
        return self.set_connectivity(tick, online=names)

    # -- funding ---------------------------------------------------------------

    def withdraw(self, name: str, denomination: int, tick: int, candidates=None, fraud: bool = False):
        self.advance(tick)
        w = self.wallets[name]
        try:
            coin = w.withdraw(self.ta, denomination, tick, self.rng(name), candidates=candidates)
        except (WalletError, TaError) as exc:
            self.emit("withdraw", name, type(exc).__name__, denomination=denomination, fraud=fraud,
                      accepted=False, ledger=self.ledger_snapshot())
            return exc
        self.backups[name].append(w.recovery_kit[-1])
        self.emit("withdraw", name, "ok", coin.to_bytes(), serial=serial_hex(coin.serial),
                  denomination=denomination, expiry=coin.expiry, fraud=fraud, accepted=fraud,
                  custody={"add": [[serial_hex(coin.serial), name]]}, ledger=self.ledger_snapshot())
        return coin

    # -- offline payments ------------------------------------------------------

    def pay(self, payer: str, payee: str, tick: int, serial: Optional[int] = None, receive: bool = True,
            fraud: bool = False):
        """Offer, pay and (by default) receive one coin; returns the statement or the error."""
        self.advance(tick)
        pw, rw = self.wallets[payer], self.wallets[payee]
        offer = rw.make_offer(self.config.k, self.rng(payee))
        self.net.deliver(payee, payer, offer.to_bytes(), tick)
        held = pw.coins.get(serial) if serial is not None else next(iter(pw.coins.values()), None)
        prev_size = held.chain.size if held is not None else 0
        try:
            statement = pw.pay_offline(offer, serial, tick, self.rng(payer))
        except WalletError as exc:
            self.emit("pay", payer, type(exc).__name__, payee=payee, fraud=fraud, accepted=False,
                      serial=serial_hex(serial) if serial is not None else None)
            return exc
        self.statements.append(statement)
        chain = statement.chain
        rec = chain.records[-1]
        self.emit("pay", payer, "ok", statement.to_bytes(), payee=payee, serial=serial_hex(statement.serial),
                  hop=rec.hop_index, counter=rec.counter, tee=pw.tee_mode.value, size=chain.size,
                  prev_size=prev_size, fraud=fraud,
                  custody={"remove": [[serial_hex(statement.serial), payer]]})
        if receive:
            self.deliver_statement(payer, payee, statement, tick, fraud=fraud)
        return statement

    def deliver_statement(self, sender: str, receiver: str, statement: TransactionStatement, tick: int,
                          fraud: bool = False):
        """Push statement bytes over the network and let the receiver judge them."""
        self.advance(tick)
        raw = statement.to_bytes()
        status = self.net.deliver(sender, receiver, raw, tick)
        if status is not Delivery.DELIVERED:
            self.emit("receive", receiver, status.value, raw, sender=sender, fraud=fraud, accepted=False,
                      serial=serial_hex(statement.serial))
            return status
        decoded = TransactionStatement.from_bytes(raw)
        result = self.wallets[receiver].receive_offline(decoded, self.ta.public, tick)
        data = dict(sender=sender, serial=serial_hex(statement.serial), hop=len(decoded.chain.records) - 1,
                    fraud=fraud, accepted=result.accepted)
        if result.accepted:
            data["custody"] = {"add": [[serial_hex(statement.serial), receiver]]}
        self.emit("receive", receiver, str(result), raw, **data)
        return result

    # -- going online ----------------------------------------------------------

    def _settle_event(self, actor, result, fraud=False):
        data = dict(serial=serial_hex(result.serial), fraud=fraud,
                    accepted=result.kind == SETTLED and not result.duplicate,
                    identity=result.identity.hex() if result.identity else None,
                    over_credit=result.over_credit, flagged=result.flagged, ledger=self.ledger_snapshot())
        if result.evidence is not None:
            coin = self.ta.ledger.settled_chains[result.serial].coin
            data["evidence"] = codec.pack(result.evidence.to_wire()).hex()
            data["coin"] = coin.to_bytes().hex()
        self.emit("settle", actor, result.kind, duplicate=result.duplicate, reason=result.reason, **data)

    def sync(self, name: str, tick: int):
        self.advance(tick)
        w = self.wallets[name]
        before = set(w.coins)
        try:
            report = w.sync(self.ta, tick, self.rng(name))
        except WalletError as exc:
            self.emit("sync", name, type(exc).__name__)
            return exc
        for result in report.results:
            self._settle_event(name, result)
        gone = sorted(before - set(w.coins))
        self.emit("sync", name, "ok", balance=report.balance,
                  custody={"remove": [[serial_hex(s), name] for s in gone]})
        return report

    def submit_deposit(self, sender: str, raw: bytes, tick: int, fraud: bool = False):
        """Hand raw deposit bytes to the TA (how a replayed deposit reaches it)."""
        self.advance(tick)
        if self.net.deliver(sender, TA, raw, tick) is not Delivery.DELIVERED:
            self.emit("settle", sender, "NoLink", fraud=fraud, accepted=False)
            return None
        result = self.ta.settle(DepositRequest.from_bytes(raw), tick)
        self._settle_event(sender, result, fraud=fraud)
        return result

    # -- raw state attacks -----------------------------------------------------

    def export_state(self, name: str, label: str, tick: int):
        self.advance(tick)
        try:
            raw = self.wallets[name].export_state()
        except WalletError as exc:
            self.emit("export", name, type(exc).__name__, marker=True)
            return exc
        self.snapshots[label] = raw
        self.emit("export", name, "ok", raw, label=label, marker=True)
        return raw

    def import_state(self, label: str, into: str, tick: int):
        """Restore snapshot ``label``: a rollback if ``into`` exists, otherwise a clone device."""
        self.advance(tick)
        raw = self.snapshots.get(label)
        if raw is None:
            self.emit("import", into, "NoSnapshot", marker=True)
            return None
        try:
            if into in self.wallets:
                w = self.wallets[into]
                w.restore_state(raw)
            else:
                w = Wallet.import_state(raw, self.group, self.net, name=into)
                self._add_wallet(into, w.tee_mode, w)
        except WalletError as exc:
            self.emit("import", into, type(exc).__name__, marker=True)
            return exc
        self.emit("import", into, "ok", raw, label=label, owner=w.owner_identity.decode(), marker=True,
                  custody={"add": [[serial_hex(s), into] for s in w.coins]}, counter=w.monotonic_counter)
        return w

    # -- recovery --------------------------------------------------------------

    def lose_wallet(self, name: str, tick: int):
        self.advance(tick)
        w = self.wallets[name]
        lost = sorted(w.coins)
        w.lost = True
        self.emit("lost", name, "ok", custody={"remove": [[serial_hex(s), name] for s in lost]})

    def recovery_claim(self, name: str, tick: int, lost: bool = False, fraud: bool = False):
        """File a claim for every coin in ``name``'s off-device backup."""
        self.advance(tick)
        if lost:
            self.lose_wallet(name, tick)
        kit = list(self.backups[name])
        try:
            claim = file_recovery_claim(identity_of(name), kit, tick, self.group, self.ta.recovery_enabled,
                                        self.rng(f"{name}:recovery"))
        except WalletError as exc:
            self.emit("recovery_claim", name, type(exc).__name__, lost=lost, fraud=fraud, accepted=False)
            return exc
        self.ta.file_claim(claim)
        self.emit("recovery_claim", name, "filed", lost=lost, fraud=fraud, marker=fraud,
                  serials=[serial_hex(s) for s in claim.serials])
        return claim

    def process_recoveries(self, tick: int):
        self.advance(tick)
        results = self.ta.process_recoveries(tick)
        fraudulent = {e["actor"] for e in self.trace if e["kind"] == "recovery_claim" and e["data"].get("fraud")}
        for claim, serial, outcome in results:
            name = claim.owner_identity.decode()
            fraud = name in fraudulent
            self.emit("recovery", name, outcome, serial=serial_hex(serial), fraud=fraud,
                      accepted=outcome == CREDITED, ledger=self.ledger_snapshot())
        return results

    # -- summaries -------------------------------------------------------------

    def balance(self, name: str) -> int:
        return self.ta.balance(identity_of(name))
