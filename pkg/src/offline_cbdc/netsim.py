"""Discrete-tick connectivity fabric with an eavesdropper's transcript."""

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

TA = "TA"


class Delivery(enum.Enum):
    DELIVERED = "Delivered"
    NO_LINK = "NoLink"
    DROPPED = "Dropped"


@dataclass(frozen=True)
class ConnectivityMatrix:
    tick: int
    ta_reachable: dict
    peer_links: frozenset = frozenset()

    def reachable(self, party: str) -> bool:
        return self.ta_reachable.get(party, False)

    def peer_link(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.peer_links

    def offline_payment_allowed(self, payer: str, payee: str) -> bool:
        return self.peer_link(payer, payee) and not self.reachable(payer) and not self.reachable(payee)


@dataclass(frozen=True)
class EavesdropEntry:
    tick: int
    sender: str
    receiver: str
    payload: bytes

    def to_line(self) -> str:
        return f"{self.tick}\t{self.sender}\t{self.receiver}\t{self.payload.hex()}"


@dataclass
class Network:
    """Owns the connectivity matrix and the append-only eavesdrop log.

    Parties start online with no peer links.  A link to the trust anchor
    exists exactly when the party is TA-reachable.
    """

    parties: list
    matrix: ConnectivityMatrix = None
    log: list = field(default_factory=list)
    history: list = field(default_factory=list)
    drop_ticks: set = field(default_factory=set)

    def __post_init__(self):
        if self.matrix is None:
            self.matrix = ConnectivityMatrix(0, {p: True for p in self.parties})

    def set_connectivity(self, tick: int, online: Iterable[str] = (), offline: Iterable[str] = (),
                         link: Iterable = (), unlink: Iterable = (), all_offline: bool = False,
                         all_online: bool = False) -> ConnectivityMatrix:
        reach = dict(self.matrix.ta_reachable)
        if all_offline:
            reach = {p: False for p in self.parties}
        if all_online:
            reach = {p: True for p in self.parties}
        for p in offline:
            reach[p] = False
        for p in online:
            reach[p] = True
        links = set(self.matrix.peer_links)
        for a, b in link:
            links.add(frozenset((a, b)))
        for a, b in unlink:
            links.discard(frozenset((a, b)))
        self.matrix = ConnectivityMatrix(tick, reach, frozenset(links))
        self.history.append(self.matrix)
        return self.matrix

    def partition(self, tick: int, group: Iterable[str]) -> ConnectivityMatrix:
        """Cut ``group`` off from the TA and link its members pairwise."""
        group = list(group)
        pairs = [(a, b) for i, a in enumerate(group) for b in group[i + 1:]]
        return self.set_connectivity(tick, offline=group, link=pairs)

    def can_reach(self, sender: str, receiver: str) -> bool:
        if receiver == TA:
            return self.matrix.reachable(sender)
        if sender == TA:
            return self.matrix.reachable(receiver)
        return self.matrix.peer_link(sender, receiver)

    def deliver(self, sender: str, receiver: str, payload: bytes, tick: Optional[int] = None) -> Delivery:
        tick = self.matrix.tick if tick is None else tick
        if not self.can_reach(sender, receiver):
            return Delivery.NO_LINK
        if tick in self.drop_ticks:
            return Delivery.DROPPED
        self.log.append(EavesdropEntry(tick, sender, receiver, bytes(payload)))
        return Delivery.DELIVERED

    def export_log(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.log)


def parse_log(text: str) -> list:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        tick, sender, receiver, hexpayload = line.split("\t")
        out.append(EavesdropEntry(int(tick), sender, receiver, bytes.fromhex(hexpayload)))
    return out
