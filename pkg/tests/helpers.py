"""Small fixtures shared by several test modules."""

import copy
import dataclasses
import random

from offline_cbdc.crypto import default_group, default_rsa_keypair
from offline_cbdc.trust_anchor import TrustAnchor
from offline_cbdc.wallet import TeeMode, Wallet


class Economy:
    """A TA plus named wallets with no network (every call allowed)."""

    def __init__(self, k=4, expiry=None, tee=TeeMode.SECURE_ELEMENT, seed=0, names=("alice", "bob", "carol")):
        self.group = default_group()
        self.ta = TrustAnchor(default_rsa_keypair(), self.group, {}, expiry, k, random.Random(seed))
        self.rng = random.Random(seed + 1)
        self.k = k
        self.w = {}
        for name in names:
            self.ta.open_account(name.encode(), 100)
            self.w[name] = Wallet(name, name.encode(), self.group, tee)

    def withdraw(self, name, denomination=10, tick=1):
        return self.w[name].withdraw(self.ta, denomination, tick, self.rng)

    def pay(self, payer, payee, tick=2, challenge=None, receive=True):
        offer = self.w[payee].make_offer(self.k, self.rng)
        if challenge is not None:
            offer = dataclasses.replace(offer, challenge=tuple(challenge))
            opened = self.w[payee].offers[offer.onetime_public]
            self.w[payee].offers[offer.onetime_public] = dataclasses.replace(opened, offer=offer)
        st = self.w[payer].pay_offline(offer, None, tick, self.rng)
        if receive:
            result = self.w[payee].receive_offline(st, self.ta.public, tick)
            assert result.accepted, str(result)
        return st

    def clone(self):
        return copy.deepcopy(self)
