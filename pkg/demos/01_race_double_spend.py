# %% [markdown]
# # A race double spend, end to end
#
# Mallory withdraws one coin, copies her unprotected wallet, and pays the same
# coin to two merchants who cannot see each other.  Both accept offline.  The
# second merchant to sync learns the coin was already deposited, and the two
# transfer records together reveal Mallory's identity.

# %%
from offline_cbdc.world import World, WorldConfig
from offline_cbdc.wallet import TeeMode
from offline_cbdc.scenario import audit_trace, render_audit

w = World(WorldConfig(seed=7, parties={"mallory": 100, "victor": 0, "vera": 0},
                      default_tee=TeeMode.UNPROTECTED, k=16, name="demo-race"))
coin = w.withdraw("mallory", 10, 1)
print("withdrew serial", hex(coin.serial)[:18], "...")

# %%
# Two isolated islands: mallory+victor and a clone+vera.
w.export_state("mallory", "copy", 2)
w.import_state("copy", "mallory2", 2)
w.set_connectivity(3, offline=["mallory", "mallory2", "victor", "vera"],
                   link=[("mallory", "victor"), ("mallory2", "vera")])
a = w.pay("mallory", "victor", 3, fraud=True)
b = w.pay("mallory2", "vera", 3, fraud=True)
print("victor's statement accepted:", not isinstance(a, Exception))
print("vera's statement accepted:  ", not isinstance(b, Exception))

# %%
w.set_connectivity(4, all_online=True)
for r in w.sync("victor", 5).results:
    print("victor sync:", r)
for r in w.sync("vera", 6).results:
    print("vera sync:  ", r, "-> identity", r.identity)

# %%
# The trace auditor sees two holders of one serial at tick 3.
print(render_audit(audit_trace(w.trace_lines())))
