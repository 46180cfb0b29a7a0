# %% [markdown]
# # Offline payments, no double spending, no loss on device loss: pick two
#
# With recovery enabled, a user can spend a coin offline right before it
# expires, then claim it as lost.  The trust anchor credits the claim, and the
# merchant's later deposit is refused as expired.  The merchant is out of
# pocket and the ledger carries an over-credit.  Without recovery, a lost
# device simply strands its coins.

# %%
from offline_cbdc.adversary import CONFIGS, AttackKind, run_attack
from offline_cbdc.scenario import bundled_path, run_scenario

for tee, expiry in CONFIGS:
    run = run_attack(AttackKind.RECOVERY_DOUBLE_DIP, tee, expiry)
    c = run.world.ta.conservation()
    print(f"{run.config_label:36s} outcome={str(run.outcome):60s} over_credit={c['over_credit']}")

# %%
for name in ("lost_wallet_no_recovery", "lost_wallet_recovery"):
    world = run_scenario(bundled_path(name)).world
    c = world.ta.conservation()
    print(f"{name:26s} alice balance={world.balance('alice'):3d} stranded={c['outstanding']}")
