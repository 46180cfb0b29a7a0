# %% [markdown]
# # Can the trust anchor link deposits to withdrawals?
#
# n users each withdraw one coin of the same value at the same tick, then pay
# one merchant in shuffled order.  The adversary sees exactly what the trust
# anchor logs and guesses which withdrawal produced each deposited coin.
# Blinding leaves nothing to match on, so it does no better than chance.

# %%
import random

import numpy as np

from offline_cbdc.adversary import linkage_world, run_linkage_experiment, serials_in_withdrawal_log

ns = np.array([2, 5, 10, 20])
rates = np.array([run_linkage_experiment(int(n), 200, seed=1).success_rate for n in ns])
for n, r in zip(ns, rates):
    print(f"n={n:3d}  success={r:.3f}  chance={1 / n:.3f}")
print("max deviation from 1/n:", float(np.max(np.abs(rates - 1 / ns))))

# %%
ta, truth = linkage_world(10, random.Random(0))
print("deposited serials found in the withdrawal log:", serials_in_withdrawal_log(ta.ta_view()))
