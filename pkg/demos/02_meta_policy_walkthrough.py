"""Hand-driven meta-policy updates.

Feed made-up batch advantages into the EMA, rebuild the distribution over
temperatures, and watch which temperatures survive the nucleus cut.
"""

import numpy as np

from tampo import MetaPolicyState, TemperatureGrid, ema_update, meta_distribution, sample_temperature
from tampo.tempmeta import nucleus

grid = TemperatureGrid.from_range(0.6, 1.5, 0.1)
state = MetaPolicyState.initial(len(grid))
alpha, top_p = 0.05, 0.7

# Pretend that high temperatures keep earning advantage for 30 steps.
favor_hot = np.linspace(-0.05, 0.05, len(grid))
for _ in range(30):
    state = ema_update(state, favor_hot, alpha)
dist = meta_distribution(state.ema_adv)
print("after 30 steps favouring hot temperatures")
print("  ema:  ", np.round(state.ema_adv, 4))
print("  dist: ", np.round(dist, 3))
keep, probs = nucleus(dist, top_p)
print("  nucleus keeps", [grid.values[i] for i in keep], "with mass", np.round(probs, 3))

# Then the signal flips.  The EMA needs a while to forget the old preference.
for step in range(1, 17):
    state = ema_update(state, -favor_hot, alpha)
    if step % 2 == 0:
        keep, _ = nucleus(meta_distribution(state.ema_adv), top_p)
        print(f"  {step:3d} steps after the flip, nucleus = {[grid.values[i] for i in keep]}")

rng = np.random.default_rng(0)
draws = [sample_temperature(meta_distribution(state.ema_adv), grid, top_p, rng)[0] for _ in range(1000)]
vals, counts = np.unique(draws, return_counts=True)
print("\n1000 draws from the final meta-policy:", dict(zip(vals.tolist(), counts.tolist())))
print("greedy draw (top_p=0):", sample_temperature(meta_distribution(state.ema_adv), grid, 0.0, rng)[0])
