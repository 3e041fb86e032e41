"""Re-scoring one stored trajectory at many temperatures.

A trajectory keeps the raw logits it was sampled from, so its likelihood at any
other temperature costs one softmax per step and no new generation.
"""

import numpy as np

from tampo import TemperatureGrid, Trajectory, likelihood_optimal_temp, sparsemax, temp_softmax
from tampo.tempmeta import avg_loglik_curve

grid = TemperatureGrid.from_range(0.6, 1.5, 0.1)

# Two steps over a vocabulary of four.  Step one picks the top token,
# step two picks a token one logit below the leader.
logits = np.array([[2.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
tokens = np.array([0, 1])
traj = Trajectory(prompt_id=0, tokens=tokens, step_logits=logits)

print("softmax of step 2 at T=0.6 :", np.round(temp_softmax(logits[1], 0.6), 3))
print("softmax of step 2 at T=1.5 :", np.round(temp_softmax(logits[1], 1.5), 3))

curve = avg_loglik_curve(traj, grid.array)
print("\naverage log-likelihood over the grid")
for T, v in zip(grid.values, curve):
    print(f"  T={T:.1f}  {v: .4f}")

T_star, k = likelihood_optimal_temp(traj, grid)
print(f"\nlikelihood-optimal grid temperature: {T_star} (index {k})")

# Sparsemax turns the curve into a sparse weighting over temperatures.
w = sparsemax(curve)
print("sparsemax weights:", np.round(w, 3), "sum", w.sum())

# Scaling the same curve up concentrates the weight on fewer temperatures.
print("sparsemax of 20x curve:", np.round(sparsemax(20 * curve), 3))
