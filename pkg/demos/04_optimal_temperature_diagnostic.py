"""Which temperatures best explain the good and the bad rollouts?

Archive every rollout of a short needle run, find each rollout's
likelihood-optimal grid temperature, and compare the rollouts with positive
advantage against those with negative advantage in five-step windows.
"""

from tampo import GrpoConfig, Schedule, TampoConfig, init_params, make_suite, optimal_temperature_diagnostic, train
from tampo.tempmeta import DEFAULT_GRID

tasks = make_suite("rare_needle", 16, 8, 6)
run = train(init_params(tasks, 8, 6), tasks, Schedule.fixed(1.0), GrpoConfig(learning_rate=1.0), TampoConfig(),
            steps=40, batch_size=8, G=8, seed=0, archive=True)
report = optimal_temperature_diagnostic(run.archive, DEFAULT_GRID, window=5)

print("steps     positive: n  median T*   negative: n  median T*")
for w in report.windows:
    pos, neg = w.positive_summary, w.negative_summary
    fmt = lambda s: f"{s['count']:4d}  {s['median'] if s['median'] is not None else float('nan'):9.2f}"  # noqa: E731
    print(f"{w.first_step:3d}-{w.last_step:<3d}         {fmt(pos)}             {fmt(neg)}")

# Successful rollouts contain the low-logit needle, which a flatter softmax
# explains better, so their optimum sits at the hot end of the grid.  Failed
# rollouts pick only top-logit tokens and prefer the cold end.
