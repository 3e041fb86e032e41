"""Adaptive temperature against fixed temperatures on the needle task.

Every prompt rewards any sequence that contains one rare token, which starts two
logits below the rest.  Early on only hot sampling finds it.  Once the policy
has learned it, cooler sampling is enough.  About 20 s on one core.
"""

import numpy as np

from tampo import GrpoConfig, Schedule, TampoConfig, init_params, make_suite, pass_at_k, train
from tampo.trainer import stream, warmup_steps

tasks = make_suite("rare_needle", n_prompts=16, vocab_size=8, episode_len=6)
p0 = init_params(tasks, 8, 6)
grpo = GrpoConfig(learning_rate=1.0)
meta = TampoConfig()
steps = 300

for schedule in (Schedule.tampo(), Schedule.fixed(0.9), Schedule.fixed(1.2), Schedule.fixed(1.5)):
    run = train(p0, tasks, schedule, grpo, meta, steps=steps, batch_size=8, G=8, seed=0)
    final = pass_at_k(run.params, tasks, 64, 1.0, stream(0, "eval", 0))
    line = f"{str(schedule):10s} eval reward at T=1.0: {final.mean_reward:.3f}"
    if schedule.kind == "tampo":
        temps = np.array([r.sampled_T for r in run.records])[warmup_steps(meta.warmup_fraction, steps):]
        q = len(temps) // 4
        line += f"   mean sampled T: first quarter {temps[:q].mean():.2f}, last quarter {temps[-q:].mean():.2f}"
        print(line)
        print("  final meta-policy:", np.round(run.records[-1].meta_dist, 2))
    else:
        print(line)
