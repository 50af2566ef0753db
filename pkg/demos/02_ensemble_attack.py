"""Fooling six fitted tests at once with an ensemble attack.

Uses the small ``quick`` preset so everything finishes in well under a
minute. The same pipeline at full size is ``advtst power --preset blob-table2``.
"""
import numpy as np

from advtst import build_ensemble, ensemble_attack, run_test
from advtst.experiment import attack_plan, fit_rep, load_config, make_sampler

cfg = load_config("quick")
models, traces, seeds = fit_rep(cfg, rep=0, log=print)
for name, tr in traces.items():
    print(f"  {name:<7} objective {tr[0]:9.4f} -> {tr[-1]:9.4f}")

# One fresh test pair.
rng = np.random.default_rng(seeds.evaluation)
sp, sq = make_sampler(cfg)(cfg.n_te, rng)

# Every member contributes its power criterion; the finetuned weights favour
# the tests that are hardest to fool.
plan = attack_plan(cfg, list(models))
print("weights:", {k: round(v, 3) for k, v in plan.weights.items()})
sq_adv, trace = ensemble_attack(build_ensemble(models), plan, sp, sq)
print(f"ensemble loss {trace.losses[0]:.4f} -> {trace.best_loss:.4f} (best at step {trace.best_step})")
print(f"largest coordinate change: {np.max(np.abs(sq_adv - sq)):.4f} (budget {plan.epsilon})")
halvings = [i for i, h in enumerate(trace.halved) if h]
print("step size halved at iterates", halvings)

# Decisions before and after, with identical bootstrap streams.
for label, q in (("benign", sq), ("attacked", sq_adv)):
    stream = np.random.default_rng(1)
    row = {k: run_test(k, m, sp, q, cfg.inference, stream).reject for k, m in models.items()}
    print(f"{label:>9}: " + "  ".join(f"{k}={'R' if v else '.'}" for k, v in row.items())
          + f"  ensemble={'R' if any(row.values()) else '.'}")
