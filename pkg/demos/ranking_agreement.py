"""When do mean, median, and tail rank checkpoints the same way?

Sweeping a knob (data scale, truncation level, training steps) gives a
family of checkpoints. If every summary statistic orders them identically,
any of them is a fine selection signal; if not, the choice of summary IS a
modeling decision. Concordance counts, over all checkpoint pairs, how often
the summaries agree on which one is better.
"""

import numpy as np

from lossdiag import LossVector, concordance, kendall_tau, summarize_exact

rng = np.random.default_rng(47)

# Eight checkpoints along a training run. The bulk of the distribution
# shrinks steadily, but the spike region above 3 nats (7% of tokens, think
# rare contexts) regresses on some steps while the body keeps improving.
table = {}
tail_width = [5.0, 4.0, 5.6, 3.4, 4.3, 2.5, 3.1, 2.0]
for i in range(8):
    body = rng.lognormal(np.log(0.6 * 0.88**i), 0.5, 40_000)
    spikes = rng.uniform(3.0, 3.0 + tail_width[i], 3_000)
    vec = LossVector(f"step-{(i + 1) * 5_000:06d}", np.concatenate([body, spikes]))
    table[vec.checkpoint_id] = summarize_exact(vec)

# Mean and median march together here; the tail is the odd one out.
for names in (("mean", "p50"), ("mean", "p50", "p95")):
    rep = concordance(table, names)
    print(f"pi over {'+'.join(names)}: {rep.pi:.3f} "
          f"({rep.concordant_pairs}/{rep.total_pairs} pairs, {rep.tied_pairs} tied)")

# Pairwise agreement pinpoints which summary breaks ranks.
rep = concordance(table, ("mean", "p50", "p95"))
print()
for (a, b), pi in rep.pairwise.items():
    print(f"  {a} vs {b}: {pi:.3f}")

# For exactly two summaries, concordance is Kendall's tau in disguise:
# pi = (1 + tau) / 2, so pi 0.5 means "unrelated orderings".
means = [table[cid].mean for cid in sorted(table)]
p95s = [table[cid].value("p95") for cid in sorted(table)]
tau = kendall_tau(means, p95s)
print()
print(f"kendall tau(mean, p95) = {tau:.3f}, (1 + tau) / 2 = {(1 + tau) / 2:.3f}")
print(f"pi(mean, p95)          = {concordance(table, ('mean', 'p95')).pi:.3f}")
