"""Percentiles of a stream too big to sort.

The exact summarizer sorts, which stops being fun around a few million
values. The mergeable sketch reads the stream in chunks, keeps well under
one percent of it, and still answers any percentile within a guaranteed
rank window. This script measures the error against the exact answer.
"""

import time

import numpy as np

from lossdiag import build_sketch

rng = np.random.default_rng(29)
n = 20_000_000
epsilon = 1e-3

# Build from 500k-value chunks, the way losses arrive from iter_loss_chunks.
chunks = [rng.lognormal(0.0, 1.1, 500_000) for _ in range(n // 500_000)]

start = time.monotonic()
sketch = build_sketch(chunks, epsilon)
build_s = time.monotonic() - start
stream = np.sort(np.concatenate(chunks))

print(f"stream: {n} values, sketch stores {sketch.memory_values()} "
      f"({sketch.memory_values() / n:.6%} of the stream), built in {build_s:.2f}s")
print()
print("   k     sketch      exact   rank error (guarantee: {:.0f})".format(epsilon * n))
for k in (1, 5, 25, 50, 75, 95, 99):
    got = sketch.query(k)
    exact = stream[int(round(k / 100 * (n - 1)))]
    # Rank error: distance between the returned value's rank and k*n/100.
    target = k * n / 100
    left = np.searchsorted(stream, got, side="left")
    right = np.searchsorted(stream, got, side="right")
    err = 0 if left <= target <= right else min(abs(left - target), abs(right - target))
    print(f"  {k:>2}  {got:9.5f}  {exact:9.5f}   {err:10.0f}")

# Sketches merge: summarize shards independently, combine afterwards. The
# merged sketch carries the same additive guarantee over the union.
half = n // 2
a = build_sketch([np.concatenate(chunks)[:half]], epsilon)
b = build_sketch([np.concatenate(chunks)[half:]], epsilon)
merged = a.merge(b)
print()
print(f"merged shards: count={merged.count}, median={merged.query(50):.5f} "
      f"(single pass gave {sketch.query(50):.5f})")
