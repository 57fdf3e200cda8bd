# Counting Bloom filter walkthrough
#
# A gateway ring passes one fixed-size array of counters around instead of
# the raw multiset of measured values. This script sizes a filter for the
# default load, inserts bucket ids, and shows where the estimate can be off.

import numpy as np

from dezent.sketch import CountingFilter, ExactCounter, FilterParams, estimated_fp_rate, size_parameters

# Sizing for 1000 distinct values at a 5% false-positive target.

m, k, k_raw = size_parameters(1000, 0.05)
print(f"m = {m} counters, k = {k} hashes (unrounded {k_raw:.2f})")
print(f"predicted FP rate at design load: {estimated_fp_rate(m, k, 1000):.4f}")

print(f"serialized size with 8-bit counters: {FilterParams(m=m, k=k, b=8).serialized_size} bytes")

# The skewed data below puts several hundred copies of one value into the
# filter, which would wrap an 8-bit counter, so this demo uses 16 bits.

params = FilterParams(m=m, k=k, b=16, hash_seed=1)

# Insert a skewed multiset of bucket ids and compare with exact counts.

rng = np.random.default_rng(0)
values = rng.zipf(1.6, size=3000) % 1000
cbf, exact = CountingFilter(params), ExactCounter()
for v in values:
    cbf.add(int(v))
    exact.add(int(v))

over = [cbf.count(v) - exact.count(v) for v in exact.entries]
print(f"{len(exact.entries)} distinct values, overestimated: {sum(o > 0 for o in over)}, "
      f"never under: {min(over) >= 0}")

# Values that were never inserted can still read as present.

absent = [v for v in range(1000, 11_000)]
fp = np.mean([cbf.count(v) > 0 for v in absent])
print(f"empirical FP rate over {len(absent)} absent values: {fp:.4f}")

# Subtracting z - 1 from every counter turns counts into publication budgets.

z = 5
budget = cbf.copy()
budget.subtract_clamp(z - 1)
common = max(exact.entries, key=exact.entries.get)
print(f"value {common}: count {cbf.count(common)}, budget after z={z}: {budget.count(common)}")

# Round trip through the wire format.

assert CountingFilter.deserialize(cbf.serialize()) == cbf
print("serialize/deserialize round trip ok")
