# Secure summation around a ring
#
# The coordinator masks an empty filter with a random vector, every gateway
# adds its own counts on top, and the coordinator removes the mask at the
# end. Intermediate gateways only ever see uniformly random counters.

import numpy as np

from dezent.securesum import mask, sample_perturbation, unmask
from dezent.sketch import CountingFilter, FilterParams

rng = np.random.default_rng(42)
params = FilterParams(m=12, k=2, b=8)

contributions = []
for gw in range(4):
    f = CountingFilter(params)
    for v in rng.integers(0, 6, size=5):
        f.add(int(v))
    contributions.append(f)
    print(f"gateway {gw} counters: {f.counters.tolist()}")

r = sample_perturbation(params.m, params.b, rng)
acc = mask(CountingFilter(params), r)
for gw, f in enumerate(contributions):
    acc.counters = (acc.counters + f.counters) % params.modulus
    print(f"after gateway {gw}, on the wire: {acc.counters.tolist()}")

total = unmask(acc, r, ceiling=20)
print(f"unmasked sum:      {total.counters.tolist()}")
print(f"direct sum:        {sum(f.counters for f in contributions).tolist()}")

# The coordinator refuses to unmask when the window could wrap a counter.

try:
    unmask(acc, r, ceiling=1000)
except Exception as exc:
    print(f"{type(exc).__name__}: {exc}")
