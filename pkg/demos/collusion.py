# How likely are both ring neighbours of a gateway colluding?
#
# A gateway's contribution is exposed only if the gateways right before and
# after it in the ring work together. With random ring order this happens
# with probability k(k-1) / ((n-1)(n-2)).

import numpy as np

from dezent.metrics import collusion_monte_carlo, collusion_probability

n, trials = 100, 100_000
print(f"{'share':>6} {'k':>4} {'closed form':>12} {'simulated':>10} {'3 SE':>7}")
for share in (0.1, 0.2, 0.3, 0.4, 0.5):
    k = round(share * n)
    p = collusion_probability(n, k)
    est = collusion_monte_carlo(n, k, trials, seed=k)
    se = np.sqrt(p * (1 - p) / trials)
    print(f"{share:>6.1f} {k:>4} {p:>12.4f} {est:>10.4f} {3 * se:>7.4f}")
