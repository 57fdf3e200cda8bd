# z-anonymity over a stream of bucketed measurements
#
# A tuple may be published once its value has been seen at least z times
# within the last delta_t cycles. Here the sequential reference is compared
# with the closed-form budget the ring protocol relies on.

from collections import Counter

from dezent.anonymizer import (
    BucketConfig,
    CentralizedZAnonymizer,
    MeasurementTuple,
    bucket_representative,
    bucketize,
    publishable_count,
)

cfg = BucketConfig(v0=0.01, q=8)
for kwh in (0.005, 0.05, 0.12, 0.13, 0.5):
    b = bucketize(kwh, cfg)
    print(f"{kwh:6.3f} kWh -> bucket {b:3d} (representative {bucket_representative(b, cfg):.4f})")

z, delta_t = 3, 2
anon = CentralizedZAnonymizer(z, delta_t)
stream = {
    0: [0.12, 0.12, 0.5],
    1: [0.12, 0.13, 0.5, 0.05],
    2: [0.5, 0.5, 0.05],
}
window: list[tuple[int, int]] = []
for cycle, readings in stream.items():
    buckets = [bucketize(v, cfg) for v in readings]
    published = [anon.step(MeasurementTuple(b, i, cycle)) for i, b in enumerate(buckets)]
    window = [(t, b) for t, b in window if cycle - t < delta_t] + [(cycle, b) for b in buckets]
    in_window = Counter(b for _, b in window)
    now = Counter(buckets)
    budget = {b: publishable_count(in_window[b], now[b], z) for b in now}
    print(f"cycle {cycle}: buckets {buckets} published {published}")
    print(f"         budget per bucket {budget}, sequential {dict(Counter(b for b, p in zip(buckets, published) if p))}")
