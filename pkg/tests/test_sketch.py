import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dezent.sketch import (
    HEADER_SIZE,
    CountingFilter,
    ExactCounter,
    FilterParams,
    MaskedFilterError,
    estimated_fp_rate,
    hash_indices,
    size_parameters,
)


def small_filter(m=64, k=3, b=8, seed=7):
    return CountingFilter(FilterParams(m=m, k=k, b=b, hash_seed=seed))


class TestSizing:
    def test_default_operating_point(self):
        m, k, k_raw = size_parameters(1000, 0.05)
        assert m == 6235
        assert k_raw == pytest.approx(4.32, abs=0.01)
        assert k == 4

    def test_hundred_at_one_percent(self):
        # -100 ln(0.01) / ln(2)^2 = 958.506 -> 959; 959/100 ln 2 = 6.647 -> 7
        m, k, k_raw = size_parameters(100, 0.01)
        assert (m, k) == (959, 7)
        assert k_raw == pytest.approx(6.644, abs=1e-3)

    def test_single_element_clamps(self):
        # m_raw = 1.4427 rounds to 1; k = round(ln 2) = 1
        assert size_parameters(1, 0.5)[:2] == (1, 1)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_bad_fp(self, p):
        with pytest.raises(ValueError):
            size_parameters(100, p)

    def test_rejects_zero_elements(self):
        with pytest.raises(ValueError):
            size_parameters(0, 0.1)

    @given(
        n=st.integers(min_value=10, max_value=100_000),
        p=st.floats(min_value=1e-4, max_value=0.5),
    )
    def test_sized_filter_meets_target(self, n, p):
        m, k, _ = size_parameters(n, p)
        assert estimated_fp_rate(m, k, n) <= p * 1.05


class TestHashing:
    def test_indices_distinct_and_in_range(self):
        for x in range(500):
            idx = hash_indices(x, 97, 5, 3)
            assert len(set(idx)) == 5
            assert all(0 <= i < 97 for i in idx)

    def test_distinct_for_composite_m(self):
        # g2 must be coprime to m or the stride would cycle early
        for x in range(500):
            assert len(set(hash_indices(x, 64, 8, 1))) == 8

    def test_deterministic_and_seed_dependent(self):
        assert hash_indices(42, 1000, 4, 9) == hash_indices(42, 1000, 4, 9)
        differing = sum(hash_indices(x, 1000, 4, 1) != hash_indices(x, 1000, 4, 2) for x in range(100))
        assert differing > 90

    def test_negative_elements_hash(self):
        assert len(set(hash_indices(-5, 50, 3, 0))) == 3


class TestFilterOps:
    def test_single_add_sets_k_counters_to_one(self):
        f = small_filter()
        f.add(11)
        idx = f.indices(11)
        assert all(f.counters[i] == 1 for i in idx)
        assert int(f.counters.sum()) == f.params.k

    def test_add_amount_equals_repeated_adds(self):
        a, b = small_filter(), small_filter()
        a.add(5, 3)
        for _ in range(3):
            b.add(5)
        assert a == b

    def test_empty_counts_zero(self):
        f = small_filter()
        assert all(f.count(x) == 0 for x in range(100))

    def test_five_adds_count_five(self):
        f = small_filter()
        for _ in range(5):
            f.add(3)
        assert f.count(3) == 5

    def test_add_remove_inverse(self):
        f = small_filter()
        f.add(1)
        before = f.copy()
        f.add(9)
        f.remove(9)
        assert f == before

    def test_remove_leaves_disjoint_element(self):
        params = FilterParams(m=16, k=2, b=8, hash_seed=0)
        # search for two elements with disjoint index sets
        x = 0
        y = next(
            e for e in range(1, 1000)
            if not set(hash_indices(e, 16, 2, 0)) & set(hash_indices(x, 16, 2, 0))
        )
        f = CountingFilter(params)
        f.add(x)
        f.add(y)
        f.remove(x)
        assert f.count(y) == 1
        assert f.count(x) == 0

    def test_add_twice_remove_once(self):
        f = small_filter()
        f.add(4)
        f.add(4)
        f.remove(4)
        assert f.count(4) == 1

    def test_counters_wrap_modulo(self):
        f = small_filter(b=4)
        f.add(2, 17)
        assert f.count(2) == 1

    def test_remove_wraps_below_zero(self):
        f = small_filter(b=8)
        f.remove(2)
        assert all(f.counters[i] == 255 for i in f.indices(2))

    def test_strict_mode_flags_bad_removal(self):
        f = CountingFilter(FilterParams(64, 3), strict=True)
        with pytest.raises(ValueError):
            f.remove(1)

    def test_k_larger_than_m_applies_every_hash(self):
        f = CountingFilter(FilterParams(m=2, k=5, b=8))
        f.add(1)
        assert int(f.counters.sum()) == 5

    def test_masked_filter_refuses_reads(self):
        f = small_filter()
        f.masked = True
        with pytest.raises(MaskedFilterError):
            f.count(1)
        with pytest.raises(MaskedFilterError):
            f.subtract_clamp(1)


class TestSubtractClamp:
    def test_per_counter_example(self):
        f = CountingFilter(FilterParams(m=4, k=1), counters=np.array([5, 2, 0, 7]))
        f.subtract_clamp(2)
        assert f.counters.tolist() == [3, 0, 0, 5]

    def test_zero_delta_is_identity(self):
        f = small_filter()
        f.add(3, 4)
        g = f.copy()
        g.subtract_clamp(0)
        assert g == f

    def test_large_delta_empties(self):
        f = small_filter()
        for x in range(20):
            f.add(x, x + 1)
        f.subtract_clamp(int(f.counters.max()))
        assert f.is_empty()

    @given(
        adds=st.lists(st.tuples(st.integers(0, 40), st.integers(1, 5)), max_size=60),
        delta=st.integers(0, 20),
    )
    def test_commutes_with_count(self, adds, delta):
        f = CountingFilter(FilterParams(m=50, k=3, b=16, hash_seed=1))
        for x, a in adds:
            f.add(x, a)
        before = {x: f.count(x) for x in range(41)}
        f.subtract_clamp(delta)
        for x in range(41):
            assert f.count(x) == max(0, before[x] - delta)


class TestAgainstExact:
    @settings(max_examples=200)
    @given(
        ops=st.lists(
            st.tuples(st.sampled_from(["add", "remove"]), st.integers(0, 30), st.integers(1, 4)),
            max_size=100,
        ),
        seed=st.integers(0, 2**64 - 1),
    )
    def test_no_false_negatives(self, ops, seed):
        f = CountingFilter(FilterParams(m=40, k=3, b=16, hash_seed=seed))
        e = ExactCounter()
        for op, x, a in ops:
            if op == "add":
                f.add(x, a)
                e.add(x, a)
            elif e.count(x) > 0:
                f.remove(x)
                e.remove(x)
            for y in range(31):
                assert f.count(y) >= e.count(y)

    @given(
        adds=st.lists(st.integers(0, 50), max_size=80),
        delta=st.integers(0, 6),
    )
    def test_subtract_clamp_pairs(self, adds, delta):
        f = CountingFilter(FilterParams(m=60, k=3, b=16, hash_seed=5))
        e = ExactCounter()
        for x in adds:
            f.add(x)
            e.add(x)
        f.subtract_clamp(delta)
        e.subtract_clamp(delta)
        assert all(f.count(x) >= e.count(x) for x in range(51))

    def test_inflation_grows_with_load(self):
        # mean overestimate on members, averaged over seeds, rises with load
        params = dict(m=500, k=3, b=16)
        rng = np.random.default_rng(0)
        means = []
        for load in (50, 200, 600):
            errs = []
            for seed in range(10):
                f = CountingFilter(FilterParams(hash_seed=seed, **params))
                elems = rng.choice(10**6, size=load, replace=False)
                for x in elems:
                    f.add(int(x))
                errs.append(np.mean([f.count(int(x)) - 1 for x in elems[:50]]))
            means.append(np.mean(errs))
        assert means[0] <= means[1] <= means[2]


class TestFalsePositives:
    def test_design_load_fp_rate(self):
        m, k, _ = size_parameters(1000, 0.05)
        rates = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            universe = rng.choice(2**40, size=11_000, replace=False)
            members, probes = universe[:1000], universe[1000:]
            f = CountingFilter(FilterParams(m=m, k=k, b=8, hash_seed=seed))
            for x in members:
                f.add(int(x))
            rates.append(np.mean([f.count(int(x)) > 0 for x in probes]))
        assert np.mean(rates) <= 0.075


class TestSerialization:
    def test_default_serialized_size(self):
        f = CountingFilter(FilterParams(m=6235, k=4, b=8))
        data = f.serialize()
        assert HEADER_SIZE == 28
        assert len(data) == 6235 + 28

    def test_nibble_packing(self):
        f = CountingFilter(FilterParams(m=8, k=2, b=4))
        assert len(f.serialize()) - HEADER_SIZE == 4

    def test_bit_layout_little_endian(self):
        f = CountingFilter(FilterParams(m=2, k=1, b=4), counters=np.array([0x3, 0xA]))
        assert f.serialize()[HEADER_SIZE:] == bytes([0xA3])

    @settings(max_examples=150)
    @given(data=st.data())
    def test_round_trip(self, data):
        b = data.draw(st.integers(1, 64))
        m = data.draw(st.integers(1, 70))
        k = data.draw(st.integers(1, 8))
        seed = data.draw(st.integers(0, 2**64 - 1))
        counters = data.draw(st.lists(st.integers(0, 2**b - 1), min_size=m, max_size=m))
        f = CountingFilter(FilterParams(m, k, b, seed), counters=np.array(counters, dtype=np.uint64))
        g = CountingFilter.deserialize(f.serialize())
        assert g == f
        assert g.params == f.params

    def test_rejects_truncation(self):
        data = small_filter().serialize()
        with pytest.raises(ValueError):
            CountingFilter.deserialize(data[:-1])
        with pytest.raises(ValueError):
            CountingFilter.deserialize(data[:10])

    def test_rejects_wide_counters(self):
        import struct

        data = struct.pack("<QQIQ", 4, 1, 65, 0) + bytes(40)
        with pytest.raises(ValueError):
            CountingFilter.deserialize(data)


class TestExactCounter:
    def test_count(self):
        e = ExactCounter()
        e.add(1)
        e.add(1)
        assert e.count(1) == 2

    def test_subtract_clamp(self):
        e = ExactCounter({1: 5, 2: 2})
        e.subtract_clamp(4)
        assert e.entries == {1: 1}

    def test_remove_absent_flagged(self):
        with pytest.raises(KeyError):
            ExactCounter().remove(3)

    def test_serialize_round_trip(self):
        e = ExactCounter({-3: 2, 0: 1, 17: 9})
        assert ExactCounter.deserialize(e.serialize()) == e

    def test_serialize_rejects_bad_length(self):
        with pytest.raises(ValueError):
            ExactCounter.deserialize(ExactCounter({1: 1}).serialize()[:-1])
