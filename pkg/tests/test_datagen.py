import numpy as np
import pytest

from dezent.anonymizer import bucketize
from dezent.datagen import (
    SLOTS_PER_DAY,
    ClientTypeProfile,
    assign_client_types,
    default_profile_set,
    load_profiles_csv,
    measure,
    save_profiles_csv,
)


@pytest.fixture(scope="module")
def profiles():
    return default_profile_set()


def by_name(profiles):
    return {p.name: p for p in profiles}


def test_default_set_shape(profiles):
    assert len(profiles) >= 6
    assert sum(p.share for p in profiles) == pytest.approx(1.0, abs=1e-9)
    for p in profiles:
        assert p.daily_shape.shape == (SLOTS_PER_DAY,)
        assert np.all(p.daily_shape >= 0)
        assert p.daily_shape.mean() == pytest.approx(1.0)


def test_workshop_is_rare_and_household_like(profiles):
    named = by_name(profiles)
    w = named["workshop"]
    assert w.share < 0.01
    lo = named["household_3p"].base_level * 0.9
    hi = named["household_4p"].base_level * 1.1
    assert lo <= w.base_level <= hi


def test_single_type_assignment():
    p = default_profile_set()[0]
    only = [ClientTypeProfile(p.name, p.base_level, p.daily_shape, p.noise_sd, 1.0)]
    assert set(assign_client_types(50, only, np.random.default_rng(0))) == {0}


def test_assignment_shares(profiles):
    ids = assign_client_types(100_000, profiles, np.random.default_rng(1))
    observed = np.bincount(ids, minlength=len(profiles)) / len(ids)
    expected = np.array([p.share for p in profiles])
    assert np.all(np.abs(observed - expected) <= 0.01)


def test_assignment_deterministic(profiles):
    a = assign_client_types(100, profiles, np.random.default_rng(7))
    b = assign_client_types(100, profiles, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_assignment_rejects_bad_shares(profiles):
    p = profiles[0]
    bad = [ClientTypeProfile(p.name, 1.0, p.daily_shape, 0.1, 0.5)]
    with pytest.raises(ValueError):
        assign_client_types(10, bad, np.random.default_rng(0))
    with pytest.raises(ValueError):
        assign_client_types(0, profiles, np.random.default_rng(0))


def test_noiseless_measure_is_profile_value(profiles):
    p = profiles[0]
    quiet = ClientTypeProfile(p.name, p.base_level, p.daily_shape, 0.0, 1.0)
    rng = np.random.default_rng(0)
    for cycle in (0, 37, 96 + 37):
        assert measure(quiet, cycle, rng) == p.base_level * p.daily_shape[cycle % 96]


def test_measure_non_negative_with_heavy_noise(profiles):
    p = profiles[0]
    noisy = ClientTypeProfile(p.name, p.base_level, p.daily_shape, 3.0, 1.0)
    rng = np.random.default_rng(2)
    assert min(measure(noisy, c, rng) for c in range(2000)) >= 0.0


def test_long_run_slot_mean(profiles):
    p = by_name(profiles)["business"]
    rng = np.random.default_rng(3)
    slot = 50
    draws = [measure(p, slot, rng) for _ in range(20_000)]
    target = p.base_level * p.daily_shape[slot]
    assert np.mean(draws) == pytest.approx(target, rel=0.02)


def test_types_have_distinct_bucket_histograms(profiles):
    rng = np.random.default_rng(4)
    hists = []
    for p in profiles:
        values = [measure(p, c, rng) for c in range(96) for _ in range(10)]
        buckets = bucketize(np.array(values))
        hists.append(np.bincount(buckets, minlength=200)[:200].astype(float))
    js = []
    for i in range(len(hists)):
        for j in range(i + 1, len(hists)):
            a, b = hists[i] / hists[i].sum(), hists[j] / hists[j].sum()
            mix = (a + b) / 2

            def kl(x, y):
                nz = x > 0
                return float(np.sum(x[nz] * np.log(x[nz] / y[nz])))

            js.append(0.5 * kl(a, mix) + 0.5 * kl(b, mix))
    assert max(js) > 0


def test_csv_round_trip(tmp_path, profiles):
    path = tmp_path / "profiles.csv"
    save_profiles_csv(profiles, path)
    loaded = load_profiles_csv(path)
    assert [p.name for p in loaded] == [p.name for p in profiles]
    for a, b in zip(loaded, profiles):
        assert a.base_level == b.base_level and a.share == b.share
        assert np.array_equal(a.daily_shape, b.daily_shape)


def test_csv_rejects_bad_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("name,base_level,noise_sd,share\nx,1,0.1,1,2,3\n")
    with pytest.raises(ValueError, match=":2:"):
        load_profiles_csv(path)
    path.write_text("kind,level\n")
    with pytest.raises(ValueError):
        load_profiles_csv(path)


def test_profile_validation(profiles):
    p = profiles[0]
    with pytest.raises(ValueError):
        ClientTypeProfile("x", 1.0, np.ones(10), 0.1, 1.0)
    with pytest.raises(ValueError):
        ClientTypeProfile("x", 1.0, -p.daily_shape, 0.1, 1.0)
