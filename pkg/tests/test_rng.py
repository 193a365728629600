import numpy as np

from temviro.rng import SplitMix64, derive_seed


def test_known_sequence_is_stable():
    # Reference values frozen from this implementation; any change to the
    # generator breaks corpus reproducibility and must fail loudly.
    rng = SplitMix64(0)
    assert [rng.next_u64() for _ in range(3)] == [
        16294208416658607535,
        7960286522194355700,
        487617019471545679,
    ]


def test_determinism_and_independence():
    a = SplitMix64(1234)
    b = SplitMix64(1234)
    assert [a.next_u64() for _ in range(10)] == [b.next_u64() for _ in range(10)]
    c = SplitMix64(1235)
    assert a.next_u64() != c.next_u64()


def test_derive_seed_is_stable_and_keyed():
    assert derive_seed(7, 1) == derive_seed(7, 1)
    assert derive_seed(7, 1) != derive_seed(7, 2)
    assert derive_seed(7, 1, 2) != derive_seed(7, 2, 1)


def test_uniform_in_range():
    rng = SplitMix64(5)
    xs = [rng.uniform() for _ in range(1000)]
    assert all(0.0 <= x < 1.0 for x in xs)
    assert 0.4 < np.mean(xs) < 0.6


def test_randint_covers_inclusive_range():
    rng = SplitMix64(6)
    xs = {rng.randint(-2, 2) for _ in range(500)}
    assert xs == {-2, -1, 0, 1, 2}


def test_normal_field_matches_scalar_normals():
    rng1 = SplitMix64(42)
    rng2 = SplitMix64(42)
    field = rng1.normal_field((3, 5), mean=1.0, sd=2.0)
    scalars = np.array([rng2.normal(1.0, 2.0) for _ in range(15)]).reshape(3, 5)
    np.testing.assert_allclose(field, scalars, rtol=1e-12)
    # streams stay in lockstep afterwards
    assert rng1.next_u64() == rng2.next_u64()


def test_uniform_field_matches_scalar_uniforms():
    rng1 = SplitMix64(43)
    rng2 = SplitMix64(43)
    field = rng1.uniform_field((10,), -2.0, 2.0)
    scalars = np.array([rng2.uniform_range(-2.0, 2.0) for _ in range(10)])
    np.testing.assert_allclose(field, scalars, rtol=1e-12)


def test_normal_moments():
    xs = SplitMix64(7).normal_field((20000,), mean=3.0, sd=1.5)
    assert abs(xs.mean() - 3.0) < 0.05
    assert abs(xs.std() - 1.5) < 0.05


def test_shuffle_is_permutation_and_deterministic():
    items = list(range(20))
    a, b = items.copy(), items.copy()
    SplitMix64(9).shuffle(a)
    SplitMix64(9).shuffle(b)
    assert a == b
    assert sorted(a) == items
    assert a != items  # 20 elements: identity permutation is implausible
