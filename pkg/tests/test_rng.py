import numpy as np
from numpy.testing import assert_array_equal

from slowmap.rng import SeedSpec, as_seed, normals_for_keys


def test_streams_reproducible():
    a = SeedSpec(1).child("x", 3)
    assert_array_equal(a.normal(100), SeedSpec(1).child("x", 3).normal(100))
    assert a.key != SeedSpec(1).child("x", 4).key
    assert a.key != SeedSpec(1).child("y", 3).key
    assert a.key != SeedSpec(2).child("x", 3).key


def test_offsets_are_windows():
    s = SeedSpec(5)
    full = s.normal(11)
    assert_array_equal(s.normal(4, offset=3), full[3:7])
    assert_array_equal(s.uniform(5, offset=6), s.uniform(11)[6:])


def test_child_keys_match_children():
    s = SeedSpec(9).child("point", 2)
    keys = s.child_keys("rep", 5, start=3)
    assert [int(k) for k in keys] == [s.child("rep", i).key for i in range(3, 8)]
    assert_array_equal(normals_for_keys(keys, 6)[1], s.child("rep", 4).normal(6))


def test_normal_moments():
    z = SeedSpec(0).normal(200000)
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)


def test_uniform_range():
    u = SeedSpec(3).uniform(10000)
    assert u.min() >= 0 and u.max() < 1


def test_permutation():
    p = SeedSpec(4).permutation(50)
    assert sorted(p.tolist()) == list(range(50))


def test_dict_round_trip():
    s = SeedSpec(11).child("a", 1).child("b", 2)
    assert SeedSpec.from_dict(s.to_dict()) == s
    assert as_seed(s.to_dict()) == s
    assert as_seed(11) == SeedSpec(11)
    assert as_seed(np.int64(11)) == SeedSpec(11)
