import numpy as np
import pytest

from mddkit.augment import AugmentPolicy, FrameMatrix, ViewPair, make_views


def _x(n=40, d=8, seed=0):
    rng = np.random.default_rng(seed)
    # keep all entries away from zero so masked cells are identifiable
    return rng.standard_normal((n, d)) + 5.0


def test_identity_policy_returns_input():
    x = _x()
    policy = AugmentPolicy(warp_window=0, max_mask_blocks=0)
    pair = make_views(x, policy, np.random.default_rng(0))
    assert pair.a.tobytes() == x.tobytes()
    assert pair.b.tobytes() == x.tobytes()
    assert not pair.warning


def test_views_deterministic_under_seed():
    x = _x()
    policy = AugmentPolicy()
    p1 = make_views(x, policy, np.random.default_rng(42))
    p2 = make_views(x, policy, np.random.default_rng(42))
    assert p1.a.tobytes() == p2.a.tobytes()
    assert p1.b.tobytes() == p2.b.tobytes()


def test_views_differ_from_each_other():
    x = _x()
    policy = AugmentPolicy()
    differ = 0
    for seed in range(50):
        pair = make_views(x, policy, np.random.default_rng(seed))
        differ += pair.a.tobytes() != pair.b.tobytes()
    assert differ >= 49


def test_shape_always_preserved():
    rng = np.random.default_rng(1)
    policy = AugmentPolicy()
    for _ in range(100):
        n = int(rng.integers(3, 80))
        d = int(rng.integers(2, 12))
        x = rng.standard_normal((n, d))
        pair = make_views(x, policy, rng)
        assert pair.a.shape == (n, d)
        assert pair.b.shape == (n, d)


def test_masked_fraction_in_range():
    # cells zeroed by masking must cover a fraction in (0.1, 0.3] of each
    # view; warp is disabled so zeros are unambiguous
    x = _x(60, 10)
    policy = AugmentPolicy(warp_window=0)
    low, high = policy.mask_ratio_range
    for seed in range(1000):
        pair = make_views(x, policy, np.random.default_rng(seed))
        for view in (pair.a, pair.b):
            frac = np.mean(view == 0.0)
            assert low < frac <= high + 1e-12, frac


def test_mask_blocks_respect_min_length():
    x = _x(64, 6)
    policy = AugmentPolicy(warp_window=0, min_time_mask_len=4)
    for seed in range(50):
        pair = make_views(x, policy, np.random.default_rng(seed))
        for view in (pair.a, pair.b):
            # fully zeroed frames come from time masks; runs must be >= 4
            zero_rows = np.all(view == 0.0, axis=1).astype(int)
            runs = []
            count = 0
            for z in zero_rows:
                if z:
                    count += 1
                elif count:
                    runs.append(count)
                    count = 0
            if count:
                runs.append(count)
            assert all(r >= policy.min_time_mask_len for r in runs)


def test_short_utterance_warns_and_passes_through():
    x = _x(6, 4)
    policy = AugmentPolicy(min_time_mask_len=4, warp_window=0)
    pair = make_views(x, policy, np.random.default_rng(0))
    assert pair.warning
    assert pair.a.tobytes() == x.tobytes()


def test_warp_handles_extreme_anchor_shifts():
    # anchor +/- window may clamp at the sequence edge; output must stay
    # finite for every draw
    x = _x(16, 4)
    policy = AugmentPolicy(warp_window=80, max_mask_blocks=0)
    for seed in range(300):
        pair = make_views(x, policy, np.random.default_rng(seed))
        assert np.all(np.isfinite(pair.a))
        assert np.all(np.isfinite(pair.b))


def test_frame_matrix_validation():
    with pytest.raises(ValueError):
        FrameMatrix(np.zeros((0, 4)))
    with pytest.raises(ValueError):
        FrameMatrix(np.array([[np.inf, 0.0]]))


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentPolicy(mask_ratio_range=(0.3, 0.1))
    with pytest.raises(ValueError):
        AugmentPolicy(min_time_mask_len=0)


def test_frame_matrix_accepted_as_input():
    x = _x(30, 5)
    pair = make_views(FrameMatrix(x), AugmentPolicy(), np.random.default_rng(3))
    assert isinstance(pair, ViewPair)
    assert pair.a.shape == x.shape
