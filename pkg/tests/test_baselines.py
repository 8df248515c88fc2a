import numpy as np
import pytest

from dflsim.baselines import (
    craft_directed_deviation,
    craft_gaussian,
    visible_senders,
)
from dflsim.core import RoleConfig, Rng


# ---------------------------------------------------------------------------
# gaussian noise attack
# ---------------------------------------------------------------------------

def test_gaussian_shape_and_scale():
    gen = Rng(0).stream(1)
    crafted = craft_gaussian(dim=50, m=4, gen=gen, sigma=200.0)
    assert crafted.shape == (4, 50)
    flat = crafted.ravel()
    # 200 values: sample mean within 4 sigma/sqrt(N), std in a generous band
    assert abs(flat.mean()) < 4 * 200.0 / np.sqrt(flat.size)
    assert 150.0 < flat.std() < 250.0


def test_gaussian_rejects_bad_sigma():
    with pytest.raises(ValueError):
        craft_gaussian(3, 1, Rng(0).stream(1), sigma=0.0)


def test_gaussian_is_deterministic_per_stream():
    a = craft_gaussian(5, 2, Rng(3).stream(9, 1))
    b = craft_gaussian(5, 2, Rng(3).stream(9, 1))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# directed-deviation attack
# ---------------------------------------------------------------------------

def test_directed_deviation_opposes_trend():
    benign = [np.array([1.0, 5.0]), np.array([2.0, 6.0]), np.array([3.0, 7.0])]
    # coordinate 0 rising (mean 2 > 0), coordinate 1 falling (mean 6 < 10)
    prev = np.array([0.0, 10.0])
    crafted = craft_directed_deviation(benign, prev, m=4, gen=Rng(1).stream(2))
    assert crafted.shape == (4, 2)
    assert np.all(crafted[:, 0] < 1.0)   # strictly below min benign
    assert np.all(crafted[:, 1] > 7.0)   # strictly above max benign


def test_directed_deviation_sampling_interval():
    benign = [np.array([2.0]), np.array([4.0])]
    prev = np.array([0.0])
    crafted = craft_directed_deviation(benign, prev, m=100, gen=Rng(2).stream(3), delta_lo=0.5, delta_hi=2.0)
    # rising: interval is [min - 2*|min|, min - 0.5*|min|] = [-2, 1]
    assert np.all(crafted >= -2.0) and np.all(crafted <= 1.0)
    assert crafted.min() < -1.0  # actually spreads over the interval


def test_directed_deviation_zero_extreme_uses_absolute_offset():
    benign = [np.array([0.0]), np.array([1.0])]
    prev = np.array([-5.0])  # rising, and the minimum is exactly zero
    crafted = craft_directed_deviation(benign, prev, m=50, gen=Rng(4).stream(5))
    assert np.all(crafted >= -2.0) and np.all(crafted <= -0.5)


def test_directed_deviation_validates_interval():
    benign = [np.array([1.0]), np.array([2.0])]
    with pytest.raises(ValueError):
        craft_directed_deviation(benign, np.array([0.0]), 1, Rng(0).stream(1), delta_lo=2.0, delta_hi=1.0)


# ---------------------------------------------------------------------------
# run modes
# ---------------------------------------------------------------------------

def test_visible_senders_modes():
    roles = RoleConfig(n=3, m=1)
    assert visible_senders("collaborative", 0, roles) == [0, 1, 2, 3]
    assert visible_senders("independent", 2, roles) == [2]
    assert visible_senders("two_coalitions", 1, roles) == [0, 1, 2]
    assert visible_senders("two_coalitions", 3, roles) == [3]


def test_visible_senders_unknown_mode():
    with pytest.raises(ValueError):
        visible_senders("solo", 0, RoleConfig(n=3, m=1))
