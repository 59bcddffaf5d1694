import numpy as np
import pytest
from hypothesis import given, strategies as st

from ksparse.data import (
    DataParseError,
    Dataset,
    DataValidationError,
    SupportSet,
    destandardize,
    indicator_to_support,
    load_dataset,
    save_dataset,
    standardize,
    support_to_indicator,
    weighted_center,
)

from conftest import random_dataset


def test_constant_column_rejected():
    X = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]])
    with pytest.raises(DataValidationError, match="x0"):
        Dataset(np.arange(3.0), np.ones(3), X)


@pytest.mark.parametrize("sigma", [0.0, -1.0, np.nan])
def test_bad_sigma_rejected(sigma):
    X = np.random.default_rng(0).standard_normal((3, 2))
    with pytest.raises(DataValidationError):
        Dataset(np.arange(3.0), np.array([1.0, sigma, 1.0]), X)


def test_shape_mismatch():
    with pytest.raises(DataValidationError):
        Dataset(np.arange(3.0), np.ones(4), np.ones((3, 2)))


def test_two_point_standardization():
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    ds, info = standardize(Dataset(np.array([1.0, 3.0]), np.ones(2), X))
    np.testing.assert_allclose(ds.y, [-1.0, 1.0])
    assert info.y_std == pytest.approx(1.0)


@given(st.integers(0, 10**6), st.booleans())
def test_standardize_round_trip(seed, weighted):
    d = random_dataset(seed, 12, 4)
    ds, info = standardize(d, weighted=weighted)
    back = destandardize(ds, info)
    np.testing.assert_allclose(back.y, d.y, rtol=1e-12, atol=1e-12 * np.abs(d.y).max())
    np.testing.assert_allclose(back.X, d.X, rtol=1e-12, atol=1e-12 * np.abs(d.X).max())
    np.testing.assert_allclose(back.sigma, d.sigma, rtol=1e-12)


def test_weighted_center_zeroes_weighted_means(toy):
    dc = weighted_center(toy)
    w = dc.weights
    assert abs(w @ dc.y) < 1e-10
    np.testing.assert_allclose(w @ dc.X, 0, atol=1e-10)


@given(st.sets(st.integers(0, 19), min_size=1, max_size=20))
def test_indicator_round_trip(idx):
    s = SupportSet(idx)
    c = support_to_indicator(s, 20)
    assert c.sum() == s.k
    assert indicator_to_support(c) == s


def test_support_validation():
    with pytest.raises(ValueError):
        SupportSet([])
    with pytest.raises(ValueError):
        SupportSet([1, 1])
    assert SupportSet([3, 1]).indices == (1, 3)
    with pytest.raises(ValueError):
        SupportSet([0, 5]).check_bounds(5)


def test_csv_round_trip(tmp_path, toy):
    path = tmp_path / "d.csv"
    save_dataset(toy, path)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.X, toy.X)
    np.testing.assert_array_equal(back.y, toy.y)
    assert back.fingerprint() == toy.fingerprint()


def test_csv_constant_sigma(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("y,a,b\n1,0,1\n2,1,0\n3,1,1\n")
    d = load_dataset(path, constant_sigma=0.5)
    np.testing.assert_array_equal(d.sigma, 0.5)
    assert d.column_names == ("a", "b") or list(d.column_names) == ["a", "b"]


def test_csv_parse_error_location(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("y,sigma,a,b\n1,1,0,1\n2,1,oops,0\n3,1,1,1\n")
    with pytest.raises(DataParseError) as info:
        load_dataset(path)
    assert info.value.row is not None
