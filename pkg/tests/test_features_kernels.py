import numpy as np
import pytest
from hypothesis import given, strategies as st

from proxbridge.features import (
    ConstantFeatures,
    IndicatorFeatures,
    PolynomialFeatures,
    ProductFeatures,
    ScaledFeatures,
    SplineFeatures,
    feature_map_from_dict,
)
from proxbridge.kernels import (
    ConstantKernel,
    ExactMatchKernel,
    FeatureKernel,
    PolynomialKernel,
    ProductKernel,
    RBFKernel,
    default_product_kernel,
    kernel_from_dict,
    median_bandwidth,
)


def _grid(n, levels=3, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.integers(0, levels, (n, 1)).astype(float), rng.integers(0, 2, n),
            rng.integers(0, 2, (n, 1)).astype(float))


def test_indicator_one_hot():
    f = IndicatorFeatures((3,), 2, (2,))
    out = f(*_grid(50))
    assert out.shape == (50, 12)
    assert np.all(out.sum(axis=1) == 1)
    assert set(np.unique(out)) <= {0.0, 1.0}


def test_indicator_row_major_order_and_bad_codes():
    f = IndicatorFeatures((3,), 2, (2,))
    out = f(np.array([[2.0]]), np.array([1]), np.array([[1.0]]))
    assert out[0].argmax() == (2 * 2 + 1) * 2 + 1
    with pytest.raises(ValueError):
        f(np.array([[3.0]]), np.array([0]), np.array([[0.0]]))
    with pytest.raises(ValueError):
        f(np.array([[0.5]]), np.array([0]), np.array([[0.0]]))


def test_proxy_constant_indicator_ignores_proxy():
    f = IndicatorFeatures(None, 2, (2,))
    p, a, x = _grid(20)
    assert np.array_equal(f(p, a, x), f(p + 1, a, x))


def test_feature_roundtrip_and_dimensions():
    maps = [
        ConstantFeatures(),
        IndicatorFeatures((3,), 2, (2,)),
        PolynomialFeatures(2, 3),
        SplineFeatures(((0.0, 1.0, 3.0),), 2, ("proxy",)),
        ProductFeatures(PolynomialFeatures(1, 1, ("proxy",)), IndicatorFeatures(None, 2, None)),
        ScaledFeatures(PolynomialFeatures(1, 1, ("proxy",)), 2.5),
    ]
    args = _grid(15)
    for f in maps:
        g = feature_map_from_dict(f.to_dict())
        out = f(*args)
        assert out.shape == (15, f.dim)
        assert np.array_equal(out, g(*args))


def test_polynomial_constant_first():
    f = PolynomialFeatures(2, 1, ("proxy",))
    out = f(np.array([[3.0]]), np.array([0]), np.array([[0.0]]))
    assert np.allclose(out, [[1.0, 3.0, 9.0]])


@given(st.integers(0, 10_000), st.sampled_from(["rbf", "poly", "match", "product", "feature"]))
def test_kernels_symmetric_psd(seed, kind):
    args = _grid(12, seed=seed)
    rng = np.random.default_rng(seed)
    args = (args[0] + rng.normal(size=args[0].shape), args[1], args[2])
    k = {
        "rbf": RBFKernel(float(rng.uniform(0.3, 3.0))),
        "poly": PolynomialKernel(2, 1.0),
        "match": ExactMatchKernel(("action", "x")),
        "product": ProductKernel((RBFKernel(1.0, ("proxy",)), ExactMatchKernel())),
        "feature": FeatureKernel(PolynomialFeatures(1, 3)),
    }[kind]
    g = k.gram(args, args)
    assert np.allclose(g, g.T, atol=1e-12)
    assert np.linalg.eigvalsh(g).min() >= -1e-10 * max(np.abs(g).max(), 1.0)
    assert np.array_equal(kernel_from_dict(k.to_dict()).gram(args, args), g)


def test_constant_kernel_and_median_bandwidth():
    args = _grid(5)
    assert np.array_equal(ConstantKernel().gram(args, args), np.ones((5, 5)))
    assert median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == 2.0
    assert median_bandwidth(np.zeros((4, 1))) == 1.0
    k = default_product_kernel(*args)
    assert isinstance(k, ProductKernel)
