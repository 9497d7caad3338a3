import numpy as np
import pytest

from nbd.coeffs import CoefficientSet, peclet_numbers, validate_coefficients
from nbd.exceptions import ConfigError, UnknownIdentifier, ValidationFailed
from nbd.grid import DomainSpec, build_grid


@pytest.fixture
def interval():
    return build_grid(DomainSpec.intervals([(0, 1)]), 4)


@pytest.fixture
def square():
    return build_grid(DomainSpec.rectangles([((0, 0), (1, 1))]), 4)


def test_defaults_from_dict(square):
    c = CoefficientSet.from_dict({}, 2)
    assert c.is_constant()
    assert c.is_diagonal()
    a, b, c0 = c.sample(square.interior_coords)
    np.testing.assert_array_equal(a[0], np.eye(2))
    assert not b.any() and not c0.any()
    assert validate_coefficients(c, square).passed


def test_sample_shapes(interval):
    c = CoefficientSet.from_sources('1 + x', '2 * x', '-x')
    a, b, c0 = c.sample(interval.interior_coords)
    assert a.shape == (3, 1, 1) and b.shape == (3, 1) and c0.shape == (3,)
    np.testing.assert_allclose(a[:, 0, 0], [1.25, 1.5, 1.75])
    assert not c.is_constant()


def test_asymmetric_diffusion_rejected(square):
    c = CoefficientSet.from_sources([['1', '0.5'], ['0', '1']], ['0', '0'])
    with pytest.raises(ValidationFailed) as info:
        validate_coefficients(c, square)
    assert info.value.report.quantity == 'symmetry'


def test_ellipticity(interval):
    c = CoefficientSet.from_sources('0.5', '0', eta=1)
    report = validate_coefficients(c, interval, strict=False)
    assert not report.passed
    assert report.quantity == 'ellipticity'
    assert report.min_eigenvalue == 0.5


def test_positive_potential_names_first_node(interval):
    c = CoefficientSet.from_sources('1', '0', 'x - 0.5')
    with pytest.raises(ValidationFailed, match='c0 > 0 at node 3'):
        validate_coefficients(c, interval)


def test_dimension_mismatch(interval):
    with pytest.raises(ConfigError):
        validate_coefficients(CoefficientSet.from_dict({}, 2), interval)
    with pytest.raises(ConfigError):
        CoefficientSet.from_sources([['1', '0']], ['0'])
    with pytest.raises(ConfigError):
        CoefficientSet.from_sources('1', '0', eta=0)


def test_only_spatial_variables():
    with pytest.raises(UnknownIdentifier):
        CoefficientSet.from_sources('1 + y', '0')
    with pytest.raises(UnknownIdentifier):
        CoefficientSet.from_sources('1', 'zx')


def test_sources_round_trip():
    c = CoefficientSet.from_sources([['1 + x^2', '0'], ['0', '2']], ['sin(y)', '0'], '-1', 0.5)
    assert CoefficientSet.from_dict(c.sources(), 2) == c


def test_peclet(interval):
    c = CoefficientSet.from_sources('1', '4')
    np.testing.assert_allclose(peclet_numbers(c, interval.interior_coords, interval.h), 0.5)
