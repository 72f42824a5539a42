import numpy as np
import pytest

from errors import DimensionMismatchError, InputError, UnknownSystemError
from systems import (
    VectorField, finite_difference_jacobian, linear_field, load_linear_matrix, spectral_abscissa,
    system_registry,
)


def test_benchmarks_registered(registry):
    assert registry.list_ids() == ['rational', 'unbounded', 'vdp_reverse']


def test_vdp_reverse_values(registry):
    np.testing.assert_allclose(registry.eval_field('vdp_reverse', [1.0, 1.0]), [-1.0, 1.0])
    np.testing.assert_allclose(registry.eval_field('vdp_reverse', [2.0, 1.0]), [-1.0, 5.0])


def test_unbounded_values(registry):
    np.testing.assert_allclose(registry.eval_field('unbounded', [1.0, 0.0]), [0.0, -2.0 / 3.0])


def test_rational_values(registry):
    np.testing.assert_allclose(registry.eval_field('rational', [1.0, 0.0]), [-0.25, -0.25])


@pytest.mark.parametrize('system_id', ['vdp_reverse', 'unbounded', 'rational'])
def test_equilibrium_at_origin(registry, system_id):
    np.testing.assert_array_equal(registry.eval_field(system_id, [0.0, 0.0]), [0.0, 0.0])


@pytest.mark.parametrize('system_id', ['vdp_reverse', 'unbounded', 'rational'])
def test_analytic_jacobian_matches_finite_differences(registry, system_id):
    field = registry.get(system_id)
    np.testing.assert_allclose(
        registry.jacobian_at_origin(system_id), finite_difference_jacobian(field), atol=1e-6
    )


@pytest.mark.parametrize('system_id', ['vdp_reverse', 'unbounded', 'rational'])
def test_benchmark_origins_are_hurwitz(registry, system_id):
    assert spectral_abscissa(registry.jacobian_at_origin(system_id)) < 0


def test_wrong_dimension_refused(vdp):
    with pytest.raises(DimensionMismatchError):
        vdp.eval([1.0, 2.0, 3.0])


def test_unknown_system(registry):
    with pytest.raises(UnknownSystemError):
        registry.get('lorenz')


def test_linear_prefix_from_data_dir(registry):
    field = registry.get('linear:diagm12.txt')
    assert field.dimension == 2
    np.testing.assert_array_equal(field.analytic_jacobian_at_origin, [[-1.0, 0.0], [0.0, -2.0]])
    np.testing.assert_allclose(field.eval([1.0, 1.0]), [-1.0, -2.0])


def test_linear_prefix_with_absolute_path(registry, tmp_path):
    path = tmp_path / 'a3.txt'
    path.write_text("-1 1 0\n0 -1 1\n0 0 -1\n")
    field = registry.get(f"linear:{path}")
    assert field.dimension == 3
    np.testing.assert_allclose(field.eval([0.0, 0.0, 1.0]), [0.0, 1.0, -1.0])


def test_non_square_matrix_file(tmp_path):
    path = tmp_path / 'bad.txt'
    path.write_text("1 2 3\n4 5 6\n")
    with pytest.raises(InputError):
        load_linear_matrix(path)


def test_missing_matrix_file():
    with pytest.raises(UnknownSystemError):
        load_linear_matrix('/nonexistent/matrix.txt')


def test_linear_field_rejects_non_square():
    with pytest.raises(InputError):
        linear_field([[1.0, 2.0]])


def test_reversed_negates_field_and_jacobian(vdp):
    rev = vdp.reversed()
    x = np.array([0.3, -1.2])
    np.testing.assert_allclose(rev.eval(x), -vdp.eval(x))
    np.testing.assert_allclose(rev.analytic_jacobian_at_origin, -vdp.analytic_jacobian_at_origin)
    assert rev.id == 'vdp_reverse:reversed'


def test_register_duplicate_is_refused():
    assert system_registry.register(linear_field(-np.eye(2), 'vdp_reverse')) is False


def test_spectral_abscissa():
    assert spectral_abscissa([[0.0, -1.0], [1.0, -1.0]]) == pytest.approx(-0.5)


def test_field_without_jacobian(registry):
    field = VectorField(id='cubic', dimension=1, func=lambda x: -x ** 3)
    assert field.analytic_jacobian_at_origin is None
    np.testing.assert_allclose(finite_difference_jacobian(field), [[0.0]], atol=1e-10)
