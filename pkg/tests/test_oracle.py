import numpy as np
import pytest

from boundary import init_circle
from errors import DimensionMismatchError, InputError
from oracle import (
    Membership, detect_period, hausdorff_distance, reference_limit_cycle, roa_membership,
    roa_membership_batch,
)
from systems import linear_field


@pytest.fixture(scope='module')
def cycle():
    return reference_limit_cycle(100)


def ellipse(a, b, n=64):
    t = 2.0 * np.pi * np.arange(n) / n
    return np.column_stack([a * np.cos(t), b * np.sin(t)])


def test_membership_near_origin_is_inside(vdp):
    assert roa_membership(vdp, [0.1, 0.0]) == Membership.INSIDE


def test_membership_far_point_is_outside(vdp):
    assert roa_membership(vdp, [10.0, 10.0]) == Membership.OUTSIDE


def test_membership_at_origin_returns_immediately(vdp):
    assert roa_membership(vdp, [0.0, 0.0]) == Membership.INSIDE


def test_cycle_point_is_undecided_for_short_horizon(vdp, cycle):
    assert roa_membership(vdp, cycle.points[0], t_max=5.0) == Membership.UNDECIDED


def test_membership_arguments_checked(vdp):
    with pytest.raises(DimensionMismatchError):
        roa_membership(vdp, [0.1, 0.0, 0.0])
    with pytest.raises(InputError):
        roa_membership(vdp, [0.1, 0.0], t_max=0.0)


def test_unstable_linear_system_is_outside():
    field = linear_field(np.eye(2), 'linear:growth')
    assert roa_membership(field, [1e-3, 0.0]) == Membership.OUTSIDE


async def test_membership_batch_keeps_order(vdp, pool):
    labels = await roa_membership_batch(vdp, [[0.1, 0.0], [10.0, 10.0], [0.0, 0.5]], pool=pool)
    assert labels == [Membership.INSIDE, Membership.OUTSIDE, Membership.INSIDE]


async def test_membership_batch_failures_are_undecided(vdp, pool):
    labels = await roa_membership_batch(vdp, [[0.1, 0.0], [0.1, 0.0, 0.0]], pool=pool)
    assert labels == [Membership.INSIDE, Membership.UNDECIDED]


def test_reference_cycle_shape(cycle):
    assert len(cycle) == 100
    assert float(np.max(cycle.points[:, 0])) == pytest.approx(2.0086, abs=1e-3)
    assert cycle.is_simple()
    assert cycle.signed_area() > 0


def test_reference_cycle_starts_on_section(cycle):
    first = cycle.points[0]
    assert first[1] == pytest.approx(0.0, abs=1e-8)
    assert first[0] > 0


def test_reference_cycle_radius_range(cycle):
    radii = np.linalg.norm(cycle.points, axis=1)
    assert radii.min() > 0.9
    assert radii.max() < 3.0


def test_detected_period(vdp):
    orbit, _, _ = detect_period(vdp.reversed())
    assert orbit.period == pytest.approx(6.6633, abs=1e-3)
    assert orbit.closure_error < 1e-6


def test_period_independent_of_transient(vdp):
    short, _, _ = detect_period(vdp.reversed(), transient=100.0)
    long, _, _ = detect_period(vdp.reversed(), transient=150.0)
    assert abs(short.period - long.period) < 1e-4


def test_reference_cycle_needs_enough_points():
    with pytest.raises(InputError):
        reference_limit_cycle(4)


def test_hausdorff_identical_is_zero():
    curve = init_circle(1.0, 32)
    assert hausdorff_distance(curve, curve) == 0.0


def test_hausdorff_rotated_indices_is_zero():
    points = init_circle(1.0, 32).points
    assert hausdorff_distance(points, np.roll(points, 1, axis=0)) == pytest.approx(0.0, abs=1e-15)


def test_hausdorff_concentric_circles():
    assert hausdorff_distance(init_circle(1.0, 64), init_circle(2.0, 64)) == pytest.approx(1.0, abs=1e-12)


def test_hausdorff_is_symmetric():
    a, b = ellipse(2.0, 1.0), ellipse(1.0, 1.5, n=40)
    assert hausdorff_distance(a, b) == hausdorff_distance(b, a)


def test_hausdorff_triangle_inequality():
    curves = [ellipse(2.0, 1.0), ellipse(1.0, 1.5, n=40), init_circle(0.7, 24).points]
    slack = max(float(np.max(np.linalg.norm(np.roll(c, -1, axis=0) - c, axis=1))) for c in curves)
    a, b, c = curves
    assert hausdorff_distance(a, c) <= hausdorff_distance(a, b) + hausdorff_distance(b, c) + slack


def test_hausdorff_refuses_bad_shape():
    with pytest.raises(InputError):
        hausdorff_distance(np.zeros((4, 3)), init_circle(1.0, 8))
