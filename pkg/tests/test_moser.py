import numpy as np
import pytest

from conftest import random_antisym
from weakdarboux.exceptions import DegeneracyError, DomainError
from weakdarboux.fields import (ConstantField, Region, ball_samples, canonical, perturbed_canonical,
                                twisted_plane, zero_crossing)
from weakdarboux.moser import (FormPath, convergence_study, darboux_chart, exp_scaling_chart,
                               fixed_point_error, moser_flow, moser_vector_field, verify_pullback)
from weakdarboux.symplin import j_std, linear_darboux


@pytest.fixture(scope="module")
def perturbed():
    fld = perturbed_canonical(0.1)
    pts = ball_samples(np.random.default_rng(0), 100, np.zeros(4), 0.5)
    return fld, pts, darboux_chart(fld, np.zeros(4), pts)


def test_vector_field_zero_primitive():
    path = FormPath.linear(twisted_plane(), np.zeros(2))
    X = moser_vector_field(path, lambda P: np.zeros_like(P), 0.3, np.array([[0.1, 0.2], [0.0, 0.0]]))
    np.testing.assert_array_equal(X, 0.0)


def test_vector_field_hand_solution():
    path = FormPath.linear(canonical(2), np.zeros(2))
    X = moser_vector_field(path, np.array([0.0, 1.0]), 0.5, np.array([0.2, 0.1]))
    # flat(J, X) = X @ J = (-X2, X1)... = -(0, 1)  ->  X = (-1, 0)
    np.testing.assert_allclose(X, [-1.0, 0.0], atol=0)


def test_vector_field_degenerate():
    W = j_std(2) * 1e-12
    path = FormPath.linear(ConstantField(W), np.zeros(2))
    with pytest.raises(DegeneracyError) as info:
        moser_vector_field(path, np.array([0.0, 1.0]), 0.5, np.array([0.2, 0.1]))
    assert info.value.t == 0.5 and info.value.sigma_min == pytest.approx(1e-12)


def test_constant_field_flow_is_identity(rng):
    fld = ConstantField(random_antisym(rng, 4) + 2 * j_std(4), Region((0,) * 4, 1.0))
    pts = ball_samples(rng, 10, np.zeros(4), 0.5)
    chart = moser_flow(FormPath.linear(fld, np.zeros(4)), pts, steps=10)
    np.testing.assert_array_equal(chart.final_images, pts)
    np.testing.assert_array_equal(chart.final_jacobians, np.broadcast_to(np.eye(4), (10, 4, 4)))


def test_fixed_point(perturbed):
    fld, _, _ = perturbed
    x0 = np.array([0.1, -0.05, 0.0, 0.1])
    assert fixed_point_error(FormPath.linear(fld, x0), steps=20) <= 1e-12


def test_pullback_identity_at_every_stored_time(perturbed):
    _, _, chart = perturbed
    moser_res = chart.residual_report["moser"]
    assert sorted(moser_res) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert max(moser_res.values()) <= 1e-5
    assert chart.residual_report["darboux"] <= 1e-5 and chart.residual_report["ok"]


def test_chart_evaluator_matches_stored(perturbed):
    _, pts, chart = perturbed
    np.testing.assert_allclose(chart(pts[:3]), chart.final_images[:3], atol=1e-14)
    np.testing.assert_allclose(chart.jacobian(pts[:3]), chart.final_jacobians[:3], atol=1e-14)


def test_verify_pullback_examples(rng):
    fld = ConstantField(random_antisym(rng, 4) + 2 * j_std(4), Region((0,) * 4, 1.0))
    pts = ball_samples(rng, 10, np.zeros(4), 0.5)
    ident = moser_flow(FormPath.linear(fld, np.zeros(4)), pts, steps=2)
    assert verify_pullback(ident, fld, fld) == 0.0
    chart = darboux_chart(fld, np.zeros(4), pts, steps=4)
    A = linear_darboux(fld.matrix)
    np.testing.assert_allclose(chart.final_jacobians[0], np.linalg.inv(A), atol=1e-12)
    assert chart.residual_report["darboux"] <= 1e-9


def test_darboux_chart_canonical_field(rng):
    pts = ball_samples(rng, 10, np.zeros(4), 0.5)
    chart = darboux_chart(canonical(4), np.zeros(4), pts, steps=5)
    assert chart.residual_report["darboux"] <= 1e-15


def test_darboux_chart_off_origin(rng):
    fld = twisted_plane(0.2)
    x0 = np.array([0.2, -0.1])
    pts = ball_samples(rng, 20, x0, 0.3)
    chart = darboux_chart(fld, x0, pts, steps=50)
    assert chart.residual_report["darboux"] <= 1e-8
    np.testing.assert_allclose(chart(x0), 0.0, atol=1e-13)


def test_exp_scaling_identity_at_zero(rng):
    pts = ball_samples(rng, 10, np.zeros(4), 0.5)
    chart = exp_scaling_chart(perturbed_canonical(0.1), np.zeros(4), 0.0, pts, steps=5)
    np.testing.assert_array_equal(chart.final_images, pts)
    np.testing.assert_array_equal(chart.final_jacobians, np.broadcast_to(np.eye(4), (10, 4, 4)))


def test_exp_scaling_constant_J(rng):
    pts = ball_samples(rng, 20, np.zeros(2), 0.5)
    chart = exp_scaling_chart(canonical(2), np.zeros(2), 0.1, pts)
    assert chart.residual_report["exp_final"] <= 1e-6
    # radial contraction x -> exp(-s/2) x solves this case in closed form
    np.testing.assert_allclose(chart.final_images, np.exp(-0.05) * pts, atol=1e-12)


def test_exp_scaling_degenerate():
    fld = zero_crossing(0.3)
    pts = np.array([[0.1, 0.0], [0.3, 0.2]])
    with pytest.raises(DegeneracyError) as info:
        exp_scaling_chart(fld, np.zeros(2), 0.1, pts, steps=4)
    assert info.value.s == 0.1 and info.value.x == [0.3, 0.2]


def test_domain_exit():
    fld = perturbed_canonical(0.1, radius=1.0)
    with pytest.raises(DomainError):
        darboux_chart(fld, np.zeros(4), np.array([[1.5, 0, 0, 0]]), steps=2)


def test_convergence_order_pre_roundoff(perturbed):
    fld, pts, _ = perturbed
    study = convergence_study(fld, np.zeros(4), pts, steps=(1, 2, 4))
    assert study["resolved"][0]
    assert study["min_resolved_ratio"] >= 8.0
