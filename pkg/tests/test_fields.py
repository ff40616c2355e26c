import numpy as np
import pytest
import sympy as sp

from weakdarboux.exceptions import DomainError, InputError
from weakdarboux.fields import (CLOSED_BUILTINS, PERTURBATION_1FORM_R4, ConstantField,
                                PolynomialField, Region, ball_samples, canonical,
                                closedness_check, exterior_derivative_1form, field_from_dict,
                                field_to_dict, named_field, perturbed_canonical)
from weakdarboux.moser import primitive_exactness, radial_primitive
from weakdarboux.symplin import j_std


def sympy_exterior_derivative(dim, one_form_terms):
    xs = sp.symbols(f"x0:{dim}")
    lam = [0] * dim
    for e, j, c in one_form_terms:
        lam[j] += sp.Rational(c).limit_denominator(10 ** 6) * sp.prod([x ** k for x, k in zip(xs, e)])
    W = sp.Matrix(dim, dim, lambda i, j: sp.diff(lam[j], xs[i]) - sp.diff(lam[i], xs[j]))
    return sp.lambdify(xs, W, "numpy")


def test_exterior_derivative_matches_sympy(rng):
    oracle = sympy_exterior_derivative(4, PERTURBATION_1FORM_R4)
    fld = PolynomialField(4, exterior_derivative_1form(4, PERTURBATION_1FORM_R4))
    X = rng.uniform(-1, 1, size=(20, 4))
    for x, W in zip(X, fld(X)):
        np.testing.assert_allclose(W, np.array(oracle(*x), dtype=float), atol=1e-14)


def test_perturbed_canonical_hand_entry():
    # omega_12 = 1 + eps * (d_1 lambda_2 - d_2 lambda_1) = 1 + eps (2 x1 x4 - x3^2)
    x = np.array([0.3, -0.2, 0.4, 0.1])
    W = perturbed_canonical(0.1)(x)
    assert W[0, 1] == pytest.approx(1 + 0.1 * (2 * 0.3 * 0.1 - 0.4 ** 2), abs=1e-15)
    np.testing.assert_allclose(W, -W.T, atol=0)


def test_closedness_examples(rng):
    X = rng.uniform(-0.5, 0.5, size=(30, 4))
    assert closedness_check(ConstantField(j_std(4), Region((0,) * 4, 1.0)), X) <= 1e-15
    assert closedness_check(perturbed_canonical(0.1), X, 1e-4) <= 1e-6
    # omega_12 = x3 alone: d omega_{123} = d_3 omega_12 = 1
    bad = PolynomialField(4, [((0, 0, 1, 0), 0, 1, 1.0)], Region((0,) * 4, 1.0))
    assert closedness_check(bad, X) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("name", CLOSED_BUILTINS)
def test_builtins_closed_and_nondegenerate(name, rng):
    fld = named_field(name)
    X = ball_samples(rng, 50, np.zeros(fld.dim), 0.99)
    assert closedness_check(fld, X) <= 1e-6
    assert np.min(np.linalg.svd(fld(X), compute_uv=False)) > 0.5


def test_radial_primitive_examples(rng):
    C = np.array([[0, 2.0, 1.0], [-2.0, 0, -1.0], [-1.0, 1.0, 0]])
    fld = ConstantField(C)
    x = rng.normal(size=3)
    np.testing.assert_allclose(radial_primitive(fld, x), 0.5 * x @ C, atol=1e-15)
    zero = ConstantField(np.zeros((4, 4)))
    np.testing.assert_array_equal(radial_primitive(zero, x[:2].tolist() + [0, 1]), np.zeros(4))


def test_radial_primitive_linear_field(rng):
    # d of a quadratic 1-form is linear and closed: alpha(x) = x @ omega(x) / 3
    lam = [((1, 1, 0, 0), 2, 1.0), ((0, 0, 2, 0), 3, -0.5), ((2, 0, 0, 0), 1, 1.0)]
    fld = PolynomialField(4, exterior_derivative_1form(4, lam), Region((0,) * 4, 1.0))
    X = ball_samples(rng, 10, np.zeros(4), 0.5)
    alpha = radial_primitive(fld, X)
    np.testing.assert_allclose(alpha, np.einsum("pi,pij->pj", X, fld(X)) / 3.0, atol=1e-15)
    assert primitive_exactness(fld, X) <= 1e-6


@pytest.mark.parametrize("name", CLOSED_BUILTINS)
def test_primitive_exactness_builtins(name, rng):
    fld = named_field(name)
    assert primitive_exactness(fld, ball_samples(rng, 30, np.zeros(fld.dim), 0.5)) <= 1e-6


def test_field_round_trip(rng):
    X = rng.uniform(-0.5, 0.5, size=(5, 4))
    for fld in (perturbed_canonical(0.1), canonical(4), named_field("coupled_r6")):
        back = field_from_dict(field_to_dict(fld))
        Y = rng.uniform(-0.5, 0.5, size=(5, fld.dim)) if fld.dim != 4 else X
        np.testing.assert_array_equal(back(Y), fld(Y))
        assert back.region == fld.region


@pytest.mark.parametrize("doc", [
    {"kind": "polynomial", "dim": 2, "coefficients": [[[1], 0, 1, 1.0]]},
    {"kind": "polynomial", "dim": 2, "coefficients": [[[0, 0], 0, 0, 1.0]]},
    {"kind": "constant", "dim": 3, "coefficients": [[0, 1], [-1, 0]]},
    {"kind": "nope", "dim": 2},
    {"dim": 2},
    {"kind": "named", "dim": 2, "name": "unknown_field"},
])
def test_malformed_documents(doc):
    with pytest.raises(InputError):
        field_from_dict(doc)


def test_domain_check():
    fld = canonical(2)
    with pytest.raises(DomainError) as info:
        fld.check_inside([[2.0, 0.0]])
    assert info.value.x == [2.0, 0.0]


def test_callable_field_not_serializable():
    from weakdarboux.fields import radial_degenerate
    fld = radial_degenerate()
    with pytest.raises(InputError):
        fld.to_dict()
    assert field_to_dict(named_field("radial_degenerate"))["kind"] == "named"
