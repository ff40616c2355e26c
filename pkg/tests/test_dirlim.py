import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weakdarboux.dirlim import (CoherentFormSequence, CoherentNormSeq, DLVector, MarsdenSpec,
                                canonical_tower, coherence_check, coherent_norm_eval,
                                darboux_radius, default_levels, default_marsden, dl_inject,
                                fiber_sigma_min, limit_form_eval, marsden_form, marsden_tower,
                                metric_derivative, metric_operator, shrinkage_experiment,
                                strictly_decreasing)
from weakdarboux.exceptions import InputError
from weakdarboux.fields import ConstantField, canonical, radial_degenerate
from weakdarboux.symplin import j_std

LEVELS = default_levels(16)


def test_dl_inject_examples():
    assert dl_inject([1.0, 0.0], LEVELS).min_level == 1
    v = dl_inject([1.0, 0.0, 0.0, 0.0], LEVELS)
    assert v.min_level == 1 and v.coords == (1.0,)
    assert dl_inject([0.0, 0.0, 1.0, 0.0], LEVELS).min_level == 2
    with pytest.raises(InputError):
        dl_inject([1.0, 2.0, 3.0], LEVELS)


def test_dlvector_equality_is_exact():
    assert DLVector((1.0, 2.0, 0.0), LEVELS) == DLVector((1.0, 2.0), LEVELS)
    assert DLVector((1.0, 2.0 + 1e-16 * 0), LEVELS) == DLVector((1.0, 2.0), LEVELS)
    assert DLVector((1.0, 2.0000000000000004), LEVELS) != DLVector((1.0, 2.0), LEVELS)
    with pytest.raises(InputError):
        DLVector((0.0,) * 40, (1, 1))


def test_coherent_norm_examples():
    seq = CoherentNormSeq(tuple(range(1, 11)))
    assert coherent_norm_eval(seq, DLVector((1.0, -2.0, 3.0), seq.levels)) == 6.0
    assert coherent_norm_eval(seq, DLVector((), seq.levels)) == 0.0


vec = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=12)


@settings(max_examples=100, deadline=None)
@given(vec, vec, st.sampled_from(["ell1", "euclidean", "ellinf"]))
def test_norm_triangle_and_level_independence(a, b, kind):
    seq = CoherentNormSeq(tuple(range(1, 21)), kind)
    u, v = DLVector(tuple(a), seq.levels), DLVector(tuple(b), seq.levels)
    nu = coherent_norm_eval(seq, u)
    assert coherent_norm_eval(seq, u + v) <= nu + coherent_norm_eval(seq, v) + 1e-9 * (1 + nu)
    for k in range(u.min_level, 21):
        assert coherent_norm_eval(seq, u, k) == nu


def test_coherence_canonical_and_broken(rng):
    seq = canonical_tower(6)
    samples = {n: rng.normal(size=(5, 2 * n)) for n in range(1, 6)}
    assert coherence_check(seq, samples) == 0.0

    def broken(n):
        W = j_std(2 * n)
        if n == 2:
            W[0, 1] += 1e-3
            W[1, 0] -= 1e-3
        return ConstantField(W)

    bad = CoherentFormSequence(broken, default_levels(6))
    assert coherence_check(bad, samples) >= 1e-3 * (1 - 1e-9)


def test_marsden_tower_coherent_for_fixed_e(rng):
    spec = default_marsden(4, base_dim=6, fixed_e=True)
    seq = marsden_tower(spec)

    def samples(n):
        return rng.uniform(-0.3, 0.3, size=(4, seq.levels[n - 1]))

    assert coherence_check(seq, samples) <= 1e-15


def test_limit_form_eval_examples():
    seq = canonical_tower(8)
    e = lambda i: DLVector(tuple(np.eye(16)[i - 1]), seq.levels)  # noqa: E731
    assert limit_form_eval(seq, e(1), e(2)) == 1.0
    assert limit_form_eval(seq, e(1), e(3)) == 0.0
    vals = {limit_form_eval(seq, e(3), e(4), level=k) for k in (2, 3, 4)}
    assert vals == {1.0}
    with pytest.raises(InputError):
        limit_form_eval(seq, e(3), e(4), level=1)


def test_limit_form_eval_level_independent(rng):
    spec = default_marsden(5, base_dim=4, fixed_e=True)
    seq = marsden_tower(spec)
    for _ in range(20):
        u = DLVector(tuple(rng.normal(size=10)), seq.levels)
        v = DLVector(tuple(rng.normal(size=11)), seq.levels)
        x = DLVector(tuple(0.1 * rng.normal(size=10)), seq.levels)
        ref = limit_form_eval(seq, u, v, x)
        for k in range(max(u.min_level, v.min_level), 6):
            assert limit_form_eval(seq, u, v, x, level=k) == ref


def test_metric_derivative_fd(rng):
    spec = default_marsden(3, base_dim=5)
    n, d = 2, spec.level_dim(2)
    for _ in range(5):
        u, a, b, v = rng.normal(size=(4, d))
        h = 1e-5
        g = lambda w: np.sum(metric_operator(spec, n, w[None])[0] * a * b)  # noqa: E731
        fd = (g(u + h * v) - g(u - h * v)) / (2 * h)
        assert abs(fd - metric_derivative(spec, n, u, a, b, v)) <= 1e-7 * max(1.0, abs(fd))


def test_marsden_form_matches_derivative_formula(rng):
    spec = default_marsden(2, base_dim=3)
    n, d = 2, spec.level_dim(2)
    fld = marsden_form(spec, n)
    u, e = rng.uniform(-0.3, 0.3, size=(2, d))
    W = fld(np.concatenate([u, e]))
    e1, e2, e3, e4 = rng.normal(size=(4, d))
    g = lambda a, b: np.sum(metric_operator(spec, n, u[None])[0] * a * b)  # noqa: E731
    direct = (metric_derivative(spec, n, u, e, e1, e3) - metric_derivative(spec, n, u, e, e3, e1)
              + g(e4, e1) - g(e2, e3))
    assert np.concatenate([e1, e2]) @ W @ np.concatenate([e3, e4]) == pytest.approx(direct, abs=1e-12)


def test_fiber_sigma_min(rng):
    spec = MarsdenSpec(tuple(1.0 / j ** 2 for j in range(1, 4)), ((0.0, 0.0, 0.0),))
    # d_1 = h + 1 = 4: S_1 = diag(1, 1/4, 1/9, 1) ... smallest sigma of the base block is 1/9
    assert fiber_sigma_min(spec, 1, np.zeros(4)) == pytest.approx(1 / 9)
    spec4 = MarsdenSpec(tuple(1.0 / j ** 2 for j in range(1, 5)), ((1.0, 0, 0, 0),))
    assert fiber_sigma_min(spec4, 1, spec4.singular_point(1)) == pytest.approx(1 / 16)
    spec = default_marsden(3, base_dim=8)
    for _ in range(20):
        u = rng.normal(size=spec.level_dim(2))
        dist2 = np.sum((u - spec.singular_point(2)) ** 2)
        assert fiber_sigma_min(spec, 2, u) >= dist2


def test_marsden_spec_round_trip_and_errors():
    spec = default_marsden(3, base_dim=4)
    assert MarsdenSpec.from_dict(spec.to_dict()) == spec
    assert MarsdenSpec.from_dict({"kind": "marsden", "n_levels": 2, "base_dim": 3}).n_levels == 2
    with pytest.raises(InputError):
        MarsdenSpec((1.0, 2.0), ((0.0, 0.0),))
    with pytest.raises(InputError):
        MarsdenSpec.from_dict({"sigma": [1.0, 0.5], "points": [[0.0]]})
    with pytest.raises(InputError):
        MarsdenSpec.from_dict({"bogus": 1})


def test_darboux_radius_constant_field():
    assert darboux_radius(canonical(4), np.zeros(4)) == 1.0


def test_darboux_radius_locates_degeneracy():
    fld = radial_degenerate((0.3, 0.0))
    r = darboux_radius(fld, np.zeros(2), margin=1e-8)
    assert r == pytest.approx(0.3, abs=2e-3)
    assert darboux_radius(radial_degenerate((0.0, 0.0)), np.zeros(2)) == 0.0


def test_shrinkage_small_tower():
    # base_dim 16 puts sigma_min(S) = 1/256 above 1e-4, so a larger margin is used
    spec = default_marsden(4, base_dim=16)
    rows = shrinkage_experiment(spec, margin=1e-2)
    radii = [r[2] for r in rows]
    assert strictly_decreasing(radii)
    fixed = default_marsden(4, base_dim=16, fixed_e=True)
    fixed_radii = [r[2] for r in shrinkage_experiment(fixed, margin=1e-2)]
    assert max(fixed_radii) - min(fixed_radii) <= 2e-3
    same = [r[2] for r in shrinkage_experiment(spec, [2, 2, 2], margin=1e-2)]
    assert len(set(same)) == 1
