"""
Tests for homeofit.construct: Chandler polynomials, exact homeomorphisms,
strictification and the degree floor.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from homeofit.construct import (
    build_exact_representation,
    chandler_polynomial,
    check_degree_floor,
    degree_floor,
    exact_homeomorphism,
    single_extremum_h,
    strictify,
)
from homeofit.critical import find_critical_sets
from homeofit.errors import (
    InternalConsistencyError,
    NotAlternatingError,
    NotSingleExtremumError,
    PreconditionError,
    RangeMismatchError,
)
from homeofit.rng import make_generator
from homeofit.targets import f1, f2, f3


def alternating_values(rng, M):
    values = [rng.uniform(-1.0, 1.0)]
    direction = rng.choice([-1.0, 1.0])
    for _ in range(M + 1):
        values.append(values[-1] + direction * rng.uniform(0.5, 2.0))
        direction = -direction
    return np.array(values)


def zigzag_target(rng, M):
    """Piecewise-linear target with M strict interior extrema"""
    knots = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 1.5, M + 1))])
    values = alternating_values(rng, M)

    def f(x):
        out = np.interp(np.asarray(x, dtype=float), knots, values)
        return float(out) if np.ndim(out) == 0 else out

    return f, (float(knots[0]), float(knots[-1]))


def assert_chandler_invariants(result, values):
    bound = 1e-10 * (1.0 + np.max(np.abs(values)))
    nodes = np.asarray(result.nodes)
    assert np.all(np.diff(nodes) > 0.0)
    assert np.max(np.abs(result.p(nodes) - values)) <= bound
    if result.M > 0:
        assert np.max(np.abs(result.p.derivative()(nodes[1:-1]))) <= bound
    assert result.p.degree == len(values) - 1


# =============================================================================
# Chandler polynomial
# =============================================================================


class TestChandlerPolynomial:
    def test_linear_case(self):
        result = chandler_polynomial([0.0, 1.0])
        assert result.M == 0
        assert result.nodes == pytest.approx((0.0, 1.0))
        assert_allclose(result.p.coeffs, [0.0, 1.0])

    def test_quadratic_case(self):
        """(3, 0, 3) is realised by y**2 on (-sqrt 3, 0, sqrt 3)"""
        result = chandler_polynomial([3.0, 0.0, 3.0])
        assert result.M == 1
        assert result.nodes == pytest.approx((-np.sqrt(3.0), 0.0, np.sqrt(3.0)), abs=1e-10)
        assert_allclose(result.p.coeffs, [0.0, 0.0, 1.0], atol=1e-12)
        assert_chandler_invariants(result, np.array([3.0, 0.0, 3.0]))

    def test_cubic_case(self):
        values = np.array([0.0, 1.0, -1.0, 2.0])
        result = chandler_polynomial(values)
        assert result.M == 2
        assert_chandler_invariants(result, values)

    def test_cubic_matches_grid_search(self):
        """Interior nodes normalised to 0 and 1: the critical values fix the scale"""
        values = np.array([0.0, 1.0, -1.0, 2.0])
        result = chandler_polynomial(values)
        dp = result.p.derivative()
        grid = np.linspace(-0.5, 1.5, 20001)
        slope = np.abs(dp(grid))
        interior = grid[(grid > -0.25) & (grid < 0.25)]
        assert interior[np.argmin(np.abs(dp(interior)))] == pytest.approx(0.0, abs=1e-3)
        assert slope.min() <= 1e-3

    def test_random_alternating_sequences(self):
        rng = make_generator(1234)
        for trial in range(200):
            M = 1 + trial % 4
            values = alternating_values(rng, M)
            assert_chandler_invariants(chandler_polynomial(values), values)

    def test_non_alternating_values(self):
        with pytest.raises(NotAlternatingError):
            chandler_polynomial([0.0, 1.0, 2.0])

    def test_serializes(self):
        data = chandler_polynomial([0.0, 1.0, -1.0, 2.0]).to_dict()
        assert data["degree"] == 3
        assert len(data["nodes"]) == 4
        assert set(data["residuals"]) == {"max_value_residual", "max_derivative_residual"}


# =============================================================================
# Exact homeomorphism
# =============================================================================


class TestExactHomeomorphism:
    def test_monotone_target_is_its_own_h(self):
        f = lambda x: np.asarray(x, dtype=float) ** 2  # noqa: E731
        cs = find_critical_sets(f, (0.0, 1.0))
        h = exact_homeomorphism(f, cs, chandler_polynomial(cs.full_values))
        xs = np.linspace(0.0, 1.0, 101)
        assert_allclose(h(xs), xs**2, atol=1e-12)

    def test_f1_closed_form(self):
        cs = find_critical_sets(f1, (-10.0, 10.0))
        cr = chandler_polynomial(cs.full_values)
        assert_allclose(cr.p.to_monomial().coeffs, [2.0, 0.0, 1.0], atol=1e-9)
        h = exact_homeomorphism(f1, cs, cr)
        xs = np.linspace(-10.0, 10.0, 2001)
        expected = np.sign(xs) * np.sqrt(np.maximum(f1(xs) - 2.0, 0.0))
        assert np.max(np.abs(h(xs) - expected)) <= 1e-8

    def test_f2_composition_residual(self):
        cs = find_critical_sets(f2, (-3.0, 3.0))
        cr = chandler_polynomial(cs.full_values)
        h = exact_homeomorphism(f2, cs, cr)
        values = f2(np.linspace(-3.0, 3.0, 2001))
        assert cr.p.degree == 3
        assert h.composition_residual() <= 1e-8 * (1.0 + np.ptp(values))
        assert h.certified_residual <= 1e-8 * (1.0 + np.ptp(values))

    @pytest.mark.parametrize("f, domain", [(f1, (-10.0, 10.0)), (f2, (-3.0, 3.0))])
    def test_continuous_and_increasing(self, f, domain):
        cs = find_critical_sets(f, domain)
        h = exact_homeomorphism(f, cs, chandler_polynomial(cs.full_values))
        assert max(h.junction_gaps(), default=0.0) <= 1e-9
        assert np.all(np.diff(h(np.linspace(*domain, 1000))) > 0.0)

    def test_wrong_polynomial_is_a_range_mismatch(self):
        cs = find_critical_sets(f1, (-10.0, 10.0))
        with pytest.raises(RangeMismatchError):
            exact_homeomorphism(f1, cs, chandler_polynomial([3.0, 0.0, 3.0]))

    def test_piece_count_mismatch(self):
        cs = find_critical_sets(f2, (-3.0, 3.0))
        with pytest.raises(PreconditionError):
            exact_homeomorphism(f2, cs, chandler_polynomial([3.0, 0.0, 3.0]))

    def test_synthetic_piecewise_monotone_targets(self):
        rng = make_generator(99)
        for trial in range(50):
            f, domain = zigzag_target(rng, trial % 5)
            rep = build_exact_representation(f, domain)
            values = f(np.linspace(*domain, 2001))
            assert rep.critical.M == trial % 5
            assert rep.composition_residual <= 1e-8 * (1.0 + np.ptp(values))

    def test_cubic_in_disguise(self):
        """q o sigma with q cubic and sigma increasing: p is q up to an affine change of variable"""

        def sigma(x):
            x = np.asarray(x, dtype=float)
            return x + 0.3 * np.sin(x)

        def target(x):
            s = sigma(x)
            out = s**3 - 3.0 * s
            return float(out) if np.ndim(out) == 0 else out

        rep = build_exact_representation(target, (-2.0, 2.0))
        p = rep.chandler.p
        interior = np.asarray(rep.chandler.nodes[1:-1])
        assert rep.critical.M == 2
        assert not rep.strictified
        assert p.degree == 3
        assert_allclose(p(interior), [2.0, -2.0], atol=1e-8)
        assert_allclose(p.derivative()(interior), 0.0, atol=1e-8)

        xs = np.linspace(-2.0, 2.0, 1000)
        hs = rep.h(xs)
        assert np.all(np.diff(hs) > 0.0)
        assert np.max(np.abs(p(hs) - target(xs))) <= 1e-8 * (1.0 + np.ptp(target(xs)))
        slope, offset = np.polyfit(sigma(xs), hs, 1)
        assert np.max(np.abs(slope * sigma(xs) + offset - hs)) <= 1e-6 * np.ptp(hs)

    @pytest.mark.parametrize(
        "f, domain",
        [
            (lambda x: np.minimum(x, 0.0) + np.maximum(np.asarray(x, dtype=float) - 1.0, 0.0), (-1.0, 2.0)),
            (lambda x: np.clip(np.asarray(x, dtype=float), -0.5, 0.5), (-1.0, 1.0)),
        ],
        ids=["interior-run", "clipped"],
    )
    def test_flat_run_inside_monotone_piece(self, f, domain):
        rep = build_exact_representation(f, domain)
        xs = np.linspace(*domain, 1000)
        assert rep.critical.M == 0
        assert not rep.critical.has_plateaus
        assert rep.strictified
        assert np.all(np.diff(rep.h(xs)) > 0.0)
        assert rep.target_deviation <= 1e-3

    def test_flat_run_without_strictification_is_rejected(self):
        def f(x):
            x = np.asarray(x, dtype=float)
            return np.minimum(x, 0.0) + np.maximum(x - 1.0, 0.0)

        cs = find_critical_sets(f, (-1.0, 2.0))
        with pytest.raises(InternalConsistencyError):
            exact_homeomorphism(f, cs, chandler_polynomial(cs.full_values))


# =============================================================================
# Strictification
# =============================================================================


class TestStrictify:
    def test_strict_input_unchanged(self):
        xs = np.linspace(0.0, 1.0, 5)
        ys = xs**2
        _, out = strictify(xs, ys, 0.1)
        assert_allclose(out, ys)

    def test_interior_run_ramped_from_its_start(self):
        xs = np.arange(6.0)
        _, out = strictify(xs, [0.0, 1.0, 1.0, 1.0, 2.0, 3.0], eps=0.3)
        assert_allclose(out, [0.0, 1.0, 1.1, 1.2, 2.0, 3.0])

    def test_final_run_keeps_last_sample(self):
        xs = np.arange(5.0)
        _, out = strictify(xs, [0.0, 1.0, 2.0, 2.0, 2.0], eps=0.3)
        assert_allclose(out, [0.0, 1.0, 1.8, 1.9, 2.0])

    def test_decreasing_run(self):
        xs = np.arange(4.0)
        _, out = strictify(xs, [3.0, 2.0, 2.0, 0.0], eps=0.2)
        assert np.all(np.diff(out) < 0.0)
        assert out[0] == 3.0 and out[-1] == 0.0

    def test_f3_left_piece(self):
        xs = np.linspace(-4.0, 1.0, 501)
        ys = f3(xs)
        _, out = strictify(xs, ys, eps=1e-6)
        assert np.all(np.diff(out) < 0.0)
        assert np.max(np.abs(out - ys)) <= 1e-6
        assert out[0] == ys[0] and out[-1] == ys[-1]

    def test_near_flat_steps_merged(self):
        xs = np.arange(6.0)
        _, out = strictify(xs, [0.0, 1.0, 1.0 + 1e-12, 1.0 + 2e-12, 2.0, 3.0], eps=0.3, flat_tol=1e-9)
        assert_allclose(out, [0.0, 1.0, 1.1, 1.2, 2.0, 3.0])

    def test_leading_run_keeps_first_sample(self):
        xs = np.arange(5.0)
        _, out = strictify(xs, [0.0, 0.0, 0.0, 1.0, 2.0], eps=0.3)
        assert out[0] == 0.0
        assert np.all(np.diff(out) > 0.0)

    def test_non_monotone_rejected(self):
        with pytest.raises(PreconditionError):
            strictify([0.0, 1.0, 2.0], [0.0, 1.0, 0.0])

    def test_plateau_target_exact_path(self):
        rep = build_exact_representation(f3, (-4.0, 4.0))
        values = f3(np.linspace(-4.0, 4.0, 2001))
        assert rep.strictified
        assert rep.critical.has_plateaus
        assert rep.composition_residual <= 1e-8 * (1.0 + np.ptp(values))
        assert rep.target_deviation <= 1e-4


# =============================================================================
# Closed-form single extremum
# =============================================================================


class TestSingleExtremum:
    def test_f1(self):
        a0, a2, h = single_extremum_h(f1, 0.0, (-10.0, 10.0))
        assert a0 == pytest.approx(2.0)
        assert a2 == 1.0
        assert h(5.0) == pytest.approx(np.sqrt(f1(5.0) - 2.0))
        assert h(-5.0) == pytest.approx(-np.sqrt(f1(5.0) - 2.0))

    def test_downward_parabola(self):
        a0, a2, h = single_extremum_h(lambda x: -np.asarray(x) ** 2, 0.0, (-1.0, 1.0))
        assert a0 == 0.0
        assert a2 == -1.0
        xs = np.linspace(-1.0, 1.0, 11)
        assert_allclose(h(xs), xs, atol=1e-12)

    def test_f3_flat_on_plateau(self):
        a0, a2, h = single_extremum_h(f3, 0.0, (-4.0, 4.0))
        assert a0 == 0.0
        assert a2 == 1.0
        assert_allclose(h(np.linspace(-1.0, 1.0, 9)), 0.0)

    def test_mixed_sign_rejected(self):
        with pytest.raises(NotSingleExtremumError):
            single_extremum_h(lambda x: np.asarray(x) ** 3, 0.0, (-1.0, 1.0))


# =============================================================================
# Degree floor
# =============================================================================


class TestDegreeFloor:
    def test_floor_value(self):
        cs = find_critical_sets(f2, (-3.0, 3.0))
        # jumps arctan(3), 1 and 4
        assert degree_floor(cs) == pytest.approx(0.5)

    def test_constant_approximant_respects_floor(self):
        cs = find_critical_sets(f1, (-10.0, 10.0))
        mean = float(np.mean(cs.full_values))
        check = check_degree_floor(cs, 0, lambda x: np.full(np.shape(x), mean))
        assert check.applies
        assert check.respected
        assert check.critical_error >= check.bound

    def test_exact_degree_does_not_apply(self):
        rep = build_exact_representation(f2, (-3.0, 3.0))
        check = check_degree_floor(rep.critical, rep.chandler.p.degree, lambda x: rep.chandler.p(rep.h(x)))
        assert not check.applies
        assert check.to_dict()["degree_floor_respected"]

    def test_violation_raises(self):
        cs = find_critical_sets(f1, (-10.0, 10.0))
        with pytest.raises(InternalConsistencyError):
            check_degree_floor(cs, 1, f1)
