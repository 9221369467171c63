"""
Tests for homeofit.fit: variable projection, training, metrics and baselines.

Acceptance runs with the full step counts are marked slow; run them with
``pytest --runslow``.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from homeofit.construct import check_degree_floor
from homeofit.critical import find_critical_sets
from homeofit.errors import NumericError, ParameterError, SingularSystemError
from homeofit.fit import (
    FitConfig,
    FitReport,
    LearnedModel,
    Trainer,
    design_matrix,
    fit_baseline,
    metrics,
    residual_table,
    train,
    train_on_data,
    varpro_coeffs,
)
from homeofit.invnet import InvResNet
from homeofit.poly import total_degree_indices
from homeofit.rng import make_generator
from homeofit.targets import Dataset, PesConfig, f1, f2, get_benchmark, make_dataset, morse_variables, uniform_grid


def benchmark_data(name):
    bench = get_benchmark(name)
    train_set = make_dataset(bench.function, bench.train_grid(), bench.cutoff, bench.minimum)
    val_set = make_dataset(bench.function, bench.val_grid(), bench.cutoff, bench.minimum)
    return bench, train_set, val_set


def small_config(**overrides):
    params = dict(degree=3, steps=20, n_blocks=3, width=4, eval_every=5, seed=0)
    params.update(overrides)
    return FitConfig(**params)


@pytest.fixture(scope="module")
def f2_small():
    train_set = make_dataset(f2, uniform_grid([(-3.0, 3.0)], 41))
    val_set = make_dataset(f2, uniform_grid([(-3.0, 3.0)], 101))
    return train_set, val_set


# =============================================================================
# Variable projection
# =============================================================================


class TestDesignMatrix:
    def test_identity_network_one_dimension(self):
        net = InvResNet(1).zero_()
        A = design_matrix(net, np.array([0.0, 1.0, 2.0]), [(0,), (1,), (2,)])
        assert_allclose(A, [[1.0, 0.0, 0.0], [1.0, 1.0, 1.0], [1.0, 2.0, 4.0]], atol=1e-12)

    def test_identity_network_two_dimensions(self):
        net = InvResNet(2).zero_()
        A = design_matrix(net, np.array([[2.0, 3.0]]), [(0, 0), (0, 1), (1, 0)])
        assert_allclose(A, [[1.0, 3.0, 2.0]], atol=1e-12)


class TestVarproCoeffs:
    def test_identity_design(self):
        solution = varpro_coeffs(np.eye(3), [1.0, -2.0, 0.5])
        assert_allclose(solution.coeffs, [1.0, -2.0, 0.5])
        assert solution.rank == 3
        assert not solution.regularized

    def test_exact_recovery(self):
        rng = make_generator(3)
        A = rng.standard_normal((40, 5))
        a = rng.standard_normal(5)
        assert_allclose(varpro_coeffs(A, A @ a).coeffs, a, atol=1e-12)

    def test_perturbation_never_helps(self):
        rng = make_generator(4)
        A = rng.standard_normal((60, 6))
        y = rng.standard_normal(60)
        best = varpro_coeffs(A, y).coeffs
        base = np.linalg.norm(A @ best - y)
        for _ in range(20):
            assert np.linalg.norm(A @ (best + 1e-3 * rng.standard_normal(6)) - y) >= base

    def test_rank_deficient_regularized(self):
        A = np.column_stack([np.ones(10), np.ones(10), np.linspace(0.0, 1.0, 10)])
        y = 2.0 + np.linspace(0.0, 1.0, 10)
        solution = varpro_coeffs(A, y)
        assert solution.regularized
        assert_allclose(A @ solution.coeffs, y, atol=1e-6)

    def test_rank_deficient_without_fallback(self):
        A = np.column_stack([np.ones(10), np.ones(10)])
        with pytest.raises(SingularSystemError):
            varpro_coeffs(A, np.ones(10), ridge_fallback=False)


# =============================================================================
# Metrics and configuration
# =============================================================================


class TestMetrics:
    def test_hand_computed(self):
        m = metrics([3.0, 4.0], [0.0, 0.0])
        assert m.rmse == pytest.approx(np.sqrt(12.5))
        assert m.mae == 4.0
        assert m.sup == 4.0
        # both truths are below the relative-error threshold
        assert m.mre == 0.0
        assert m.mre_excluded == 2

    def test_relative_error(self):
        m = metrics([1.1, 1.8], [1.0, 2.0])
        assert m.mre == pytest.approx(0.1)
        assert m.mre_excluded == 0

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            metrics([1.0], [1.0, 2.0])


class TestFitConfig:
    def test_defaults(self):
        cfg = FitConfig(degree=3)
        assert cfg.n_blocks == 15
        assert cfg.width == 8
        assert cfg.lipschitz == 0.97
        assert cfg.n_basis == 4

    def test_fixed_coeff_count(self):
        with pytest.raises(ValidationError):
            FitConfig(degree=2, dim=2, fixed_coeffs=[1.0, 2.0])

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            FitConfig(degree=2, batch_size=16)

    def test_grid_dimension_checked(self):
        with pytest.raises(ValidationError):
            FitConfig(degree=2, dim=2, train_grid=uniform_grid([(0.0, 1.0)], 5))


class TestFitReport:
    def test_basis_count_checked(self):
        with pytest.raises(ValidationError):
            FitReport(model="learned", degree=2, dim=2, n_basis=5, rmse=0.1, mae=0.2, mre=0.0, sup_error=0.2)

    def test_non_finite_metric_rejected_unless_diverged(self):
        fields = dict(model="learned", degree=1, n_basis=2, rmse=float("nan"), mae=0.0, mre=0.0, sup_error=0.0)
        with pytest.raises(ValidationError):
            FitReport(**fields)
        assert FitReport(**fields, diverged=True).diverged


# =============================================================================
# Training
# =============================================================================


class TestLearnedModel:
    def test_identity_network_is_plain_polynomial(self):
        model = LearnedModel(InvResNet(1).zero_(), np.array([1.0, 0.0, 2.0]), 2)
        xs = np.linspace(-1.0, 1.0, 7)
        assert_allclose(model(xs), 1.0 + 2.0 * xs**2, atol=1e-12)
        assert_allclose(model.h(xs), xs, atol=1e-12)

    def test_residual_table(self):
        frame = residual_table(np.array([0.0, 1.0]), [1.0, 2.0], [1.5, 2.0])
        assert list(frame.columns) == ["x0", "truth", "pred", "residual"]
        assert_allclose(frame["residual"], [0.5, 0.0])


class TestTrainer:
    def test_deterministic(self, f2_small):
        one = train_on_data(*f2_small, small_config())
        two = train_on_data(*f2_small, small_config())
        assert one.report.rmse == pytest.approx(two.report.rmse, rel=1e-12, abs=1e-15)
        assert_allclose(one.coeffs, two.coeffs, rtol=1e-12, atol=1e-15)

    def test_best_snapshot_selected(self, f2_small):
        result = train_on_data(*f2_small, small_config())
        report = result.report
        assert report.n_basis == 4
        assert len(report.history) == 5
        assert report.rmse == pytest.approx(min(h["val_rmse"] for h in report.history), rel=1e-9)
        assert report.best_step in [h["step"] for h in report.history]
        assert not report.diverged

    def test_best_validation_history_never_increases(self, f2_small):
        history = train_on_data(*f2_small, small_config(steps=40)).report.history
        best = [h["best_val_rmse"] for h in history]
        assert len(best) == 9
        assert np.all(np.diff(best) <= 0.0)
        assert best[-1] == min(h["val_rmse"] for h in history)

    def test_trained_coefficients_are_optimal_for_trained_design(self, f2_small):
        train_set, _ = f2_small
        result = train_on_data(*f2_small, small_config())
        A = design_matrix(result.net, train_set.X, total_degree_indices(1, 3))
        base = np.linalg.norm(A @ result.coeffs - train_set.y)
        rng = make_generator(4)
        for _ in range(20):
            perturbed = result.coeffs + 1e-3 * rng.choice([-1.0, 1.0], size=result.coeffs.size)
            assert np.linalg.norm(A @ perturbed - train_set.y) >= base - 1e-12 * (1.0 + base)

    def test_validation_failure_is_divergence(self, f2_small, monkeypatch):
        calls = []
        evaluate = Trainer._val_rmse

        def failing_after_first(self, net, coeffs, val):
            calls.append(1)
            if len(calls) > 1:
                raise NumericError("overflow in validation forward pass")
            return evaluate(self, net, coeffs, val)

        monkeypatch.setattr(Trainer, "_val_rmse", failing_after_first)
        report = train_on_data(*f2_small, small_config()).report
        assert report.diverged
        assert report.best_step == 0
        assert len(report.history) == 1
        assert np.isfinite(report.rmse)

    def test_zero_steps_is_initial_network(self, f2_small):
        result = train_on_data(*f2_small, small_config(steps=0))
        assert result.report.best_step == 0
        assert len(result.report.history) == 1
        assert result.report.steps == 0

    def test_fixed_coefficients_kept(self, f2_small):
        result = train_on_data(*f2_small, small_config(degree=2, fixed_coeffs=[0.0, 1.0, 0.5]))
        assert_allclose(result.coeffs, [0.0, 1.0, 0.5])

    def test_dimension_mismatch(self, f2_small):
        with pytest.raises(ParameterError):
            train_on_data(*f2_small, small_config(dim=2, degree=1))

    def test_train_needs_grids(self):
        with pytest.raises(ParameterError):
            train(f2, small_config())

    def test_train_samples_grids(self):
        cfg = small_config(
            steps=2,
            train_grid=uniform_grid([(-3.0, 3.0)], 21),
            val_grid=uniform_grid([(-3.0, 3.0)], 31),
        )
        report = train(f2, cfg, target="f2").report
        assert (report.n_train, report.n_val, report.target) == (21, 31, "f2")

    @pytest.mark.parametrize("name, degree", [("f1", 1), ("f2", 2)])
    def test_below_exact_degree_respects_floor(self, name, degree):
        bench, train_set, val_set = benchmark_data(name)
        result = train_on_data(train_set, val_set, FitConfig(degree=degree, steps=200, eval_every=50))
        cs = find_critical_sets(bench.function, bench.domain[0])
        check = check_degree_floor(cs, degree, result.model)
        assert check.applies and check.respected


# =============================================================================
# Baselines
# =============================================================================


class TestBaseline:
    def test_degree_zero_is_the_mean(self):
        ds = make_dataset(f1, uniform_grid([(-10.0, 10.0)], 301))
        result = fit_baseline(ds, ds, 0)
        assert result.report.rmse == pytest.approx(np.std(ds.y), rel=1e-10)
        assert result.report.n_basis == 1

    def test_f2_degree_80(self):
        _, train_set, val_set = benchmark_data("f2")
        report = fit_baseline(train_set, val_set, 80).report
        assert report.rmse == pytest.approx(6.93e-3, rel=0.2)
        assert report.mae == pytest.approx(0.063, rel=0.2)
        assert report.model == "baseline"

    def test_f3_degree_40(self):
        _, train_set, val_set = benchmark_data("f3")
        report = fit_baseline(train_set, val_set, 40).report
        assert report.rmse == pytest.approx(9.16e-4, rel=0.2)
        assert report.mae <= 1.2 * 2.65e-3

    def test_f4_degree_13(self):
        _, train_set, val_set = benchmark_data("f4")
        report = fit_baseline(train_set, val_set, 13).report
        assert report.n_basis == 105
        assert report.rmse == pytest.approx(2.3e-2, rel=0.2)
        assert report.mae == pytest.approx(0.163, rel=0.2)

    def test_too_few_points(self):
        ds = make_dataset(f2, uniform_grid([(-3.0, 3.0)], 5))
        with pytest.raises(ParameterError):
            fit_baseline(ds, ds, 6, ridge_fallback=False)

    def test_pes_in_morse_variables_is_exact(self):
        bench = get_benchmark("pes")
        cfg = PesConfig()
        train_set = make_dataset(bench.function, bench.train_grid((20, 20, 20)), bench.cutoff, bench.minimum)
        val_set = make_dataset(bench.function, bench.val_grid((25, 25, 25)), bench.cutoff)
        report = fit_baseline(
            Dataset(morse_variables(train_set.X, cfg), train_set.y),
            Dataset(morse_variables(val_set.X, cfg), val_set.y),
            4,
        ).report
        assert report.n_basis == 35
        assert report.rmse <= 1e-8 * np.ptp(val_set.y)


# =============================================================================
# Acceptance
# =============================================================================


def learned_fit(name, degree, fixed_coeffs=None):
    bench, train_set, val_set = benchmark_data(name)
    cfg = FitConfig(
        degree=degree, dim=bench.dim, fixed_coeffs=fixed_coeffs, steps=bench.default_steps, eval_every=500
    )
    return train_on_data(train_set, val_set, cfg, target=name)


def learned_report(name, degree, fixed_coeffs=None):
    return learned_fit(name, degree, fixed_coeffs).report


@pytest.mark.slow
class TestLearnedAcceptance:
    def test_f1_fixed_coefficients(self):
        result = learned_fit("f1", 2, fixed_coeffs=[2.0, 0.0, 1.0])
        assert result.report.rmse <= 33.4
        assert result.report.mre <= 0.063
        xs = np.linspace(-10.0, 10.0, 2001)
        reference = np.sign(xs) * np.sqrt(np.maximum(f1(xs) - 2.0, 0.0))
        assert np.max(np.abs(result.model.h(xs) - reference)) <= 0.5

    def test_f2(self):
        report = learned_report("f2", 3)
        assert report.rmse <= 1.2e-2
        assert report.mae <= 0.114

    def test_f3(self):
        assert learned_report("f3", 2, fixed_coeffs=[0.0, 0.0, 1.0]).rmse <= 2.82e-3

    def test_f4_beats_larger_baseline(self):
        report = learned_report("f4", 2)
        assert report.n_basis == 6
        assert report.rmse <= 9.3e-4
        assert report.mae <= 3.3e-3
        _, train_set, val_set = benchmark_data("f4")
        baseline = fit_baseline(train_set, val_set, 13).report
        assert baseline.rmse >= 10.0 * report.rmse

    def test_pes_beats_larger_baseline(self):
        report = learned_report("pes", 4)
        assert report.n_basis == 35
        _, train_set, val_set = benchmark_data("pes")
        baseline = fit_baseline(train_set, val_set, 18).report
        assert baseline.n_basis == 1330
        assert baseline.rmse >= 5.0 * report.rmse
