import math

import numpy as np
import pytest

from helioaim.errors import InvalidConfigError, RunError, UsageError
from helioaim.flux import AimVector
from helioaim.milp import BackendResult, SolverBackend
from helioaim.optimizer import (
    AimingProblem,
    RunSettings,
    SamplerConfig,
    equatorial_baseline,
    generate_data,
    is_bimodal,
    read_aim_csv,
    read_run_log,
    run,
    sample_aims,
    sweep_baseline,
    write_aim_csv,
)
from helioaim.plant import EQUINOX_DAY, Heliostat, PlantConfig, solar_position
from helioaim.surrogate import TrainConfig

FAST_TRAIN = TrainConfig(hidden=(6,), max_epochs=30, batch_size=128, learning_rate=5e-3)


def fast_settings(**kw):
    base = dict(iterations=2, eps=(0.0, 0.1), sampler=SamplerConfig(size_base=200, size_step=50),
                train=FAST_TRAIN, time_limit=30.0)
    base.update(kw)
    return RunSettings(**base)


@pytest.fixture(scope="module")
def problem(small_config, small_field, noon):
    return AimingProblem(small_field, noon, small_config, lam=50.0)


class TestSampling:
    def test_inside_box(self, rng):
        inc = AimVector(np.array([0.0, 3.0, 1.5]))
        for t, cfg in [(1, SamplerConfig()), (1, SamplerConfig(mode="normal", sigma=2.0)), (3, SamplerConfig(sigma=1.0))]:
            K = sample_aims(t, 500, 3, inc, cfg, (0.0, 3.0), rng)
            assert K.shape == (500, 3) and K.min() >= 0.0 and K.max() <= 3.0

    def test_truncated_not_clipped(self, rng):
        inc = AimVector(np.array([3.0, 0.0]))
        K = sample_aims(2, 4000, 2, inc, SamplerConfig(sigma=0.25), (0.0, 3.0), rng)
        assert np.mean(K == 3.0) < 1e-3 and np.mean(K == 0.0) < 1e-3
        # half-normal mean sigma*sqrt(2/pi) from the bound
        assert 3.0 - K[:, 0].mean() == pytest.approx(0.25 * np.sqrt(2 / np.pi), rel=0.05)

    def test_uniform_limits(self, rng):
        K = sample_aims(1, 1000, 2, None, SamplerConfig(a=1.0, b=2.0), (0.0, 3.0), rng)
        assert K.min() >= 1.0 and K.max() <= 2.0
        with pytest.raises(InvalidConfigError):
            sample_aims(1, 10, 2, None, SamplerConfig(a=1.0, b=4.0), (0.0, 3.0), rng)

    def test_zero_sigma_reproduces_incumbent(self, problem):
        inc = AimVector(np.linspace(0.5, 2.5, problem.n_groups))
        data = generate_data(2, 20, inc, SamplerConfig(sigma=0.0), problem, seed=1)
        assert np.all(data.X == inc.k)
        assert np.ptp(data.y) <= 1e-12 * abs(data.y[0])

    def test_incumbent_required_after_first_iteration(self, rng):
        with pytest.raises(UsageError):
            sample_aims(2, 10, 3, None, SamplerConfig(), (0.0, 3.0), rng)

    def test_deterministic(self, problem):
        a = generate_data(1, 30, None, SamplerConfig(), problem, seed=9)
        b = generate_data(1, 30, None, SamplerConfig(), problem, seed=9)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)

    def test_labels_are_true_scores(self, problem):
        data = generate_data(1, 5, None, SamplerConfig(), problem, seed=2)
        for x, y in zip(data.X, data.y):
            assert y == pytest.approx(problem.evaluate(x)[1].score, rel=1e-12)

    def test_threaded_scores_match(self, problem, rng):
        K = rng.uniform(0, 3, (300, problem.n_groups))
        serial = problem.scores(K)
        threaded = AimingProblem(problem.field, problem.sun, problem.config, problem.lam, workers=3).scores(K)
        np.testing.assert_array_equal(serial, threaded)

    def test_schedule(self):
        cfg = SamplerConfig()
        assert [cfg.size(t) for t in range(1, 7)] == [3000, 4000, 5000, 6000, 7000, 8000]
        assert np.mean([cfg.size(t) for t in range(1, 7)]) == 5500


class TestBaselines:
    def test_equatorial(self):
        np.testing.assert_array_equal(equatorial_baseline(5).k, np.full(5, 3.0))

    def test_is_bimodal(self):
        v = np.linspace(-1, 1, 41)
        one = np.exp(-v**2 / 0.2)
        two = np.exp(-(v - 0.5) ** 2 / 0.05) + np.exp(-(v + 0.5) ** 2 / 0.05)
        assert not is_bimodal(one)
        assert is_bimodal(two)
        shallow = one + 0.001 * np.cos(40 * v)
        assert not is_bimodal(shallow, 0.01)
        assert not is_bimodal(np.zeros(5))

    def test_sweep_stops_right_before_bimodal(self, small_config, small_field, noon):
        sw = sweep_baseline(small_field, noon, small_config)
        problem = AimingProblem(small_field, noon, small_config)
        sectors = {h.group: h.sector for h in small_field}
        for sector in sorted(set(sectors.values())):
            groups = [g for g, s in sectors.items() if s == sector]
            k_sel = sw.k[groups[0]]
            assert np.all(sw.k[groups] == k_sel)
            assert not is_bimodal(problem.flux(sw).C[sector].mean(axis=1))
            if k_sel > small_config.k_min:
                lower = sw.k.copy()
                lower[:] = np.round(k_sel - 0.1, 10)  # all sectors sweep together
                assert is_bimodal(problem.flux(lower).C[sector].mean(axis=1))

    def test_equatorial_collects_more_than_sweep(self, small_config, small_field, noon):
        problem = AimingProblem(small_field, noon, small_config)
        sw = sweep_baseline(small_field, noon, small_config)
        eq = equatorial_baseline(problem.n_groups)
        assert problem.evaluate(eq)[2].collected_energy >= problem.evaluate(sw)[2].collected_energy

    def test_wide_beam_never_bimodal(self):
        cfg = PlantConfig(receiver_height=1.0, receiver_diameter=2.0, panel_count=4, panel_width=1.4,
                          tower_optical_height=50.0, mirror_area=10.0, heliostat_count=1,
                          mesh_vertical=11, mesh_horizontal=3)
        h = Heliostat(0, (400.0, 400.0, 0.0), 0, 0, 0)
        sun = solar_position(cfg.latitude, EQUINOX_DAY, 12.0)
        with pytest.warns(RuntimeWarning):
            sw = sweep_baseline([h], sun, cfg)
        assert sw.k[0] == cfg.k_min

    def test_bad_step(self, small_config, small_field, noon):
        with pytest.raises(InvalidConfigError):
            sweep_baseline(small_field, noon, small_config, k_grid_step=0.0)


class AlwaysInfeasible(SolverBackend):
    name = "never"

    def solve(self, model, time_limit=300.0, gap=1e-4):
        return BackendResult("infeasible", None, math.nan, math.nan)


class TestRun:
    def test_single_iteration(self, problem, tmp_path):
        best, history = run(problem, fast_settings(iterations=1), log_path=tmp_path / "log.jsonl")
        assert len(history) == 1
        rec = history[0]
        solved = [c for c in rec.candidates if c.true_qs is not None]
        assert rec.incumbent_qs == max(c.true_qs for c in solved)
        assert rec.incumbent_qs == pytest.approx(problem.evaluate(best)[1].score, rel=1e-12)
        log = read_run_log(tmp_path / "log.jsonl")
        assert len(log) == 1 and log[0]["iteration"] == 1

    def test_incumbent_non_decreasing_and_metrics_consistent(self, problem):
        _, history = run(problem, fast_settings(iterations=3, stop_patience=None))
        qs = [r.incumbent_qs for r in history]
        assert all(b >= a for a, b in zip(qs, qs[1:]))
        assert [r.n_samples for r in history] == [200, 250, 300]
        last = history[-1]
        assert last.metrics == problem.evaluate(last.incumbent)[2]

    def test_deterministic(self, problem):
        a, _ = run(problem, fast_settings(seed=4))
        b, _ = run(problem, fast_settings(seed=4))
        np.testing.assert_array_equal(a.k, b.k)

    def test_early_stop(self, problem):
        # a huge tolerance makes every iteration count as stale
        _, history = run(problem, fast_settings(iterations=5, stop_tolerance=10.0, stop_patience=2))
        assert len(history) == 3

    def test_all_failed(self, problem):
        with pytest.raises(RunError):
            run(problem, fast_settings(), backend=AlwaysInfeasible())

    def test_failed_iteration_recorded(self, problem):
        class FailSecond(SolverBackend):
            name = "flaky"
            calls = 0

            def solve(self, model, time_limit=300.0, gap=1e-4):
                from helioaim.milp import HighsBackend
                FailSecond.calls += 1
                if FailSecond.calls > 2:  # both eps of iteration 1 succeed, everything after fails
                    return BackendResult("infeasible", None, math.nan, math.nan)
                return HighsBackend().solve(model, time_limit, gap)

        best, history = run(problem, fast_settings(iterations=2, stop_patience=None), backend=FailSecond())
        assert not history[0].failed and history[1].failed
        assert history[1].incumbent_qs == history[0].incumbent_qs

    def test_unpenalized_single_group_approaches_equatorial(self):
        cfg = PlantConfig(receiver_height=4.0, receiver_diameter=2.5, panel_count=4, panel_width=1.75,
                          tower_optical_height=60.0, mirror_area=40.0, heliostat_count=6,
                          mesh_vertical=11, mesh_horizontal=3)
        field = [Heliostat(i, (r * math.sin(a), r * math.cos(a), 0.0), 0, 0, 0)
                 for i, (r, a) in enumerate([(60, 0.3), (70, 0.6), (80, 0.9), (65, 1.2), (75, 0.45), (85, 1.05)])]
        sun = solar_position(cfg.latitude, EQUINOX_DAY, 12.0)
        problem = AimingProblem(field, sun, cfg, lam=0.0)
        best, _ = run(problem, fast_settings(iterations=2))
        eq = problem.evaluate(equatorial_baseline(1))[2].collected_energy
        assert problem.evaluate(best)[2].collected_energy >= 0.99 * eq

    def test_settings_validation(self):
        with pytest.raises(InvalidConfigError):
            RunSettings(iterations=0)
        with pytest.raises(InvalidConfigError):
            RunSettings(eps=())
        with pytest.raises(InvalidConfigError):
            RunSettings(eps=(-0.1,))


class TestAimFiles:
    def test_roundtrip(self, tmp_path):
        aims = AimVector(np.array([0.1, 2.25, 3.0]))
        write_aim_csv(aims, tmp_path / "a.csv")
        assert (tmp_path / "a.csv").read_text().splitlines()[0] == "group,k"
        np.testing.assert_array_equal(read_aim_csv(tmp_path / "a.csv", 3).k, aims.k)

    def test_validation(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("group,k\n0,1.0\n2,1.0\n")
        with pytest.raises(UsageError):
            read_aim_csv(p)
        p.write_text("g,k\n0,1.0\n")
        with pytest.raises(UsageError):
            read_aim_csv(p)
        p.write_text("group,k\n0,1.0\n")
        with pytest.raises(UsageError):
            read_aim_csv(p, 2)
