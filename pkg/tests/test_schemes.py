import numpy as np
import pytest
from scipy import stats

from lggp import model as M
from lggp.exceptions import InvalidInputError
from lggp.gp_core import KernelParams
from lggp.sampler import HmcConfig
from lggp.schemes import (
    SYNTHETIC_TRUTH,
    Summary,
    TemperSchedule,
    fit_direct_hmc,
    fit_pl_approx,
    fit_pl_tempered,
    hyper_names,
    predict_data,
    predict_latent,
    psd_sqrt,
    simulate_from_mean,
    simulate_lggp,
)

from conftest import prior_draw_state

TINY = HmcConfig(n_samples=40, n_warmup=40, target_accept=0.8, max_tree_depth=6)


@pytest.fixture(scope="module")
def fits(small_dataset, spec):
    """One cheap fit per scheme, shared across tests."""
    sched = TemperSchedule((0.0, 0.5, 1.0), (20, 20, 40), 40)
    return {
        "hmc": fit_direct_hmc(small_dataset, spec, TINY, seed=1),
        "pl-approx": fit_pl_approx(small_dataset, spec, J=300, T=2, hmc_config=TINY, seed=1),
        "pl-tempered": fit_pl_tempered(small_dataset, spec, J=300, T=2, schedule=sched,
                                       hmc_config=TINY, seed=1),
    }


class TestTemperSchedule:
    def test_default(self):
        s = TemperSchedule()
        assert list(s.steps()) == [(0.0, 100, 0), (0.5, 100, 0), (1.0, 1000, 1000)]

    @pytest.mark.parametrize(
        "kw",
        [
            {"kappas": (0.0, 0.5)},
            {"kappas": (0.2, 1.0), "warmups": (1, 1)},
            {"kappas": (0.0, 0.6, 0.5, 1.0), "warmups": (1, 1, 1, 1)},
            {"kappas": (0.0, 1.0), "warmups": (1,)},
            {"kappas": (0.0, 1.0), "warmups": (-1, 1)},
            {"n_samples": 0},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(InvalidInputError):
            TemperSchedule(**kw)

    def test_single_step(self):
        assert list(TemperSchedule((1.0,), (5,), 3).steps()) == [(1.0, 5, 3)]


class TestTemperedTargets:
    def test_final_density_independent_of_schedule(self, small_dataset, spec, rng):
        # the kappa = 1 evaluator is the joint posterior whatever moments precede it
        K = small_dataset.K
        for _ in range(5):
            q = prior_draw_state(small_dataset, spec, rng)
            m1, P1 = rng.normal(size=2 * K), np.eye(2 * K)
            m2, P2 = rng.normal(size=2 * K), 2.0 * np.eye(2 * K)
            a = M.make_target(small_dataset, spec, 1.0, (m1, P1))(q)
            b = M.make_target(small_dataset, spec, 1.0, (m2, P2))(q)
            c = M.make_target(small_dataset, spec)(q)
            assert a[0] == pytest.approx(c[0], rel=1e-12)
            assert b[0] == pytest.approx(c[0], rel=1e-12)
            np.testing.assert_allclose(a[1], c[1], rtol=1e-10, atol=1e-10)


class TestSummary:
    def test_quantile_ordering(self, rng):
        s = Summary.from_draws(rng.normal(size=(500, 4)))
        assert np.all(s.q05 <= s.q50) and np.all(s.q50 <= s.q95)

    def test_gaussian(self):
        s = Summary.from_gaussian([1.0], [4.0])
        assert s.q95[0] == pytest.approx(1.0 + 2 * stats.norm.ppf(0.95))
        assert s.width[0] == pytest.approx(4 * stats.norm.ppf(0.95))


class TestFits:
    @pytest.mark.parametrize("mode", ["hmc", "pl-approx", "pl-tempered"])
    def test_shapes_and_ordering(self, fits, small_dataset, mode):
        r = fits[mode]
        K = small_dataset.K
        assert r.mode == mode
        assert r.hyper_names == hyper_names(1)
        assert r.hyper_draws.shape[1] == 8
        for block in ("alpha", "beta"):
            s = r.latent[block]
            assert s.q50.shape == (K,)
            assert np.all(s.q05 <= s.q50) and np.all(s.q50 <= s.q95)
        assert np.all(r.hyper_draws[:, [1, 2, 3, 5, 6, 7]] > 0)
        p = r.predictive
        assert p.q50.shape == (K,) and np.all(p.q05 > 0)
        assert np.all(p.q05 <= p.q95)

    @pytest.mark.parametrize("mode", ["hmc", "pl-approx", "pl-tempered"])
    def test_wall_time_accounting(self, fits, mode):
        w = fits[mode].wall_time
        parts = sum(w[k] for k in ("pl", "warmup", "sampling", "prediction", "overhead"))
        assert parts == pytest.approx(w["total"], rel=0.05)
        assert all(v >= 0 for v in w.values())

    def test_tempered_chain_per_step(self, fits):
        r = fits["pl-tempered"]
        assert len(r.chains) == 3
        assert r.chains[0].draws.shape[1] == 8  # hypers only at kappa 0
        assert r.alpha_draws.shape == (40, 8)

    def test_pl_hyper_mean(self, fits):
        r = fits["pl-approx"]
        assert r.alpha_draws is None and r.moments is not None
        assert isinstance(r.hyper_mean[0], KernelParams)
        assert r.hyper_mean[0].mean == pytest.approx(r.hyper_draws[:, 0].mean())

    def test_deterministic(self, small_dataset, spec, fits):
        again = fit_direct_hmc(small_dataset, spec, TINY, seed=1)
        np.testing.assert_array_equal(again.alpha_draws, fits["hmc"].alpha_draws)
        np.testing.assert_array_equal(again.predictive.q50, fits["hmc"].predictive.q50)

    def test_single_location(self, spec):
        ds = M.Dataset([0.5], [2.0])
        r = fit_direct_hmc(ds, spec, HmcConfig(n_samples=10, n_warmup=10, max_tree_depth=5))
        assert r.alpha_draws.shape == (10, 1)
        r = fit_pl_approx(ds, spec, J=100, T=1, hmc_config=HmcConfig(n_samples=10, n_warmup=10))
        assert r.latent["alpha"].q50.shape == (1,)


class TestPrediction:
    @pytest.mark.parametrize("mode", ["hmc", "pl-approx"])
    def test_new_grid(self, fits, mode):
        a, b = predict_latent(fits[mode], np.array([0.25, 0.75, 2.0]), n_draws=7,
                              rng=np.random.default_rng(0))
        assert a.shape == (7, 3) and b.shape == (7, 3)
        assert np.all(np.isfinite(a))

    def test_empty_grid(self, fits):
        a, b = predict_latent(fits["hmc"], np.zeros((0, 1)))
        assert a.size == 0 and b.size == 0

    def test_far_away_reverts_to_prior_mean(self, fits):
        r = fits["hmc"]
        a, _ = predict_latent(r, [50.0], rng=np.random.default_rng(2))
        mu = r.hyper_draws[:, 0]
        # far from the data the predictive mean is the prior mean of each draw
        assert abs(a.mean() - mu.mean()) < 4 * np.sqrt(np.mean(r.hyper_draws[:, 2] ** 2) / a.size) + 0.1

    def test_gamma_one_one(self):
        rng = np.random.default_rng(3)
        y, s = predict_data(np.zeros((20_000, 1)), np.zeros((20_000, 1)), rng)
        assert stats.kstest(y[:, 0], "expon").pvalue > 1e-3
        assert s.q50[0] == pytest.approx(np.log(2), abs=0.03)

    def test_mean_identity(self):
        rng = np.random.default_rng(4)
        a = rng.normal(1.0, 0.3, size=(50_000, 2))
        b = rng.normal(0.5, 0.2, size=(50_000, 2))
        y, _ = predict_data(a, b, rng)
        expected = np.exp(a - b).mean(axis=0)
        se = y.std(axis=0) / np.sqrt(y.shape[0])
        assert np.all(np.abs(y.mean(axis=0) - expected) < 3 * se)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            predict_data(np.zeros((2, 2)), np.zeros((2, 3)))


class TestSimulation:
    def test_synthetic_truth(self):
        assert SYNTHETIC_TRUTH[0].mean == 2.0 and SYNTHETIC_TRUTH[1].length_scales[0] == 0.5

    def test_simulate(self):
        ds, a, b = simulate_lggp(np.linspace(0, 1, 128), rng=np.random.default_rng(0))
        assert ds.K == 128 and np.all(ds.y > 0) and a.shape == b.shape == (128,)

    def test_simulate_deterministic(self):
        x = np.linspace(0, 1, 16)
        d1, *_ = simulate_lggp(x, rng=np.random.default_rng(5))
        d2, *_ = simulate_lggp(x, rng=np.random.default_rng(5))
        np.testing.assert_array_equal(d1.y, d2.y)

    def test_from_mean(self):
        x = np.linspace(0, 1, 4)
        mean = np.array([1.0, 2.0, 3.0, 4.0])
        ds, a, b = simulate_from_mean(x, mean, rate=1000.0, rng=np.random.default_rng(0))
        np.testing.assert_allclose(np.exp(a - b), mean)
        # coefficient of variation 1 / sqrt(1000 mean)
        assert np.all(np.abs(ds.y / mean - 1) < 6 / np.sqrt(1000 * mean))

    def test_from_mean_rejects(self):
        with pytest.raises(InvalidInputError):
            simulate_from_mean([0.0, 1.0], [1.0, -1.0])

    def test_psd_sqrt(self, rng):
        A = rng.normal(size=(4, 2))
        cov = A @ A.T  # rank deficient
        L = psd_sqrt(cov)
        np.testing.assert_allclose(L @ L.T, cov, atol=1e-12)
