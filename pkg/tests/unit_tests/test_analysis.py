import pytest
import numpy as np
from unittest import TestCase
from scipy.special import erf
from pairlab.model import ExperimentConfig
from pairlab.fitting import model_eval, FitResult
from pairlab.sim import TagStream, G2_CHANNELS, simulate_pairs, simulate_heralded_g2
from pairlab.util import AnalysisError, NoPeakError
from pairlab.analysis import (Histogram, build_start_stop_histogram, fit_coincidence_peak, compute_car,
                              coincidence_rate, scale_to_pgr, analytic_car, count_triples, heralded_g2,
                              TripleCoincidenceCounts, fit_power_sweep, bell_threshold, singles_modulation,
                              BELL_BOUND, FWHM_PER_SIGMA)


def peak_histogram(amplitude=400., center=20000., sigma=141., floor=2., bin_width=160., span=100000.,
                   acquisition_time=30., rng=None):
    edges = np.arange(0., span + bin_width, bin_width)
    centers = 0.5 * (edges[1:] + edges[:-1])
    expected = model_eval('gaussian', [amplitude, center, sigma, floor], centers)[0]
    counts = expected if rng is None else rng.poisson(expected)
    return Histogram(bin_width=bin_width, origin=0., counts=counts, acquisition_time=acquisition_time)


class TestHistogram(TestCase):

    def test_histogram_type(self):
        h = Histogram(bin_width=100, origin=-200, counts=[1, 2, 3, 4], acquisition_time=1.)
        np.testing.assert_array_equal(h.edges, [-200, -100, 0, 100, 200])
        np.testing.assert_array_equal(h.centers, [-150, -50, 50, 150])
        assert h.total == 10
        with pytest.raises(ValueError):
            Histogram(bin_width=0, origin=0, counts=[1], acquisition_time=1.)
        with pytest.raises(ValueError):
            Histogram(bin_width=1, origin=0, counts=[-1], acquisition_time=1.)
        with pytest.raises(ValueError):
            Histogram(bin_width=1, origin=0, counts=[], acquisition_time=1.)

    def test_start_stop_by_hand(self):
        stream = TagStream([1, 2, 2, 1, 2, 2], [0, 100, 250, 1000, 1050, 5000], 1e-8)
        h = build_start_stop_histogram(stream, 'signal', 'idler', 100, 1000)
        assert len(h.counts) == 10
        np.testing.assert_array_equal(h.counts, [1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
        assert h.acquisition_time == pytest.approx(1e-8)

        by_id = build_start_stop_histogram(stream, 1, 2, 100, 1000)
        np.testing.assert_array_equal(by_id.counts, h.counts)

    def test_invalid_binning(self):
        stream = TagStream([1, 2], [0, 100], 1e-8)
        with pytest.raises(ValueError):
            build_start_stop_histogram(stream, 'signal', 'idler', 0, 1000)
        with pytest.raises(ValueError):
            build_start_stop_histogram(stream, 'signal', 'idler', 2000, 1000)
        with pytest.raises(ValueError):
            build_start_stop_histogram(stream, 'signal', 'idler', 120, 1000, hardware_resolution=80)

    def test_hardware_bin_pairing(self):
        config = ExperimentConfig().with_overrides(power=0.05, duration=1.0, seed=5)
        stream = simulate_pairs(config)
        direct = build_start_stop_histogram(stream, 'signal', 'idler', 160, 100000)
        paired = build_start_stop_histogram(stream, 'signal', 'idler', 160, 100000, hardware_resolution=80,
                                            pair_hardware_bins=True)
        np.testing.assert_array_equal(direct.counts, paired.counts)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        duration_ps = 10 ** 7
        n = 2000
        times = np.concatenate([rng.integers(0, duration_ps, n), rng.integers(0, duration_ps, n)])
        channels = np.repeat([1, 2], n)
        order = np.lexsort((channels, times))
        stream = TagStream(channels[order], times[order], duration_ps / 1e12)

        h = build_start_stop_histogram(stream, 'signal', 'idler', 400, 50000)

        starts, stops = stream.channel_times('signal'), stream.channel_times('idler')
        delays = (stops[None, :] - starts[:, None]).ravel()
        delays = delays[(delays >= 0) & (delays < 50000)]
        np.testing.assert_array_equal(h.counts, np.bincount(delays // 400, minlength=125))


class TestCar(TestCase):

    def test_peak_fit_noiseless(self):
        h = peak_histogram()
        fit = fit_coincidence_peak(h)
        assert fit.param('center') == pytest.approx(20000., abs=1e-3)
        assert fit.param('sigma') == pytest.approx(141., rel=1e-5)
        assert fit.param('floor') == pytest.approx(2., rel=1e-5)
        assert fit.extra['fwhm'] == pytest.approx(FWHM_PER_SIGMA * 141., rel=1e-5)

    def test_peak_fit_poisson(self):
        rng = np.random.default_rng(2019)
        h = peak_histogram(rng=rng)
        fit = fit_coincidence_peak(h)
        assert abs(fit.param('center') - 20000.) < 4 * fit.err('center')
        assert abs(fit.param('sigma') - 141.) < 4 * fit.err('sigma')
        assert 0.28e3 < fit.extra['fwhm'] < 0.38e3
        assert fit.extra['off_peak_bins'] > 500

    def test_no_peak(self):
        rng = np.random.default_rng(7)
        flat = Histogram(bin_width=160, origin=0, counts=rng.poisson(200., 625), acquisition_time=1.)
        with pytest.raises(NoPeakError):
            fit_coincidence_peak(flat)
        empty = Histogram(bin_width=160, origin=0, counts=np.zeros(625, dtype=int), acquisition_time=1.)
        with pytest.raises(NoPeakError):
            fit_coincidence_peak(empty)
        sparse = np.zeros(625, dtype=int)
        sparse[[10, 300]] = 1
        with pytest.raises(NoPeakError):
            fit_coincidence_peak(Histogram(bin_width=160, origin=0, counts=sparse, acquisition_time=1.))

    def test_car_noiseless(self):
        h = peak_histogram()
        fit = fit_coincidence_peak(h)
        car = compute_car(h, fit)

        C = 400. * 141. * np.sqrt(2 * np.pi) * erf(1 / np.sqrt(2)) / 160.
        A = 2. * 2 * 141. / 160.
        assert car.C == pytest.approx(C, rel=1e-4)
        assert car.A == pytest.approx(A, rel=1e-4)
        assert car.car == pytest.approx(C / A, rel=1e-4)
        assert car.window == pytest.approx((20000. - 141., 20000. + 141.), abs=0.1)
        assert not car.lower_bound

    def test_car_lower_bound(self):
        h = peak_histogram(floor=0.)
        peak = FitResult(model='gaussian', param_names=('amplitude', 'center', 'sigma', 'floor'),
                         values=np.array([400., 20000., 141., 0.]), covariance=np.eye(4) * 1e-6,
                         residual_norm=0., chi2=0., dof=600, converged=True, iterations=1)
        with pytest.warns(UserWarning):
            car = compute_car(h, peak)
        assert car.lower_bound
        assert car.A == 0.
        assert car.car == pytest.approx(car.C)

    def test_car_uncertainty_scales_with_counts(self):
        rng = np.random.default_rng(11)
        short = peak_histogram(amplitude=100., floor=0.5, rng=rng)
        long = peak_histogram(amplitude=1000., floor=5., rng=rng)
        car_short = compute_car(short, fit_coincidence_peak(short))
        car_long = compute_car(long, fit_coincidence_peak(long))
        assert car_long.sigma / car_long.car < car_short.sigma / car_short.car

    def test_coincidence_rate_and_pgr(self):
        h = peak_histogram(floor=0., acquisition_time=10.)
        peak = fit_coincidence_peak(h)
        rate, sigma = coincidence_rate(h, peak)
        area = 400. * 141. * np.sqrt(2 * np.pi) / 160.
        assert rate == pytest.approx(area / 10., rel=1e-3)
        assert sigma == pytest.approx(np.sqrt(area) / 10., rel=1e-3)

        config = ExperimentConfig()
        pgr, pgr_sigma = scale_to_pgr(rate, sigma, config)
        t = config.signal_loss.total_transmittance * config.idler_loss.total_transmittance
        assert pgr == pytest.approx(rate / t)
        assert pgr_sigma == pytest.approx(sigma / t)

    def test_analytic_car(self):
        low = analytic_car(ExperimentConfig())
        high = analytic_car(ExperimentConfig().with_overrides(power=0.088))
        assert 9000 < low < 15000
        assert 350 < high < 800
        assert analytic_car(ExperimentConfig().with_overrides(power=0.04)) < low

    def test_simulated_car_matches_analytic(self):
        # CAR from about 11000 down to about 500; low powers integrate longer
        for seed, (power, duration) in enumerate([(0.0106, 60.), (0.02, 30.), (0.032, 10.), (0.052, 10.),
                                                  (0.088, 5.)]):
            config = ExperimentConfig().with_overrides(power=power, duration=duration, seed=seed)
            stream = simulate_pairs(config)
            h = build_start_stop_histogram(stream, 'signal', 'idler', 160, 100000, hardware_resolution=80,
                                           pair_hardware_bins=True)
            peak = fit_coincidence_peak(h)
            car = compute_car(h, peak)
            assert not car.lower_bound
            expected = analytic_car(config, window=2 * peak.param('sigma'), peak_fraction=erf(1 / np.sqrt(2)))
            assert abs(car.car - expected) < 3 * car.sigma, (power, car.car, car.sigma, expected)
            assert 0.28e3 < peak.extra['fwhm'] < 0.38e3


class TestG2(TestCase):

    def g2_stream(self):
        times = [900, 1000, 1100, 5000, 9000, 9500, 20000]
        channels = [4, 1, 3, 1, 1, 3, 4]
        return TagStream(channels, times, 1e-7, G2_CHANNELS)

    def test_count_triples_by_hand(self):
        counts = count_triples(self.g2_stream(), window=300)
        assert (counts.n_a, counts.n_b, counts.n_c) == (3, 2, 2)
        assert (counts.n_ab, counts.n_ac, counts.n_abc, counts.n_bc) == (1, 1, 1, 1)
        assert counts.N_A == pytest.approx(3e7)

    def test_symmetric_window(self):
        anchored = count_triples(self.g2_stream(), window=150)
        symmetric = count_triples(self.g2_stream(), window=150, symmetric=True)
        assert anchored.n_abc == 1
        assert symmetric.n_abc == 0

    def test_count_triples_errors(self):
        with pytest.raises(ValueError):
            count_triples(self.g2_stream(), window=0)
        with pytest.raises(ValueError):
            count_triples(TagStream([1, 2], [0, 10], 1e-8), window=100)

    def test_counts_invariants(self):
        with pytest.raises(ValueError):
            TripleCoincidenceCounts(10, 5, 5, 11, 2, 0, 0, 5000., 1.)
        with pytest.raises(ValueError):
            TripleCoincidenceCounts(10, 5, 5, 2, 2, 0, 3, 5000., 1.)

    def test_heralded_g2(self):
        t = TripleCoincidenceCounts(n_a=1000, n_b=500, n_c=500, n_ab=100, n_ac=80, n_bc=2, n_abc=2,
                                    window=5000., acquisition_time=10.)
        result = heralded_g2(t, detector_efficiency=0.65)
        assert result.g2 == pytest.approx(0.25)
        assert result.sigma == pytest.approx(0.25 * np.sqrt(1 / 2 + 1 / 1000 + 1 / 100 + 1 / 80))
        assert result.heralding_rate == pytest.approx(100.)
        assert result.klyshko == pytest.approx(0.1 / 0.65)
        # two triples over two BC coincidences: every heralded-arm detection has an A partner
        assert result.klyshko_alt == pytest.approx(0.5 * 1. * 500 / 1000 / 0.65, rel=1e-6)
        assert result.klyshko_alt_sigma == pytest.approx(result.klyshko_alt * np.sqrt(1 / 2 + 1 / 2), rel=1e-6)

    def test_alternative_klyshko_uses_bc_coincidences(self):
        def alt(n_bc):
            t = TripleCoincidenceCounts(n_a=100000, n_b=20000, n_c=20000, n_ab=1800, n_ac=1800, n_bc=n_bc,
                                        n_abc=3, window=5000., acquisition_time=100.)
            return heralded_g2(t, 0.65)

        assert alt(900).klyshko == alt(300).klyshko
        assert alt(300).klyshko_alt == pytest.approx(3 * alt(900).klyshko_alt, rel=1e-6)
        no_bc = alt(0)
        assert np.isnan(no_bc.klyshko_alt) and np.isnan(no_bc.klyshko_alt_sigma)
        assert no_bc.klyshko == pytest.approx(1800 / 100000 / 0.65)

    def test_g2_without_triples(self):
        t = TripleCoincidenceCounts(1000, 500, 500, 100, 80, 0, 0, 5000., 10.)
        result = heralded_g2(t)
        assert result.g2 == 0.
        assert result.sigma == pytest.approx(1000 / 8000)

    def test_g2_undefined(self):
        t = TripleCoincidenceCounts(1000, 500, 500, 0, 80, 0, 0, 5000., 10.)
        with pytest.raises(AnalysisError):
            heralded_g2(t)

    def test_uncorrelated_triples(self):
        rng = np.random.default_rng(1)
        duration_ps = 10 ** 11
        rates = {1: 1e6, 3: 1e6, 4: 1e6}
        channels, times = [], []
        for channel, rate in rates.items():
            n = rng.poisson(rate * 0.1)
            times.append(rng.integers(0, duration_ps, n))
            channels.append(np.full(n, channel))
        times, channels = np.concatenate(times), np.concatenate(channels)
        order = np.argsort(times, kind='stable')
        stream = TagStream(channels[order], times[order], 0.1, G2_CHANNELS)

        w = 20000
        counts = count_triples(stream, window=w)
        expected = 1e6 * (1e6 * 2 * w * 1e-12) ** 2 * 0.1
        assert abs(counts.n_abc - expected) < 5 * np.sqrt(expected)


class TestSweepFits(TestCase):

    def test_quadratic_sweep(self):
        rng = np.random.default_rng(9)
        p = np.array([0.0106, 0.02, 0.032, 0.052, 0.088])
        truth = 149e6 * p ** 2
        sigma = 0.02 * truth
        y = truth + rng.normal(0, sigma)
        fit = fit_power_sweep(list(zip(p, y, sigma)), 'quadratic')
        assert abs(fit.param('R') - 149e6) < 4 * fit.err('R')

    def test_sigmoid_sweep(self):
        p = np.array([0.0277, 0.04, 0.055, 0.07, 0.085, 0.1, 0.1222])
        y = 6. * p ** 2 / (1 + 6. * p ** 2)
        fit = fit_power_sweep(list(zip(p, y, 0.1 * y)), 'sigmoid')
        assert fit.param('a') == pytest.approx(6., rel=1e-5)

    def test_power_law_sweep(self):
        p = np.array([0.01, 0.02, 0.04, 0.06, 0.09])
        y = 3e6 * p ** 2 + 500.
        fit = fit_power_sweep(list(zip(p, y, np.sqrt(y))), 'power_law')
        assert fit.param('exponent') == pytest.approx(2., rel=1e-4)

    def test_invalid_sweeps(self):
        with pytest.raises(ValueError):
            fit_power_sweep([(0.01, 1., 0.1), (0.02, 4., 0.1)])
        with pytest.raises(ValueError):
            fit_power_sweep([(0.01, 1., 0.1)] * 3)
        with pytest.raises(ValueError):
            fit_power_sweep([(0.01, 1., 0.), (0.02, 4., 0.1), (0.03, 9., 0.1)])
        with pytest.raises(ValueError):
            fit_power_sweep([(0.01, 1., 0.1), (0.02, 4., 0.1), (0.03, 9., 0.1)], 'cubic')


class TestVerdicts(TestCase):

    def test_bell_threshold(self):
        assert bell_threshold(0.989, 0.006).passed
        assert not bell_threshold(0.72, 0.05).passed
        verdict = bell_threshold(0.75, 0.01)
        assert verdict.margin_sigma == pytest.approx((0.75 - BELL_BOUND) / 0.01)
        assert bell_threshold(0.8, 0.).margin_sigma == np.inf

    def test_bell_threshold_boundary(self):
        at_bound = bell_threshold(BELL_BOUND, 0.)
        assert not at_bound.passed
        assert at_bound.margin_sigma == 0.
        # v - sigma lands exactly on the bound
        touching = bell_threshold(0.75, 0.75 - BELL_BOUND)
        assert touching.value - touching.sigma == BELL_BOUND
        assert not touching.passed
        assert touching.margin_sigma == pytest.approx(1.)
        assert bell_threshold(0.75, 0.04).passed
        assert not bell_threshold(np.nextafter(BELL_BOUND, 0.), 0.).passed
        assert bell_threshold(np.nextafter(BELL_BOUND, 1.), 0.).passed

    def test_singles_flat(self):
        rng = np.random.default_rng(0)
        phases = np.linspace(0, 2 * np.pi, 24, endpoint=False)
        flat = singles_modulation(phases, np.full(24, 20000))
        assert flat.flat
        modulated = singles_modulation(phases, rng.poisson(20000 * (1 + 0.2 * np.cos(phases))))
        assert not modulated.flat
        assert modulated.depth == pytest.approx(0.2, abs=0.02)


@pytest.mark.slow
class TestPublishedValues(TestCase):

    def pairs_histogram(self, power, duration, seed=1550):
        config = ExperimentConfig().with_overrides(power=power, duration=duration, seed=seed)
        stream = simulate_pairs(config)
        return config, stream, build_start_stop_histogram(stream, 'signal', 'idler', 160, 100000,
                                                          hardware_resolution=80, pair_hardware_bins=True)

    def test_high_car_point(self):
        _, _, h = self.pairs_histogram(0.0106, 3000.)
        car = compute_car(h, fit_coincidence_peak(h))
        assert 8000 <= car.car <= 16000
        assert abs(car.car - 12105) < car.sigma + 1821

    def test_low_car_point_and_peak_width(self):
        _, _, h = self.pairs_histogram(0.088, 30.)
        peak = fit_coincidence_peak(h)
        car = compute_car(h, peak)
        assert 400 <= car.car <= 700
        assert peak.extra['fwhm'] == pytest.approx(315., rel=0.15)

    def test_singles_scale_quadratically(self):
        powers = [0.005, 0.01, 0.025, 0.05, 0.1, 0.2]
        points = []
        for i, p in enumerate(powers):
            _, stream, _ = self.pairs_histogram(p, 30., seed=i)
            count = stream.count('signal')
            points.append((p, count / 30., np.sqrt(count) / 30.))
        fit = fit_power_sweep(points, 'power_law')
        assert fit.param('exponent') == pytest.approx(2., abs=0.05)

    def test_pgr_recovery(self):
        points = []
        for i, p in enumerate([0.0106, 0.02, 0.032, 0.052, 0.088]):
            config, _, h = self.pairs_histogram(p, 30., seed=i)
            rate, sigma = coincidence_rate(h, fit_coincidence_peak(h))
            points.append((p,) + scale_to_pgr(rate, sigma, config))
        fit = fit_power_sweep(points, 'quadratic')
        assert fit.param('R') == pytest.approx(149e6, rel=0.05)

    def test_heralded_g2_points(self):
        low = ExperimentConfig().with_overrides(power=0.0277, duration=100., seed=1)
        counts = count_triples(simulate_heralded_g2(low), window=5000)
        assert counts.N_A == pytest.approx(18000., rel=0.1)
        result = heralded_g2(counts, 0.65)
        assert result.g2 < 0.02
        assert 0.025 <= result.klyshko <= 0.045
        assert abs(result.klyshko - result.klyshko_alt) < 3 * np.hypot(result.klyshko_sigma,
                                                                      result.klyshko_alt_sigma)

        high = ExperimentConfig().with_overrides(power=0.1222, duration=20., seed=2)
        result = heralded_g2(count_triples(simulate_heralded_g2(high), window=5000), 0.65)
        assert 0.06 <= result.g2 <= 0.16
