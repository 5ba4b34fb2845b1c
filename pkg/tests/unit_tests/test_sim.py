import pytest
import numpy as np
from unittest import TestCase
from dataclasses import replace
from pairlab.model import ExperimentConfig, expected_rates
from pairlab.util import EventBudgetError
from pairlab.sim import (TagStream, merge_streams, check_event_budget, simulate_pairs, simulate_heralded_g2,
                         JitterModel, PAIRS_CHANNELS, G2_CHANNELS, _apply_dead_time, _isolate)


def short_config(power=0.05, duration=1.0, seed=11, **detection):
    config = ExperimentConfig().with_overrides(power=power, duration=duration, seed=seed)
    if detection:
        config = replace(config, detection=replace(config.detection, **detection))
    return config


class TestTagStream(TestCase):

    def test_validation(self):
        with pytest.raises(ValueError):
            TagStream([1, 2], [10], 1.)
        with pytest.raises(ValueError):
            TagStream([1, 2], [20, 10], 1.)
        with pytest.raises(ValueError):
            TagStream([1], [10], 0.)
        with pytest.raises(ValueError):
            TagStream([1], [2 * 10 ** 12], 1.)
        with pytest.raises(ValueError):
            TagStream([7], [10], 1.)

    def test_read_only_and_accessors(self):
        stream = TagStream([1, 2, 1], [5, 7, 9], 1e-6)
        with pytest.raises(ValueError):
            stream.times[0] = 3
        assert len(stream) == 3
        assert stream.count('signal') == 2
        assert stream.rate('idler') == pytest.approx(1e6)
        np.testing.assert_array_equal(stream.channel_times('signal'), [5, 9])
        assert stream.channel_of('idler') == 2
        with pytest.raises(ValueError):
            stream.channel_of('herald_b')

    def test_merge_streams(self):
        a = TagStream([1, 1], [10, 30], 1e-6, {1: 'signal'})
        b = TagStream([2, 2], [10, 20], 1e-6, {2: 'idler'})
        merged = merge_streams(a, b)
        np.testing.assert_array_equal(merged.times, [10, 10, 20, 30])
        np.testing.assert_array_equal(merged.channels, [1, 2, 2, 1])
        assert merged.channel_map == {1: 'signal', 2: 'idler'}

        with pytest.raises(ValueError):
            merge_streams(a, a)
        with pytest.raises(ValueError):
            merge_streams(a, TagStream([2], [10], 2e-6, {2: 'idler'}))

    def test_thin(self):
        stream = simulate_pairs(short_config())
        thinned = stream.thin('signal', 0.5, seed=3)
        assert thinned.count('idler') == stream.count('idler')
        n = stream.count('signal')
        assert abs(thinned.count('signal') - 0.5 * n) < 5 * np.sqrt(0.25 * n)
        assert thinned == stream.thin('signal', 0.5, seed=3)


class TestSimulation(TestCase):

    def test_deterministic_under_seed(self):
        config = short_config()
        assert simulate_pairs(config) == simulate_pairs(config)
        other = simulate_pairs(config.with_overrides(seed=12))
        assert not np.array_equal(other.times[:100], simulate_pairs(config).times[:100])

    def test_pairs_stream_layout(self):
        config = short_config()
        stream = simulate_pairs(config)
        assert stream.channel_map == PAIRS_CHANNELS
        assert np.all(np.diff(stream.times) >= 0)
        assert stream.times[0] >= 0 and stream.times[-1] <= config.duration_ps
        assert stream.seed == config.rng_seed

    def test_pairs_singles_rates(self):
        config = short_config(power=0.05, duration=2.0)
        stream = simulate_pairs(config)
        rates = expected_rates(config, 'pairs')
        for role in ('signal', 'idler'):
            expected = rates[role] * config.acquisition_time
            assert abs(stream.count(role) - expected) < 5 * np.sqrt(expected)

    def test_zero_power_leaves_only_noise(self):
        config = short_config(power=0., duration=2.0)
        stream = simulate_pairs(config)
        expected = 500. * 2.0
        assert abs(stream.count('signal') - expected) < 5 * np.sqrt(expected)

    def test_noise_free_zero_power_is_empty(self):
        config = short_config(power=0.)
        config = replace(config, signal_loss=replace(config.signal_loss, dark_count_rate=0.),
                         idler_loss=replace(config.idler_loss, dark_count_rate=0.))
        stream = simulate_pairs(config)
        assert len(stream) == 0

    def test_coincidence_delay_distribution(self):
        config = short_config(power=0.02, duration=5.0, idler_delay=0)
        config = replace(config, signal_loss=replace(config.signal_loss, dark_count_rate=0., noise_coefficient=0.),
                         idler_loss=replace(config.idler_loss, dark_count_rate=0., noise_coefficient=0.))
        stream = simulate_pairs(config)
        s, i = stream.channel_times('signal'), stream.channel_times('idler')
        j = np.clip(np.searchsorted(i, s), 1, len(i) - 1)
        nearest = np.where(np.abs(i[j] - s) < np.abs(i[j - 1] - s), i[j] - s, i[j - 1] - s)
        delays = nearest[np.abs(nearest) < 2000]
        # symmetric double exponential plus two jitters
        assert abs(np.mean(delays)) < 10.
        assert np.std(delays) == pytest.approx(config.correlation_sigma, rel=0.08)

    def test_g2_stream(self):
        config = short_config(power=0.05, duration=2.0)
        stream = simulate_heralded_g2(config)
        assert stream.channel_map == G2_CHANNELS
        rates = expected_rates(config, 'g2')
        for role, key in (('signal', 'A'), ('herald_b', 'B'), ('herald_c', 'C')):
            expected = rates[key] * config.acquisition_time
            assert abs(stream.count(role) - expected) < 5 * np.sqrt(expected)

    def test_event_budget(self):
        with pytest.raises(EventBudgetError):
            check_event_budget(2e8, 1e8)
        check_event_budget(10, 1e8)
        config = replace(short_config(), memory_cap=10)
        with pytest.raises(EventBudgetError):
            simulate_pairs(config)

    def test_dead_time(self):
        times = np.array([0, 10, 20, 100, 105, 300], dtype=np.int64)
        np.testing.assert_array_equal(_apply_dead_time(times, 50), [0, 100, 300])
        np.testing.assert_array_equal(_apply_dead_time(times, 0), times)

    def test_isolate(self):
        times = np.array([0, 10, 1000, 3000, 3005], dtype=np.int64)
        np.testing.assert_array_equal(_isolate(times, 100), [1000])

    def test_isolated_statistics(self):
        config = short_config(power=0.05, pair_statistics='isolated', isolation=50000)
        stream = simulate_pairs(config)
        assert len(stream) > 0

    def test_jitter_model(self):
        with pytest.raises(ValueError):
            JitterModel(-1.)
        delays = JitterModel(0.).photon_delays(np.random.default_rng(3), 20000, 75.7)
        assert delays.dtype == np.int64
        assert (delays >= 0).all()
        assert abs(delays.mean() - 75.7) < 3.
        wide = JitterModel(90.).photon_delays(np.random.default_rng(3), 20000, 75.7)
        assert abs(wide.std() - np.hypot(75.7, 90.)) < 5.
