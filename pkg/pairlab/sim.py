"""
Monte-Carlo generation of detector time-tag streams for the two-detector pair experiment and the
three-detector heralded g2 experiment.

Pairs are emitted as a Poisson process at R * P^2. Each photon leaves the ring after an exponential
delay set by the photon lifetime and picks up Gaussian detector jitter, so the signal-idler delay
follows a double exponential convolved with two jitters. Photons survive their channel's loss budget
independently; uncorrelated noise counts are superposed on every channel. A run is a pure function of
(config, seed): every random draw comes from a child of ``numpy.random.SeedSequence(seed)``.
"""

import logging
import warnings
import psutil
import numpy as np
from dataclasses import dataclass, field
from pairlab.model import expected_rates
from pairlab.util import EventBudgetError

log = logging.getLogger(__name__)

# fixed channel ids shared by every experiment and the tag file format
CHANNEL_ROLES = {1: 'signal', 2: 'idler', 3: 'herald_b', 4: 'herald_c'}
ROLE_CHANNELS = {v: k for k, v in CHANNEL_ROLES.items()}
PAIRS_CHANNELS = {1: 'signal', 2: 'idler'}
G2_CHANNELS = {1: 'signal', 3: 'herald_b', 4: 'herald_c'}
BYTES_PER_EVENT = 9


@dataclass(frozen=True)
class JitterModel:
    sigma_per_detector: float = 65.0

    def __post_init__(self):
        if self.sigma_per_detector < 0:
            raise ValueError('Jitter sigma must be non-negative')

    def photon_delays(self, rng, n, tau):
        # ring out-coupling delay plus detector jitter
        return np.rint(rng.exponential(tau, n) + rng.normal(0., self.sigma_per_detector, n)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class TagStream:
    """
    Time-ordered detection events.

    Attributes:
    channels (numpy.ndarray): uint8 channel id per event
    times (numpy.ndarray): int64 detection time per event (ps)
    duration (float): acquisition time (s)
    channel_map (dict): channel id -> role name
    seed (int): seed of the run that produced the stream
    """

    channels: np.ndarray
    times: np.ndarray
    duration: float
    channel_map: dict = field(default_factory=lambda: dict(PAIRS_CHANNELS))
    seed: int = 0

    def __post_init__(self):
        channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        times = np.ascontiguousarray(self.times, dtype=np.int64)
        if channels.shape != times.shape or channels.ndim != 1:
            raise ValueError('channels and times must be 1-D arrays of equal length')
        if self.duration <= 0:
            raise ValueError(f'Duration must be positive, got {self.duration} s')
        if len(times):
            if np.any(np.diff(times) < 0):
                raise ValueError('Events must be sorted by time')
            if times[0] < 0 or times[-1] > self.duration_ps:
                raise ValueError('Event times must lie within [0, duration]')
            unknown = set(np.unique(channels).tolist()) - set(self.channel_map)
            if unknown:
                raise ValueError(f'Events on channels {sorted(unknown)} missing from the channel map')
        channels.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, 'channels', channels)
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'channel_map', dict(self.channel_map))

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        return (isinstance(other, TagStream)
                and self.duration_ps == other.duration_ps
                and self.channel_map == other.channel_map
                and np.array_equal(self.channels, other.channels)
                and np.array_equal(self.times, other.times))

    @property
    def duration_ps(self):
        return int(round(self.duration * 1e12))

    def channel_of(self, role):
        for channel, name in self.channel_map.items():
            if name == role:
                return channel
        raise ValueError(f'No "{role}" channel in stream (channels: {self.channel_map})')

    def channel_times(self, role):
        return self.times[self.channels == self.channel_of(role)]

    def count(self, role):
        return int(np.count_nonzero(self.channels == self.channel_of(role)))

    def rate(self, role):
        return self.count(role) / self.duration

    def thin(self, role, probability, seed):
        """
        Keep each event of one role independently with the given probability.

        Args:
        role (str): channel role to thin
        probability (float): survival probability
        seed (int): seed for the thinning draw

        Returns:
        stream (TagStream): thinned copy
        """

        rng = np.random.default_rng(seed)
        on_role = self.channels == self.channel_of(role)
        keep = ~on_role | (rng.random(len(self)) < probability)
        return TagStream(self.channels[keep], self.times[keep], self.duration, self.channel_map, self.seed)


def merge_streams(a, b):
    """
    Time-ordered union of two streams recorded over the same duration on different channels.

    Args:
    a (TagStream): first stream
    b (TagStream): second stream

    Returns:
    stream (TagStream): merged stream, ties broken by (time, channel)
    """

    if a.duration_ps != b.duration_ps:
        raise ValueError(f'Cannot merge streams of different durations ({a.duration} s, {b.duration} s)')
    overlap = set(a.channel_map) & set(b.channel_map)
    if overlap:
        raise ValueError(f'Cannot merge streams sharing channel ids {sorted(overlap)}')
    return _sorted_stream(np.concatenate([a.channels, b.channels]),
                          np.concatenate([a.times, b.times]),
                          a.duration, {**a.channel_map, **b.channel_map}, a.seed)


def _sorted_stream(channels, times, duration, channel_map, seed):
    order = np.lexsort((channels, times))
    return TagStream(channels[order], times[order], duration, channel_map, seed)


def check_event_budget(expected_events, cap):
    """
    Refuse simulations whose expected event count exceeds the cap; warn when the arrays will not fit in memory.

    Args:
    expected_events (float): expected number of detection events
    cap (int): maximum allowed number of events
    """

    if expected_events > cap:
        raise EventBudgetError(f'Simulation would produce about {expected_events:.3g} events, above the cap of '
                               f'{cap:.3g}; shorten the acquisition time or split the run')
    # times, channels and the sort permutation
    needed = expected_events * (BYTES_PER_EVENT + 8) * 2
    available = psutil.virtual_memory().available
    if needed > available:
        warnings.warn(f'Simulation needs about {needed / 1e9:.1f} GB, only {available / 1e9:.1f} GB available')


def _child_rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def _isolate(times, isolation):
    """Drop every emission closer than ``isolation`` ps to a neighbour."""
    if len(times) < 2:
        return times
    times = np.sort(times)
    gaps = np.diff(times)
    keep = np.ones(len(times), dtype=bool)
    keep[1:] &= gaps > isolation
    keep[:-1] &= gaps > isolation
    return times[keep]


def _apply_dead_time(times, dead_time):
    """Non-paralyzable dead time on one channel's sorted times."""
    if dead_time <= 0 or len(times) < 2:
        return times
    kept = []
    i, n = 0, len(times)
    while i < n:
        kept.append(i)
        i = np.searchsorted(times, times[i] + dead_time, side='left')
    return times[kept]


def _noise_times(rng, rate, duration_ps):
    n = rng.poisson(rate * duration_ps * 1e-12) if rate > 0 else 0
    return rng.integers(0, duration_ps, size=n, endpoint=True, dtype=np.int64)


def _emit(config, rng, survive_any):
    """Emission times (ps) of the pairs with at least one detected photon."""
    duration_ps = config.duration_ps
    n = rng.poisson(config.pgr * config.acquisition_time * survive_any) if survive_any > 0 else 0
    times = rng.integers(0, duration_ps, size=n, endpoint=True, dtype=np.int64)
    if config.detection.pair_statistics == 'isolated':
        times = _isolate(times, config.detection.isolation)
    return times


def _assemble(config, per_channel, channel_map):
    duration_ps = config.duration_ps
    channels, times = [], []
    for channel, t in per_channel.items():
        t = np.sort(t[(t >= 0) & (t <= duration_ps)])
        t = _apply_dead_time(t, config.detection.dead_time)
        channels.append(np.full(len(t), channel, dtype=np.uint8))
        times.append(t)
    stream = _sorted_stream(np.concatenate(channels), np.concatenate(times),
                            config.acquisition_time, channel_map, config.rng_seed)
    log.debug('simulated %d events over %g s', len(stream), config.acquisition_time)
    return stream


def simulate_pairs(config):
    """
    Simulate the two-detector experiment: signal on the start channel, idler on the stop channel.

    Args:
    config (ExperimentConfig): experiment configuration

    Returns:
    stream (TagStream): events on channels 1 (signal) and 2 (idler)
    """

    rates = expected_rates(config, 'pairs')
    check_event_budget((rates['signal'] + rates['idler']) * config.acquisition_time, config.memory_cap)

    t_s = config.signal_loss.total_transmittance
    t_i = config.idler_loss.total_transmittance
    survive_any = 1 - (1 - t_s) * (1 - t_i)
    rng_pairs, rng_signal, rng_idler, rng_noise_s, rng_noise_i = _child_rngs(config.rng_seed, 5)

    emitted = _emit(config, rng_pairs, survive_any)
    # split the surviving pairs into both / signal-only / idler-only detections
    u = rng_pairs.random(len(emitted)) * survive_any
    both = u < t_s * t_i
    signal_only = (u >= t_s * t_i) & (u < t_s)
    has_signal = both | signal_only
    has_idler = ~signal_only

    tau = config.resonator.lifetime_tau
    jitter = JitterModel(config.detection.jitter_sigma)
    signal = emitted + jitter.photon_delays(rng_signal, len(emitted), tau)
    idler = emitted + jitter.photon_delays(rng_idler, len(emitted), tau) + config.detection.idler_delay

    per_channel = {
        1: np.concatenate([signal[has_signal],
                           _noise_times(rng_noise_s, rates['noise_signal'], config.duration_ps)]),
        2: np.concatenate([idler[has_idler],
                           _noise_times(rng_noise_i, rates['noise_idler'], config.duration_ps)]),
    }
    return _assemble(config, per_channel, PAIRS_CHANNELS)


def simulate_heralded_g2(config):
    """
    Simulate the heralded g2 experiment: signal photons herald on A, the partner photon is routed by a
    50/50 splitter to B or C and then thinned by that arm's loss budget.

    Args:
    config (ExperimentConfig): experiment configuration

    Returns:
    stream (TagStream): events on channels 1 (A), 3 (B) and 4 (C)
    """

    rates = expected_rates(config, 'g2')
    check_event_budget((rates['A'] + rates['B'] + rates['C']) * config.acquisition_time, config.memory_cap)

    t_a = config.signal_loss.total_transmittance
    t_b = 0.5 * config.herald_split_b_loss.total_transmittance
    t_c = 0.5 * config.herald_split_c_loss.total_transmittance
    t_partner = t_b + t_c
    survive_any = 1 - (1 - t_a) * (1 - t_partner)
    rng_pairs, rng_a, rng_partner, rng_na, rng_nb, rng_nc = _child_rngs(config.rng_seed, 6)

    emitted = _emit(config, rng_pairs, survive_any)
    u = rng_pairs.random(len(emitted)) * survive_any
    both = u < t_a * t_partner
    herald_only = (u >= t_a * t_partner) & (u < t_a)
    has_a = both | herald_only
    has_partner = ~herald_only
    # one photon, one splitter output
    to_b = rng_partner.random(len(emitted)) * t_partner < t_b

    tau = config.resonator.lifetime_tau
    jitter = JitterModel(config.detection.jitter_sigma)
    herald = emitted + jitter.photon_delays(rng_a, len(emitted), tau)
    partner = emitted + jitter.photon_delays(rng_partner, len(emitted), tau)

    per_channel = {
        1: np.concatenate([herald[has_a], _noise_times(rng_na, rates['noise_A'], config.duration_ps)]),
        3: np.concatenate([partner[has_partner & to_b],
                           _noise_times(rng_nb, rates['noise_B'], config.duration_ps)]),
        4: np.concatenate([partner[has_partner & ~to_b],
                           _noise_times(rng_nc, rates['noise_C'], config.duration_ps)]),
    }
    return _assemble(config, per_channel, G2_CHANNELS)
