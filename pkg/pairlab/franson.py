"""
Franson interferometry with unbalanced delay-line interferometers (DLIs): path weights of the
short/long combinations and histogram-level synthesis of the three-peak coincidence pattern.

Delays are measured idler minus signal, so the short(signal)-long(idler) peak sits at +delay and
long-short at -delay. Only one output port of each DLI is detected.
"""

import logging
import warnings
import numpy as np
from scipy.stats import norm
from dataclasses import dataclass, field, replace
from pairlab.analysis import Histogram
from pairlab.model import ExperimentConfig
from pairlab.util import experiment_config, ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DliParams:
    """
    Delay-line interferometer.

    Attributes:
    fsr (float): free spectral range (GHz); the arm delay is 1 / fsr
    extinction_db (float): peak-to-valley extinction of the fringe (dB)
    phase (float): phase setting (rad)
    voltage_per_period (float): heater volts per 2 pi of phase
    """

    fsr: float = 2.5
    extinction_db: float = 25.0
    phase: float = 0.0
    voltage_per_period: float = 7.82

    def __post_init__(self):
        if self.fsr <= 0:
            raise ValueError(f'FSR must be positive, got {self.fsr} GHz')
        if self.extinction_db <= 0:
            raise ValueError('Extinction ratio must be positive dB')
        if not np.isfinite(self.phase):
            raise ValueError('DLI phase must be finite')
        if self.voltage_per_period <= 0:
            raise ValueError('voltage_per_period must be positive')

    @property
    def delay(self):
        """Arm delay (ps)."""
        return 1e3 / self.fsr

    @property
    def path_amplitudes(self):
        """
        Short and long path amplitudes into the detected port, with a_s^2 + a_l^2 = 1/2.

        A fringe with power extinction ER = ((a_s + a_l) / (a_s - a_l))^2 has the amplitude ratio
        a_l / a_s = (sqrt(ER) - 1) / (sqrt(ER) + 1).
        """
        root = 10 ** (self.extinction_db / 20)
        ratio = (root - 1) / (root + 1)
        short = np.sqrt(0.5 / (1 + ratio ** 2))
        return short, ratio * short

    def check_coherence(self, tau):
        if self.delay < 3 * tau:
            warnings.warn(f'DLI delay {self.delay:.0f} ps is shorter than 3x the photon lifetime ({tau:.0f} ps); '
                          'short-long peaks will overlap the central peak')

    def phase_to_voltage(self, phase):
        return np.asarray(phase) * self.voltage_per_period / (2 * np.pi)

    def voltage_to_phase(self, voltage):
        return np.asarray(voltage) * 2 * np.pi / self.voltage_per_period


@dataclass(frozen=True)
class FransonConfig:
    base: ExperimentConfig = field(default_factory=ExperimentConfig)
    dli_signal: DliParams = field(default_factory=DliParams)
    dli_idler: DliParams = field(default_factory=DliParams)
    folded: bool = True
    true_visibility: float = 0.99
    # pairs/s feeding the interferometers; None uses R * P^2 at pump_power
    pair_rate: float = 68000.
    pump_power: float = 0.05
    acquisition_time: float = 5.0
    bin_width: int = 80
    span: int = 10000

    def __post_init__(self):
        if not 0 <= self.true_visibility <= 1:
            raise ValueError(f'true_visibility must be in [0, 1], got {self.true_visibility}')
        if self.pair_rate is not None and self.pair_rate < 0:
            raise ValueError('pair_rate must be non-negative')
        if self.acquisition_time <= 0:
            raise ValueError('Acquisition time must be positive')
        if self.bin_width <= 0 or self.span < self.bin_width:
            raise ValueError('Need 0 < bin_width <= span')

    @property
    def idler_dli(self):
        # folded: both photons pass the same interferometer
        return self.dli_signal if self.folded else self.dli_idler

    @property
    def experiment(self):
        return self.base.with_overrides(power=self.pump_power, duration=self.acquisition_time)

    @property
    def flux(self):
        return self.experiment.pgr if self.pair_rate is None else self.pair_rate

    def fringe_phase(self, phase, idler_phase=None):
        """Two-photon phase: 2 phi folded, phi_s + phi_i unfolded."""
        if self.folded:
            return 2 * np.asarray(phase)
        idler_phase = self.dli_idler.phase if idler_phase is None else idler_phase
        return np.asarray(phase) + idler_phase


@dataclass(frozen=True, eq=False)
class FransonPoint:
    phase: float
    voltage: float
    fringe_phase: float
    histogram: Histogram
    singles_signal: int
    singles_idler: int


def franson_path_weights(cfg):
    """
    Joint detection probabilities of the short/long path combinations.

    With ideal 50/50 couplers every path pair carries amplitude 1/4: the side peaks weigh 1/16 each and
    the central peak (1 + V cos Phi) / 8. Finite extinction unbalances the short and long amplitudes, which
    moves weight between the side and central peaks. The fringe contrast stays the configured
    true_visibility: it describes the whole apparatus, the interferometer imbalance included, so
    25 dB interferometers do not cap it at their two-photon limit 2 r^2 / (1 + r^4) of about 0.975.

    Args:
    cfg (FransonConfig): interferometer configuration

    Returns:
    w_short_long (float): weight of the +delay peak
    w_long_short (float): weight of the -delay peak
    w_central (callable): central-peak weight as a function of the two-photon phase Phi
    """

    a_s, a_l = cfg.dli_signal.path_amplitudes
    b_s, b_l = cfg.idler_dli.path_amplitudes
    v = cfg.true_visibility
    central = a_s ** 2 * b_s ** 2 + a_l ** 2 * b_l ** 2

    def w_central(fringe_phase):
        return central * (1 + v * np.cos(fringe_phase))

    return a_s ** 2 * b_l ** 2, a_l ** 2 * b_s ** 2, w_central


def _rates(cfg):
    experiment = cfg.experiment
    t_s = experiment.signal_loss.total_transmittance
    t_i = experiment.idler_loss.total_transmittance
    noise_s = experiment.noise_rate(experiment.signal_loss)
    noise_i = experiment.noise_rate(experiment.idler_loss)
    # half of each photon stream leaves by the undetected port
    singles_s = 0.5 * cfg.flux * t_s + noise_s
    singles_i = 0.5 * cfg.flux * t_i + noise_i
    return cfg.flux * t_s * t_i, singles_s, singles_i


def expected_franson_counts(cfg, fringe_phase):
    """
    Expected coincidence counts per bin at one two-photon phase.

    Args:
    cfg (FransonConfig): interferometer configuration
    fringe_phase (float): two-photon phase Phi (rad)

    Returns:
    edges (numpy.ndarray): bin edges (ps), histogram centred on zero delay
    expected (numpy.ndarray): expected counts per bin
    """

    delay = cfg.dli_signal.delay
    sigma = cfg.base.correlation_sigma
    n_half = int(cfg.span // cfg.bin_width)
    edges = cfg.bin_width * np.arange(-n_half, n_half + 1, dtype=float)

    coincidences, singles_s, singles_i = _rates(cfg)
    pairs = coincidences * cfg.acquisition_time
    w_sl, w_ls, w_central = franson_path_weights(cfg)

    expected = np.full(len(edges) - 1, singles_s * singles_i * cfg.bin_width * 1e-12 * cfg.acquisition_time)
    for weight, position in ((w_ls, -delay), (float(w_central(fringe_phase)), 0.), (w_sl, delay)):
        expected += pairs * weight * np.diff(norm.cdf(edges, loc=position, scale=sigma))
    return edges, expected


def simulate_franson(cfg, phase_grid, seed=None, idler_phase=None, spawn_key=()):
    """
    Histogram-level Franson sweep: Poisson-noised three-peak histograms and flat singles per phase.

    Args:
    cfg (FransonConfig): interferometer configuration
    phase_grid (array-like): swept signal-DLI phases (rad)
    seed (int): master seed; point i uses SeedSequence(seed, spawn_key=spawn_key + (i,)); defaults to the base config seed
    idler_phase (float): fixed idler-DLI phase for unfolded sweeps; defaults to cfg.dli_idler.phase
    spawn_key (tuple): prefix of the per-point spawn key, distinguishing several sweeps under one seed

    Returns:
    points (list): FransonPoint per phase
    """

    phase_grid = np.atleast_1d(np.asarray(phase_grid, dtype=float))
    if len(phase_grid) == 0:
        raise ValueError('Phase grid is empty')
    if not np.all(np.isfinite(phase_grid)):
        raise ValueError('Phase grid contains non-finite values')

    cfg.dli_signal.check_coherence(cfg.base.resonator.lifetime_tau)
    seed = cfg.base.rng_seed if seed is None else int(seed)
    _, singles_s, singles_i = _rates(cfg)

    points = []
    for i, phase in enumerate(phase_grid):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(spawn_key) + (i,)))
        fringe = float(cfg.fringe_phase(phase, idler_phase))
        edges, expected = expected_franson_counts(cfg, fringe)
        hist = Histogram(bin_width=cfg.bin_width, origin=edges[0], counts=rng.poisson(expected),
                         acquisition_time=cfg.acquisition_time)
        points.append(FransonPoint(phase=float(phase),
                                   voltage=float(cfg.dli_signal.phase_to_voltage(phase)),
                                   fringe_phase=fringe,
                                   histogram=hist,
                                   singles_signal=int(rng.poisson(singles_s * cfg.acquisition_time)),
                                   singles_idler=int(rng.poisson(singles_i * cfg.acquisition_time))))
    log.debug('simulated %d franson points (folded=%s)', len(points), cfg.folded)
    return points


def phase_grid(n, span=2 * np.pi):
    if n < 1:
        raise ValueError('Need at least one phase point')
    return np.linspace(0., span, int(n), endpoint=False)


def franson_config_from_dict(config, folded=None):
    """
    Build a FransonConfig from the resolved config dict.

    Args:
    config (dict): resolved config (see util.load_config)
    folded (bool): override config['franson']['folded']

    Returns:
    cfg (FransonConfig): interferometer configuration
    """

    section = config['franson']
    folded = section['folded'] if folded is None else folded
    # volts per full fringe; a folded fringe is half a DLI phase period
    volts = 2 * section['volts_per_period_folded'] if folded else section['volts_per_period_unfolded']
    try:
        dli = DliParams(fsr=section['fsr'], extinction_db=section['extinction_db'], voltage_per_period=volts)
        idler_phases = section['idler_phases'] or [0.]
        return FransonConfig(base=experiment_config(config),
                             dli_signal=dli,
                             dli_idler=replace(dli, phase=float(idler_phases[0])),
                             folded=bool(folded),
                             true_visibility=section['true_visibility'],
                             pair_rate=section['pair_rate'],
                             pump_power=section['pump_power'],
                             acquisition_time=section['acquisition_time'],
                             bin_width=section['bin_width'],
                             span=section['span'])
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f'Invalid franson configuration: {e}')
