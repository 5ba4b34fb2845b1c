"""
Physical parameters of the microring pair source and detection chain, and the closed-form quantities derived from them.

Units: wavelengths in nm, powers in mW, times in ps (durations in s), rates in Hz, PGR coefficient in MHz/mW^2.
All types are frozen; use ``dataclasses.replace`` (or ``ExperimentConfig.with_overrides``) to derive variants.
"""

import numpy as np
from dataclasses import dataclass, field, replace, asdict

SPEED_OF_LIGHT = 299792458.0  # m/s
PUBLISHED_SPECTRAL_BRIGHTNESS = 1.5e8  # pairs/s/GHz/mW^2, as quoted alongside R = 149 MHz/mW^2
PAIR_STATISTICS = ('poisson', 'isolated')


def db_to_transmittance(loss_db):
    """
    Convert an insertion loss to a power transmittance.

    Args:
    loss_db (float or array-like): loss in dB (>= 0)

    Returns:
    transmittance (float or numpy.ndarray): 10 ** (-loss_db / 10)
    """

    loss = np.asarray(loss_db, dtype=float)
    if np.any(~np.isfinite(loss)) or np.any(loss < 0):
        raise ValueError(f'Loss must be a finite, non-negative number of dB, got {loss_db}')
    out = 10 ** (-loss / 10)
    return float(out) if out.ndim == 0 else out


def chain_transmittance(losses_db, efficiency=1.0):
    """
    Total transmittance of a chain of lossy elements followed by a detector.

    Args:
    losses_db (iterable): element losses in dB, any order
    efficiency (float): detector efficiency

    Returns:
    transmittance (float): product of the element transmittances and the efficiency
    """

    return float(np.prod([db_to_transmittance(x) for x in losses_db])) * efficiency


def resonance_derived(loaded_q, center_wavelength):
    """
    Resonance linewidth and photon lifetime from the loaded Q.

    Args:
    loaded_q (float): loaded quality factor
    center_wavelength (float): resonance wavelength (nm)

    Returns:
    fwhm (float): linewidth (GHz)
    lifetime (float): photon lifetime 1 / (2 pi fwhm) (ps)
    """

    if loaded_q <= 0:
        raise ValueError(f'Loaded Q must be positive, got {loaded_q}')
    if center_wavelength <= 0:
        raise ValueError(f'Wavelength must be positive, got {center_wavelength}')
    nu = SPEED_OF_LIGHT / (center_wavelength * 1e-9)
    fwhm_hz = nu / loaded_q
    return fwhm_hz / 1e9, 1e12 / (2 * np.pi * fwhm_hz)


def pair_generation_rate(source):
    """
    On-chip pair generation rate PGR = R * P^2.

    Args:
    source (SourceParams): source parameters

    Returns:
    pgr (float): pairs per second (Hz)
    """

    if source.pump_power < 0:
        raise ValueError(f'Pump power must be non-negative, got {source.pump_power} mW')
    return source.pgr_coefficient * 1e6 * source.pump_power ** 2


def brightness(pgr, fwhm, power=None):
    """
    Brightness (PGR per unit linewidth) and spectral brightness (further per mW^2 of pump).

    Args:
    pgr (float): pair generation rate (Hz)
    fwhm (float): emission linewidth (GHz)
    power (float): pump power (mW); needed for the spectral form

    Returns:
    brightness (float): pairs/s/GHz
    spectral_brightness (float or None): pairs/s/GHz/mW^2, None when no power is given
    """

    if fwhm <= 0:
        raise ValueError(f'Linewidth must be positive, got {fwhm} GHz')
    value = pgr / fwhm
    if power is None:
        return value, None
    if power <= 0:
        raise ValueError('Spectral brightness is undefined at zero pump power')
    return value, pgr / (fwhm * power ** 2)


@dataclass(frozen=True)
class ResonatorParams:
    loaded_q: float = 9.2e4
    intrinsic_q: float = 9.0e5
    center_wavelength: float = 1550.0

    def __post_init__(self):
        if self.loaded_q <= 0 or self.intrinsic_q <= 0:
            raise ValueError('Quality factors must be positive')
        if self.loaded_q > self.intrinsic_q:
            raise ValueError(f'Loaded Q ({self.loaded_q:g}) cannot exceed intrinsic Q ({self.intrinsic_q:g})')

    @property
    def fwhm(self):
        return resonance_derived(self.loaded_q, self.center_wavelength)[0]

    @property
    def lifetime_tau(self):
        return resonance_derived(self.loaded_q, self.center_wavelength)[1]

    @property
    def linewidth_nm(self):
        return self.center_wavelength / self.loaded_q


def coupling_regime(resonator):
    """
    Split the loaded Q into its external (coupling) part and classify the coupling.

    Args:
    resonator (ResonatorParams): resonator

    Returns:
    summary (dict): external Q, loaded/intrinsic ratio and regime name
    """

    inv_external = 1 / resonator.loaded_q - 1 / resonator.intrinsic_q
    external_q = np.inf if inv_external <= 0 else 1 / inv_external
    if np.isclose(external_q, resonator.intrinsic_q, rtol=0.05):
        regime = 'critical'
    elif external_q < resonator.intrinsic_q:
        regime = 'over-coupled'
    else:
        regime = 'under-coupled'
    return {'external_q': float(external_q),
            'loaded_to_intrinsic': resonator.loaded_q / resonator.intrinsic_q,
            'regime': regime}


@dataclass(frozen=True)
class WavelengthPlan:
    pump: float = 1554.9
    signal: float = 1535.5
    idler: float = 1574.8
    pump_filter_fwhm: float = 1.0
    signal_filter_fwhm: float = 0.6
    idler_filter_fwhm: float = 0.8

    def energy_mismatch(self):
        """Frequency mismatch 2 nu_p - nu_s - nu_i in GHz."""
        nu = [SPEED_OF_LIGHT / (lam * 1e-9) for lam in (self.pump, self.signal, self.idler)]
        return (2 * nu[0] - nu[1] - nu[2]) / 1e9

    def check_energy_conservation(self, fwhm):
        mismatch = self.energy_mismatch()
        if abs(mismatch) > fwhm:
            raise ValueError(f'Pump/signal/idler wavelengths violate energy conservation by {mismatch:.2f} GHz, '
                             f'more than one resonance linewidth ({fwhm:.2f} GHz)')


def filters_wider_than_resonance(wavelengths, resonator, factor=10.):
    """
    True when every filter passband is at least ``factor`` times the resonance linewidth,
    i.e. the filters do not reshape the emitted spectrum.
    """

    widths = (wavelengths.pump_filter_fwhm, wavelengths.signal_filter_fwhm, wavelengths.idler_filter_fwhm)
    return all(w >= factor * resonator.linewidth_nm for w in widths)


@dataclass(frozen=True)
class ChannelLossBudget:
    coupling_db: float = 3.5
    filter_db: float = 0.0
    detector_efficiency: float = 0.9
    # uncorrelated noise on this detector: constant dark part plus a pump-driven part
    dark_count_rate: float = 0.0
    noise_coefficient: float = 0.0

    def __post_init__(self):
        if self.coupling_db < 0 or self.filter_db < 0:
            raise ValueError('Losses must be non-negative dB')
        if not 0 < self.detector_efficiency <= 1:
            raise ValueError(f'Detector efficiency must be in (0, 1], got {self.detector_efficiency}')
        if self.dark_count_rate < 0 or self.noise_coefficient < 0:
            raise ValueError('Noise rates must be non-negative')

    @property
    def total_transmittance(self):
        return chain_transmittance((self.coupling_db, self.filter_db), self.detector_efficiency)

    def noise_rate(self, pump_power, floor=0.0):
        """Uncorrelated count rate (Hz) at the given pump power (mW)."""
        return floor + self.dark_count_rate + self.noise_coefficient * pump_power ** 2


@dataclass(frozen=True)
class SourceParams:
    pgr_coefficient: float = 149.0
    pump_power: float = 0.0106
    dark_count_rate_per_channel: float = 0.0
    # coincidence-peak Gaussian sigma (ps); None derives it from lifetime and jitter
    correlation_sigma: float = None

    def __post_init__(self):
        if self.pump_power < 0:
            raise ValueError(f'Pump power must be non-negative, got {self.pump_power} mW')
        if self.pgr_coefficient < 0:
            raise ValueError('PGR coefficient must be non-negative')
        if self.correlation_sigma is not None and self.correlation_sigma <= 0:
            raise ValueError('correlation_sigma must be positive')


@dataclass(frozen=True)
class DetectionParams:
    """
    Detector and time-tagger settings. Times are in ps.

    jitter_sigma is calibrated on the coincidence peak. The signal-idler delay is a double exponential of
    scale tau = 75.7 ps convolved with two detector jitters, so its sigma is sqrt(2 tau^2 + 2 jitter^2):
    65 ps gives 141 ps, a 332 ps FWHM within 15 % of the measured 0.315 ns, while 90 ps would give
    166 ps and 391 ps, outside it.
    """

    jitter_sigma: float = 65.0
    dead_time: float = 0.0
    hardware_resolution: int = 80
    idler_delay: int = 20000
    pair_statistics: str = 'poisson'
    isolation: int = 50000

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise ValueError('Jitter sigma must be non-negative')
        if self.dead_time < 0:
            raise ValueError('Dead time must be non-negative')
        if self.hardware_resolution <= 0:
            raise ValueError('Hardware resolution must be positive')
        if self.pair_statistics not in PAIR_STATISTICS:
            raise ValueError(f'pair_statistics must be one of {PAIR_STATISTICS}, got "{self.pair_statistics}"')


@dataclass(frozen=True)
class ExperimentConfig:
    resonator: ResonatorParams = field(default_factory=ResonatorParams)
    wavelengths: WavelengthPlan = field(default_factory=WavelengthPlan)
    signal_loss: ChannelLossBudget = field(default_factory=lambda: ChannelLossBudget(filter_db=5.0, dark_count_rate=500., noise_coefficient=3.8e6))
    idler_loss: ChannelLossBudget = field(
        default_factory=lambda: ChannelLossBudget(filter_db=7.2, dark_count_rate=6900., noise_coefficient=2.7e7))
    herald_split_b_loss: ChannelLossBudget = field(
        default_factory=lambda: ChannelLossBudget(filter_db=7.2, detector_efficiency=0.65, dark_count_rate=100., noise_coefficient=2.8e6))
    herald_split_c_loss: ChannelLossBudget = field(
        default_factory=lambda: ChannelLossBudget(filter_db=7.2, detector_efficiency=0.65, dark_count_rate=100., noise_coefficient=2.8e6))
    source: SourceParams = field(default_factory=SourceParams)
    detection: DetectionParams = field(default_factory=DetectionParams)
    acquisition_time: float = 30.0
    rng_seed: int = 1550
    memory_cap: int = 100000000

    def __post_init__(self):
        if not self.acquisition_time > 0:
            raise ValueError(f'Acquisition time must be positive, got {self.acquisition_time} s')
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            raise ValueError('rng_seed must be a 64-bit unsigned integer')
        self.wavelengths.check_energy_conservation(self.resonator.fwhm)

    @property
    def duration_ps(self):
        return int(round(self.acquisition_time * 1e12))

    @property
    def pgr(self):
        return pair_generation_rate(self.source)

    @property
    def correlation_sigma(self):
        """Gaussian sigma (ps) of the signal-idler delay distribution."""
        if self.source.correlation_sigma is not None:
            return self.source.correlation_sigma
        tau = self.resonator.lifetime_tau
        return float(np.sqrt(2 * tau ** 2 + 2 * self.detection.jitter_sigma ** 2))

    def noise_rate(self, budget):
        return budget.noise_rate(self.source.pump_power, self.source.dark_count_rate_per_channel)

    def with_overrides(self, power=None, duration=None, seed=None):
        """
        Copy with the pump power (mW), acquisition time (s) or seed replaced.
        """

        config = self
        if power is not None:
            config = replace(config, source=replace(config.source, pump_power=float(power)))
        if duration is not None:
            config = replace(config, acquisition_time=float(duration))
        if seed is not None:
            config = replace(config, rng_seed=int(seed))
        return config

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """
        Build a config from the experiment sections of a resolved config dict.

        Args:
        data (dict): nested dict (see default_config.yaml)

        Returns:
        config (ExperimentConfig): validated config
        """

        budgets = {k: ChannelLossBudget(**data[k])
                   for k in ('signal_loss', 'idler_loss', 'herald_split_b_loss', 'herald_split_c_loss')}
        return cls(resonator=ResonatorParams(**data['resonator']),
                   wavelengths=WavelengthPlan(**data['wavelengths']),
                   source=SourceParams(**data['source']),
                   detection=DetectionParams(**data['detection']),
                   acquisition_time=float(data['acquisition_time']),
                   rng_seed=int(data['rng_seed']),
                   memory_cap=int(data['memory_cap']),
                   **budgets)


def expected_rates(config, experiment='pairs'):
    """
    Closed-form expected detection rates for a simulated experiment (no multi-pair corrections).

    Args:
    config (ExperimentConfig): experiment configuration
    experiment (str): 'pairs' (signal/idler) or 'g2' (herald A, split arms B and C)

    Returns:
    rates (dict): singles rates per role, true coincidence rates and per-role noise rates (Hz)
    """

    pgr = config.pgr
    if experiment == 'pairs':
        t_s = config.signal_loss.total_transmittance
        t_i = config.idler_loss.total_transmittance
        noise_s = config.noise_rate(config.signal_loss)
        noise_i = config.noise_rate(config.idler_loss)
        return {'pgr': pgr,
                'signal': pgr * t_s + noise_s,
                'idler': pgr * t_i + noise_i,
                'noise_signal': noise_s,
                'noise_idler': noise_i,
                'coincidence': pgr * t_s * t_i}
    if experiment == 'g2':
        t_a = config.signal_loss.total_transmittance
        t_b = 0.5 * config.herald_split_b_loss.total_transmittance
        t_c = 0.5 * config.herald_split_c_loss.total_transmittance
        noise = {role: config.noise_rate(b) for role, b in
                 (('A', config.signal_loss), ('B', config.herald_split_b_loss), ('C', config.herald_split_c_loss))}
        return {'pgr': pgr,
                'A': pgr * t_a + noise['A'],
                'B': pgr * t_b + noise['B'],
                'C': pgr * t_c + noise['C'],
                'noise_A': noise['A'], 'noise_B': noise['B'], 'noise_C': noise['C'],
                'AB': pgr * t_a * t_b,
                'AC': pgr * t_a * t_c}
    raise ValueError(f'Unknown experiment "{experiment}"; expected "pairs" or "g2"')


def spectral_brightness_report(config):
    """
    Spectral brightness by its definition PGR / (FWHM P^2), next to the published figure.

    The two are reported side by side; they differ by roughly a factor of two and are not reconciled.

    Args:
    config (ExperimentConfig): experiment configuration

    Returns:
    report (dict): brightness, defined spectral brightness, published value and their ratio
    """

    fwhm = config.resonator.fwhm
    power = config.source.pump_power
    value, spectral = brightness(config.pgr, fwhm, power if power > 0 else None)
    if spectral is None:
        # the per-mW^2 figure is power independent
        spectral = config.source.pgr_coefficient * 1e6 / fwhm
    return {'pgr': config.pgr,
            'fwhm_ghz': fwhm,
            'brightness': value,
            'spectral_brightness': spectral,
            'published_spectral_brightness': PUBLISHED_SPECTRAL_BRIGHTNESS,
            'published_ratio': PUBLISHED_SPECTRAL_BRIGHTNESS / spectral}

