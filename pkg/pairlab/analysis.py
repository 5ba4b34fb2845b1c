"""
Measurement procedures applied to time-tag streams and coincidence histograms: start-stop histogramming,
coincidence-peak fits, CAR, triple-coincidence counting, heralded g2 and Klyshko efficiency,
power-sweep fits and Franson fringe visibility.

All functions here are pure; streams and histograms are treated as read-only.
"""

import logging
import warnings
import numpy as np
from scipy.special import erf
from dataclasses import dataclass, field
from pairlab.fitting import nlls_fit, poisson_fit, derived_uncertainty, poisson_sigma
from pairlab.util import AnalysisError, NoPeakError

log = logging.getLogger(__name__)

FWHM_PER_SIGMA = 2 * np.sqrt(2 * np.log(2))
SQRT_2PI = np.sqrt(2 * np.pi)
BELL_BOUND = 1 / np.sqrt(2)
HERALD_ROLES = ('signal', 'herald_b', 'herald_c')
# starts handled per vectorized block when expanding start-stop pairs
START_CHUNK = 1_000_000


@dataclass(frozen=True, eq=False)
class Histogram:
    """
    Coincidence counts against delay. Bin ``i`` covers [origin + i * bin_width, origin + (i + 1) * bin_width).

    Attributes:
    bin_width (float): bin width (ps)
    origin (float): left edge of the first bin (ps)
    counts (numpy.ndarray): non-negative counts per bin
    acquisition_time (float): integration time (s)
    """

    bin_width: float
    origin: float
    counts: np.ndarray
    acquisition_time: float

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if not np.issubdtype(counts.dtype, np.floating):
            counts = counts.astype(np.int64)
        if counts.ndim != 1 or len(counts) == 0:
            raise ValueError('Histogram needs at least one bin')
        if self.bin_width <= 0:
            raise ValueError(f'Bin width must be positive, got {self.bin_width}')
        if np.any(counts < 0):
            raise ValueError('Histogram counts must be non-negative')
        if self.acquisition_time <= 0:
            raise ValueError('Acquisition time must be positive')
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)

    @property
    def edges(self):
        return self.origin + self.bin_width * np.arange(len(self.counts) + 1)

    @property
    def centers(self):
        return self.origin + self.bin_width * (np.arange(len(self.counts)) + 0.5)

    @property
    def total(self):
        return float(self.counts.sum())


@dataclass
class CarResult:
    C: float
    A: float
    car: float
    sigma: float
    window: tuple
    peak_fit: object
    # no accidentals inside the window: car is C over a single count
    lower_bound: bool = False


@dataclass(frozen=True)
class TripleCoincidenceCounts:
    """
    Raw counts of the heralded g2 experiment; rates are counts / acquisition_time.

    A is the herald (signal) detector, B and C the two outputs of the splitter in the heralded arm.
    """

    n_a: int
    n_b: int
    n_c: int
    n_ab: int
    n_ac: int
    n_bc: int
    n_abc: int
    window: float
    acquisition_time: float
    symmetric: bool = False

    def __post_init__(self):
        if min(self.n_a, self.n_b, self.n_c, self.n_ab, self.n_ac, self.n_bc, self.n_abc) < 0:
            raise ValueError('Counts must be non-negative')
        if self.n_ab > self.n_a or self.n_ac > self.n_a:
            raise ValueError('Doubles cannot exceed herald singles')
        if self.n_abc > min(self.n_ab, self.n_ac):
            raise ValueError('Triples cannot exceed doubles')

    def rate(self, name):
        return getattr(self, f'n_{name.lower()}') / self.acquisition_time

    N_A = property(lambda self: self.rate('a'))
    N_B = property(lambda self: self.rate('b'))
    N_C = property(lambda self: self.rate('c'))
    N_AB = property(lambda self: self.rate('ab'))
    N_AC = property(lambda self: self.rate('ac'))
    N_BC = property(lambda self: self.rate('bc'))
    N_ABC = property(lambda self: self.rate('abc'))


@dataclass
class G2Result:
    g2: float
    sigma: float
    heralding_rate: float
    klyshko: float
    klyshko_sigma: float
    klyshko_alt: float
    klyshko_alt_sigma: float
    counts: TripleCoincidenceCounts = None


@dataclass
class VisibilityResult:
    v_data: float
    v_data_sigma: float
    v_fit: float
    v_fit_sigma: float
    phase_period: float
    phase_period_sigma: float
    phases: np.ndarray
    central_areas: np.ndarray
    central_sigmas: np.ndarray
    side_areas: np.ndarray
    excluded: list = field(default_factory=list)
    fringe_fit: object = None


@dataclass(frozen=True)
class BellVerdict:
    passed: bool
    value: float
    sigma: float
    margin_sigma: float


@dataclass(frozen=True)
class SinglesModulation:
    depth: float
    sigma: float
    fit: object

    @property
    def flat(self):
        return self.depth < 3 * self.sigma


def _channel_id(stream, channel):
    if isinstance(channel, str):
        return stream.channel_of(channel)
    if int(channel) not in stream.channel_map:
        raise ValueError(f'Channel {channel} not in stream')
    return int(channel)


def build_start_stop_histogram(stream, start_ch, stop_ch, bin_width, span, hardware_resolution=None,
                               pair_hardware_bins=False):
    """
    Start-stop histogram: every stop event within ``span`` after a start adds its delay.

    Args:
    stream (TagStream): time-ordered events
    start_ch (str or int): start channel role or id
    stop_ch (str or int): stop channel role or id
    bin_width (int): histogram bin width (ps)
    span (int): maximum start-stop delay (ps); the histogram covers [0, span)
    hardware_resolution (int): TDC bin (ps); bin_width must be a multiple of it
    pair_hardware_bins (bool): histogram at the hardware resolution, then sum adjacent bins

    Returns:
    histogram (Histogram): counts with origin 0
    """

    if bin_width <= 0 or span < bin_width:
        raise ValueError(f'Need 0 < bin_width <= span, got bin_width={bin_width}, span={span}')
    if hardware_resolution is not None and bin_width % hardware_resolution:
        raise ValueError(f'Bin width {bin_width} ps is not a multiple of the {hardware_resolution} ps hardware bin')
    if np.any(np.diff(stream.times) < 0):
        raise ValueError('Stream is not sorted by time')

    n_bins = int(span // bin_width)
    span = n_bins * bin_width
    fine = pair_hardware_bins and hardware_resolution is not None
    width = hardware_resolution if fine else bin_width
    n_fine = int(span // width)
    counts = np.zeros(n_fine, dtype=np.int64)

    starts = stream.times[stream.channels == _channel_id(stream, start_ch)]
    stops = stream.times[stream.channels == _channel_id(stream, stop_ch)]

    for i in range(0, len(starts), START_CHUNK):
        block = starts[i:i + START_CHUNK]
        lo = np.searchsorted(stops, block, side='left')
        hi = np.searchsorted(stops, block + span, side='left')
        n = hi - lo
        total = int(n.sum())
        if total == 0:
            continue
        # index of every stop paired with each start
        offsets = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
        idx = np.repeat(lo, n) + offsets
        delays = stops[idx] - np.repeat(block, n)
        counts += np.bincount((delays // width).astype(np.int64), minlength=n_fine)[:n_fine]

    if fine:
        counts = counts.reshape(n_bins, -1).sum(axis=1)

    return Histogram(bin_width=bin_width, origin=0, counts=counts, acquisition_time=stream.duration)


def _off_peak(h, peak_center, exclusion):
    mask = np.abs(h.centers - peak_center) > exclusion
    if mask.sum() < 2:
        # short histograms: everything but the peak bin
        mask = np.ones(len(h.counts), dtype=bool)
        mask[np.argmin(np.abs(h.centers - peak_center))] = False
    return mask


def fit_coincidence_peak(h, threshold=5.0, exclusion=5000.):
    """
    Fit a Gaussian plus constant floor to the coincidence peak.

    The peak must stand ``threshold`` off-peak standard deviations above the off-peak mean, where
    off-peak bins lie more than ``exclusion`` ps from the highest bin.

    Args:
    h (Histogram): coincidence histogram
    threshold (float): detection threshold in off-peak std
    exclusion (float): half-width (ps) around the peak excluded from the off-peak statistics

    Returns:
    fit (FitResult): parameters amplitude, center, sigma, floor; ``extra`` holds fwhm, fwhm_err and the
        off-peak mean, std and bin count
    """

    counts = h.counts.astype(float)
    x = h.centers
    if counts.sum() == 0:
        raise NoPeakError('Histogram is empty')

    i_peak = int(np.argmax(counts))
    off = _off_peak(h, x[i_peak], exclusion)
    off_mean = counts[off].mean()
    off_std = counts[off].std(ddof=1) if off.sum() > 1 else 0.
    # sparse floors: at least the Poisson spread of a one-count mean
    spread = max(off_std, np.sqrt(max(off_mean, 1.)))
    if not counts[i_peak] > off_mean + threshold * spread:
        raise NoPeakError(f'No coincidence peak: highest bin {counts[i_peak]:g} does not exceed the off-peak mean '
                          f'{off_mean:.3g} by {threshold:g} x {spread:.3g}')

    # weighted moments of the counts above the floor, near the peak
    near = ~off
    floor0 = counts.min()
    w = np.clip(counts[near] - floor0, 0, None)
    center0 = x[i_peak]
    sigma0 = np.sqrt((w * (x[near] - center0) ** 2).sum() / w.sum()) if w.sum() > 0 else h.bin_width
    sigma0 = max(sigma0, 0.5 * h.bin_width)
    init = {'amplitude': counts[i_peak] - floor0, 'center': center0, 'sigma': sigma0, 'floor': floor0}

    fit = poisson_fit('gaussian', x, counts, init, bounded=True)
    if not fit.converged:
        raise AnalysisError(f'Coincidence-peak fit did not converge: {fit.message}')
    if fit.param('amplitude') <= 0:
        raise NoPeakError('Fitted peak amplitude is not positive')

    fit.extra.update({'fwhm': FWHM_PER_SIGMA * fit.param('sigma'),
                      'fwhm_err': FWHM_PER_SIGMA * fit.err('sigma'),
                      'off_peak_mean': float(off_mean),
                      'off_peak_std': float(off_std),
                      'off_peak_bins': int(off.sum())})
    log.debug('peak fit: %s', fit.params)
    return fit


def compute_car(h, peak, window_sigmas=1.0):
    """
    Coincidences-to-accidentals ratio in a window of +/- ``window_sigmas`` fitted sigma about the peak.

    C is the fitted Gaussian (above the floor) integrated over the window; A is the fitted floor times
    the window width. The uncertainty combines Poisson noise on C with the off-peak bin spread scaled to
    the window width.

    Args:
    h (Histogram): histogram the peak was fitted on
    peak (FitResult): result of fit_coincidence_peak
    window_sigmas (float): window half-width in fitted sigma

    Returns:
    result (CarResult): C, A, CAR and its one-sigma uncertainty
    """

    amplitude, center, sigma, floor = (peak.param(n) for n in ('amplitude', 'center', 'sigma', 'floor'))
    half = window_sigmas * sigma
    window_bins = 2 * half / h.bin_width
    C = amplitude * sigma * SQRT_2PI * erf(window_sigmas / np.sqrt(2)) / h.bin_width
    A = max(floor, 0.) * window_bins

    off_std = peak.extra.get('off_peak_std', np.sqrt(max(floor, 0.)))
    sigma_a = off_std * np.sqrt(window_bins)
    sigma_c = np.sqrt(max(C, 0.) + A)

    if A <= 0:
        warnings.warn('No accidentals in the CAR window; reporting a lower bound')
        car = C
        return CarResult(C=C, A=0., car=car, sigma=sigma_c, window=(center - half, center + half),
                         peak_fit=peak, lower_bound=True)

    car = C / A
    rel = np.sqrt((sigma_c / C) ** 2 + (sigma_a / A) ** 2) if C > 0 else np.inf
    return CarResult(C=C, A=A, car=car, sigma=car * rel, window=(center - half, center + half), peak_fit=peak)


def coincidence_rate(h, peak, fwhms=3.0):
    """
    Background-subtracted coincidence rate within +/- ``fwhms`` FWHM of the fitted centre.

    Args:
    h (Histogram): histogram
    peak (FitResult): coincidence-peak fit
    fwhms (float): half-width of the summing window in FWHM

    Returns:
    rate (float): coincidences per second
    sigma (float): Poisson uncertainty
    """

    half = fwhms * FWHM_PER_SIGMA * peak.param('sigma')
    inside = np.abs(h.centers - peak.param('center')) <= half
    raw = float(h.counts[inside].sum())
    net = raw - peak.param('floor') * inside.sum()
    return net / h.acquisition_time, np.sqrt(raw) / h.acquisition_time


def scale_to_pgr(rate, sigma, config):
    """
    Undo the signal and idler channel transmittances to express a coincidence rate as an on-chip PGR.
    """

    t = config.signal_loss.total_transmittance * config.idler_loss.total_transmittance
    return rate / t, sigma / t


def analytic_car(config, window=None, peak_fraction=None):
    """
    Closed-form background-subtracted CAR of the Poisson multi-pair model.

    CAR = t_s t_i mu f / ((t_s mu + d_s)(t_i mu + d_i) w), with f the fraction of the peak inside a
    window of width w. The (C + A) / A convention is one more than this.

    Args:
    config (ExperimentConfig): experiment configuration
    window (float): full window width (ps); defaults to twice the correlation sigma
    peak_fraction (float): fraction of true coincidences in the window; defaults to the +/-1 sigma Gaussian fraction

    Returns:
    car (float): expected CAR
    """

    sigma = config.correlation_sigma
    window = 2 * sigma if window is None else window
    if peak_fraction is None:
        peak_fraction = erf(window / (2 * sigma * np.sqrt(2)))
    mu = config.pgr
    t_s = config.signal_loss.total_transmittance
    t_i = config.idler_loss.total_transmittance
    singles = (t_s * mu + config.noise_rate(config.signal_loss)) * (t_i * mu + config.noise_rate(config.idler_loss))
    if singles == 0:
        return np.inf
    return t_s * t_i * mu * peak_fraction / (singles * window * 1e-12)


def _has_partner(anchor, partner, window):
    lo = np.searchsorted(partner, anchor - window, side='left')
    hi = np.searchsorted(partner, anchor + window, side='right')
    return hi > lo, lo, hi


def count_triples(stream, window=5000, symmetric=False):
    """
    Hardware-style double and triple coincidence counting on the heralded g2 stream.

    Windows are anchored on herald (A) events: an A event counts toward N_AB when at least one B event lies
    within +/- window of it, and toward N_ABC when both a B and a C event do. With ``symmetric`` a triple
    additionally needs |t_B - t_C| <= window. For uncorrelated channels the triple rate is
    r_A r_B r_C (2w)^2 anchored and r_A r_B r_C 3w^2 symmetric. N_BC counts B events with a C event
    within +/- window.

    Args:
    stream (TagStream): stream with signal, herald_b and herald_c channels
    window (float): coincidence window (ps)
    symmetric (bool): pairwise window on all three detectors

    Returns:
    counts (TripleCoincidenceCounts): raw counts and rates
    """

    if window <= 0:
        raise ValueError(f'Coincidence window must be positive, got {window}')
    missing = [r for r in HERALD_ROLES if r not in stream.channel_map.values()]
    if missing:
        raise ValueError(f'Stream lacks channels {missing} needed for triple coincidences')

    a, b, c = (stream.channel_times(r) for r in HERALD_ROLES)
    ab, b_lo, b_hi = _has_partner(a, b, window)
    ac, c_lo, c_hi = _has_partner(a, c, window)
    abc = ab & ac
    if symmetric:
        for i in np.flatnonzero(abc):
            tb, tc = b[b_lo[i]:b_hi[i]], c[c_lo[i]:c_hi[i]]
            abc[i] = np.any(np.abs(tb[:, None] - tc[None, :]) <= window)
    bc, _, _ = _has_partner(b, c, window)

    return TripleCoincidenceCounts(n_a=len(a), n_b=len(b), n_c=len(c),
                                   n_ab=int(ab.sum()), n_ac=int(ac.sum()), n_bc=int(bc.sum()),
                                   n_abc=int(abc.sum()), window=window,
                                   acquisition_time=stream.duration, symmetric=symmetric)


def _reverse_heralding(t):
    """
    Partner probability per heralded-arm detection, N_AB/N_B + N_AC/N_C, from triples and BC coincidences.

    B and C never share a photon, so N_BC = N_B N_C 2w and each triple is a true A-B (or A-C) coincidence
    with an accidental third event, less the fully accidental triples counted twice.
    """

    w = t.window * 1e-12
    area = 3. if t.symmetric else 4.
    overlap = t.n_a * t.N_B * t.N_C * (8. - area) * w ** 2
    ratio = (t.n_abc + overlap) / t.n_bc
    sigma = np.sqrt(max(t.n_abc, 1)) / t.n_bc
    if t.n_abc > 0:
        sigma = np.hypot(sigma, ratio / np.sqrt(t.n_bc))
    return ratio, sigma


def heralded_g2(t, detector_efficiency=0.65):
    """
    Heralded second-order correlation g2(0) = N_ABC N_A / (N_AB N_AC) and Klyshko efficiency N_AB / (N_A D).

    The uncertainty follows from Poisson statistics of the four raw counts; with no triples it is the
    one-count scale N_A / (N_AB N_AC). The alternative Klyshko estimate rebuilds N_AB from N_ABC and N_BC:
    the share of heralded-arm detections with an A partner, split evenly over B and C, times N_B. It is
    NaN when no BC coincidences were counted.

    Args:
    t (TripleCoincidenceCounts): counts
    detector_efficiency (float): efficiency D of the heralded-arm detectors

    Returns:
    result (G2Result): g2, its sigma, heralding rate and the Klyshko estimates
    """

    if t.n_ab == 0 or t.n_ac == 0:
        raise AnalysisError(f'g2 undefined: N_AB = {t.n_ab}, N_AC = {t.n_ac}')
    if not 0 < detector_efficiency <= 1:
        raise ValueError('Detector efficiency must be in (0, 1]')

    g2 = t.n_abc * t.n_a / (t.n_ab * t.n_ac)
    if t.n_abc > 0:
        sigma = g2 * np.sqrt(1 / t.n_abc + 1 / t.n_a + 1 / t.n_ab + 1 / t.n_ac)
    else:
        sigma = t.n_a / (t.n_ab * t.n_ac)

    p = t.n_ab / t.n_a
    klyshko = p / detector_efficiency
    klyshko_sigma = np.sqrt(p * (1 - p) / t.n_a) / detector_efficiency

    if t.n_bc > 0:
        ratio, ratio_sigma = _reverse_heralding(t)
        scale = 0.5 * t.n_b / (t.n_a * detector_efficiency)
        klyshko_alt, klyshko_alt_sigma = ratio * scale, ratio_sigma * scale
    else:
        log.warning('No BC coincidences; the alternative Klyshko estimate is undefined')
        klyshko_alt, klyshko_alt_sigma = np.nan, np.nan

    return G2Result(g2=g2, sigma=sigma, heralding_rate=t.N_A, klyshko=klyshko, klyshko_sigma=klyshko_sigma,
                    klyshko_alt=klyshko_alt, klyshko_alt_sigma=klyshko_alt_sigma, counts=t)


def fit_power_sweep(points, model='quadratic', init=None):
    """
    Weighted fit of a quantity measured against pump power.

    Args:
    points (list): (power mW, y, sigma_y) triples
    model (str): 'quadratic' (y = R P^2), 'sigmoid' (y = a P^2 / (1 + a P^2)) or
        'power_law' (y = scale P^k + offset)
    init (dict): starting parameters; estimated from the data when None

    Returns:
    fit (FitResult): fitted parameters with one-sigma errors
    """

    data = np.asarray(points, dtype=float)
    if data.ndim != 2 or data.shape[1] != 3:
        raise ValueError('Points must be (power, y, sigma_y) triples')
    p, y, sigma_y = data.T
    if len(p) < 3:
        raise ValueError(f'Power sweep needs at least 3 points, got {len(p)}')
    if np.ptp(p) == 0:
        raise ValueError('Degenerate power sweep: all points at the same power')
    if np.any(sigma_y <= 0):
        raise ValueError('All sigma_y must be positive')

    if init is None:
        weights = 1 / sigma_y ** 2
        if model == 'quadratic':
            init = {'R': float((weights * y * p ** 2).sum() / (weights * p ** 4).sum())}
        elif model == 'sigmoid':
            ratio = np.clip(y, 1e-12, 1 - 1e-6)
            init = {'a': float(np.median(ratio / (1 - ratio) / p ** 2))}
        elif model == 'power_law':
            if np.any(p <= 0):
                raise ValueError('Power-law fits need positive powers')
            offset = 0.5 * y.min()
            k, log_scale = np.polyfit(np.log(p), np.log(np.clip(y - offset, 1e-12, None)), 1)
            init = {'scale': float(np.exp(log_scale)), 'exponent': float(k), 'offset': float(offset)}
        else:
            raise ValueError(f'Unknown power-sweep model "{model}"')

    return nlls_fit(model, p, y, sigma_y, init, bounded=(model == 'sigmoid'))


def _central_area(fit, bin_width):
    amp, sigma = fit.param('amp_center'), fit.param('sigma')
    area = amp * sigma * SQRT_2PI / bin_width
    gradient = np.zeros(len(fit.values))
    gradient[fit.param_names.index('amp_center')] = sigma * SQRT_2PI / bin_width
    gradient[fit.param_names.index('sigma')] = amp * SQRT_2PI / bin_width
    return area, derived_uncertainty(fit, gradient)


def fit_three_peaks(h, delay):
    """
    Fit the three Franson peaks at -delay, 0 and +delay with a common sigma and a flat floor.

    Args:
    h (Histogram): histogram centred on zero delay
    delay (float): interferometer delay (ps)

    Returns:
    fit (FitResult): triple_gaussian fit
    """

    x = h.centers
    counts = h.counts.astype(float)
    floor0 = counts.min()

    def height(at):
        return max(counts[np.argmin(np.abs(x - at))] - floor0, 1.)

    sigma0 = max(delay / 4, h.bin_width)
    init = {'amp_left': height(-delay), 'amp_center': height(0.), 'amp_right': height(delay),
            'center': 0., 'delay': delay, 'sigma': sigma0, 'floor': max(floor0, 0.)}
    fit = poisson_fit('triple_gaussian', x, counts, init, bounded=True)
    if not fit.converged:
        raise AnalysisError(f'three-peak fit did not converge: {fit.message}')
    if abs(fit.param('center')) > delay / 4 or abs(fit.param('delay') - delay) > delay / 4:
        raise AnalysisError('three-peak fit drifted away from the expected peak positions')
    return fit


def _fringe_init(phases, areas, period):
    k = 2 * np.pi / period
    component = (areas * np.exp(-1j * k * phases)).sum()
    mean = areas.mean()
    visibility = float(np.clip(2 * np.abs(component) / (len(areas) * mean), 0.05, 0.95)) if mean > 0 else 0.5
    phase = float(np.angle(component))
    return [{'amplitude': mean, 'visibility': visibility, 'period': period, 'phase': phase},
            {'amplitude': mean, 'visibility': 0.5, 'period': period, 'phase': phase + np.pi}]


def franson_visibility(points, delay=400., folded=True, excluded_fraction_limit=0.3):
    """
    Fringe visibility of the Franson central peak over a phase sweep.

    Every histogram gets a three-peak fit; points whose fit fails are dropped with a warning and the sweep
    fails when more than ``excluded_fraction_limit`` of the points are dropped. v_data comes from the
    largest and smallest central-peak areas, v_fit from a sinusoid A(1 + V cos(2 pi phi / T + phi0)) fitted
    over the swept phase with its covariance scaled by the reduced chi2.

    Args:
    points (list): (phase rad, Histogram) pairs
    delay (float): interferometer delay (ps)
    folded (bool): both photons share one interferometer (fringe period pi in the swept phase)
    excluded_fraction_limit (float): largest tolerated fraction of failed points

    Returns:
    result (VisibilityResult): visibilities with one-sigma errors and the per-point areas
    """

    if len(points) < 5:
        raise ValueError(f'Visibility needs at least 5 phase points, got {len(points)}')
    phases_all = np.array([p for p, _ in points], dtype=float)
    if not np.all(np.isfinite(phases_all)):
        raise ValueError('Phases must be finite')
    period = np.pi if folded else 2 * np.pi
    spacing = np.ptp(phases_all) / (len(phases_all) - 1)
    if np.ptp(phases_all) + spacing < period * (1 - 1e-9):
        raise ValueError(f'Phase grid spans {np.ptp(phases_all):.3f} rad, less than one fringe period ({period:.3f})')

    phases, areas, sigmas, sides, excluded = [], [], [], [], []
    for phase, h in points:
        try:
            fit = fit_three_peaks(h, delay)
        except (AnalysisError, ValueError, np.linalg.LinAlgError) as e:
            warnings.warn(f'Excluding phase point {phase:.4f} rad: {e}')
            excluded.append(float(phase))
            continue
        area, area_sigma = _central_area(fit, h.bin_width)
        amps = fit.param('amp_left') + fit.param('amp_right')
        phases.append(float(phase))
        areas.append(area)
        sigmas.append(area_sigma)
        sides.append(amps * fit.param('sigma') * SQRT_2PI / h.bin_width)

    if len(excluded) > excluded_fraction_limit * len(points):
        raise AnalysisError(f'{len(excluded)} of {len(points)} phase points failed their fits')
    if len(phases) < 5:
        raise AnalysisError(f'Only {len(phases)} usable phase points')

    phases, areas, sigmas, sides = map(np.asarray, (phases, areas, sigmas, sides))
    hi, lo = int(np.argmax(areas)), int(np.argmin(areas))
    total = areas[hi] + areas[lo]
    v_data = (areas[hi] - areas[lo]) / total
    v_data_sigma = 2 * np.sqrt((areas[lo] * sigmas[hi]) ** 2 + (areas[hi] * sigmas[lo]) ** 2) / total ** 2

    fit_sigma = np.where(sigmas > 0, sigmas, poisson_sigma(np.abs(areas)))
    candidates = []
    for init in _fringe_init(phases, areas, period):
        try:
            candidates.append(nlls_fit('sinusoid', phases, areas, fit_sigma, init, bounded=True,
                                       scale_covariance=True))
        except ValueError as e:
            log.debug('sinusoid start rejected: %s', e)
    if not candidates:
        raise AnalysisError('Fringe fit failed')
    fringe = min(candidates, key=lambda r: r.residual_norm)

    return VisibilityResult(v_data=float(v_data), v_data_sigma=float(v_data_sigma),
                            v_fit=fringe.param('visibility'), v_fit_sigma=fringe.err('visibility'),
                            phase_period=fringe.param('period'), phase_period_sigma=fringe.err('period'),
                            phases=phases, central_areas=areas, central_sigmas=sigmas, side_areas=sides,
                            excluded=excluded, fringe_fit=fringe)


def singles_modulation(fringe_phases, counts):
    """
    Depth of any modulation of the singles with the two-photon fringe phase.

    Fits c0 + c1 cos(x) + c2 sin(x) to the singles counts and returns sqrt(c1^2 + c2^2) / c0.

    Args:
    fringe_phases (array-like): two-photon phase of each point (rad)
    counts (array-like): singles counts per point

    Returns:
    result (SinglesModulation): depth, its sigma and the harmonic fit
    """

    x = np.asarray(fringe_phases, dtype=float)
    y = np.asarray(counts, dtype=float)
    fit = nlls_fit('harmonic', x, y, poisson_sigma(y), {'c0': y.mean(), 'c1': 0., 'c2': 0.})
    c0, c1, c2 = fit.values
    amp = np.hypot(c1, c2)
    depth = amp / c0
    if amp > 0:
        gradient = [-amp / c0 ** 2, c1 / (amp * c0), c2 / (amp * c0)]
        sigma = derived_uncertainty(fit, gradient)
    else:
        sigma = derived_uncertainty(fit, [0., 1 / c0, 0.])
    return SinglesModulation(depth=float(depth), sigma=float(sigma), fit=fit)


def bell_threshold(v, sigma=None, use='v_data'):
    """
    Entanglement witness: the visibility minus one sigma must exceed 1/sqrt(2).

    Args:
    v (VisibilityResult or float): visibility result, or a bare value
    sigma (float): uncertainty when ``v`` is a bare value
    use (str): 'v_data' or 'v_fit' when ``v`` is a VisibilityResult

    Returns:
    verdict (BellVerdict): pass flag and margin above the bound in sigma units
    """

    if isinstance(v, VisibilityResult):
        if use not in ('v_data', 'v_fit'):
            raise ValueError(f'use must be "v_data" or "v_fit", got "{use}"')
        value, sigma = getattr(v, use), getattr(v, f'{use}_sigma')
    else:
        value, sigma = float(v), float(sigma or 0.)
    excess = value - BELL_BOUND
    margin = excess / sigma if sigma > 0 else (np.inf if excess > 0 else (-np.inf if excess < 0 else 0.))
    return BellVerdict(passed=bool(value - sigma > BELL_BOUND), value=value, sigma=sigma, margin_sigma=float(margin))
