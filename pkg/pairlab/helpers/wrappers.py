"""
Wrapper functions behind the pairlab CLI commands: simulate, analyze, sweep and report.
"""

import os
import click
import logging
import warnings
import numpy as np
import pandas as pd
from tqdm.auto import tqdm
from os.path import abspath, join, exists, dirname, basename, splitext
from dask.distributed import as_completed
from pairlab.model import spectral_brightness_report, expected_rates
from pairlab.sim import simulate_pairs, simulate_heralded_g2
from pairlab.franson import franson_config_from_dict, simulate_franson, phase_grid
from pairlab.analysis import (build_start_stop_histogram, fit_coincidence_peak, compute_car, coincidence_rate,
                              scale_to_pgr, analytic_car, count_triples, heralded_g2, fit_power_sweep,
                              franson_visibility, singles_modulation, bell_threshold, BELL_BOUND)
from pairlab.helpers.data import (write_tag_file, read_tag_file, write_tag_csv, write_histogram_csv,
                                  read_histogram_csv, write_triple_counts, write_metrics, format_metric, write_manifest,
                                  read_manifest, timestamp)
from pairlab.util import experiment_config, AnalysisError, atomic_write, initialize_dask, close_dask
from pairlab.viz import (plot_histogram, plot_power_sweep, plot_fringe, save_figure)

SWEEP_EXPERIMENTS = ('pairs', 'g2')


def prepare_output_dir(output_dir):
    """
    Create the output directory and point the run log at it.

    Args:
    output_dir (str): directory for the run's outputs

    Returns:
    output_dir (str): absolute path
    """

    output_dir = abspath(output_dir)
    if not exists(output_dir):
        os.makedirs(output_dir)
    logging.basicConfig(filename=f'{output_dir}/pairlab.log', level=logging.INFO)
    return output_dir


def emit_metrics(metrics, metrics_file):
    """
    Echo metric lines and write them to ``metrics_file``.

    Args:
    metrics (list): (name, value, sigma, units) tuples
    metrics_file (str): destination
    """

    for metric in metrics:
        click.echo(format_metric(*metric))
    write_metrics(metrics_file, metrics)


def _counting_sigma(count, duration):
    return np.sqrt(count) / duration


def simulate_pairs_wrapper(config_data, output_dir, output_file='pairs', write_csv=False, command=()):
    """
    Simulate the two-detector experiment and write the tag file and manifest.

    Args:
    config_data (dict): resolved config
    output_dir (str): directory to write to
    output_file (str): base name of the outputs
    write_csv (bool): also write the channel,time_ps CSV export
    command (list): command line recorded in the manifest

    Returns:
    manifest_file (str): path to the run manifest
    """

    start_time = timestamp()
    output_dir = prepare_output_dir(output_dir)
    config = experiment_config(config_data)
    logging.info(f'simulate pairs: P={config.source.pump_power} mW, T={config.acquisition_time} s, '
                 f'seed={config.rng_seed}')

    stream = simulate_pairs(config)
    tag_file = join(output_dir, f'{output_file}.tags')
    write_tag_file(tag_file, stream, config.detection.hardware_resolution)
    outputs = [tag_file]
    if write_csv:
        csv_file = join(output_dir, f'{output_file}.csv')
        write_tag_csv(csv_file, stream)
        outputs.append(csv_file)

    expected = expected_rates(config, 'pairs')
    brightness = spectral_brightness_report(config)
    results = {'events': len(stream),
               'singles_signal': stream.rate('signal'),
               'singles_idler': stream.rate('idler'),
               'expected_singles_signal': expected['signal'],
               'expected_singles_idler': expected['idler'],
               'pgr': config.pgr,
               'brightness': brightness['brightness'],
               'pump_power': config.source.pump_power,
               'acquisition_time': config.acquisition_time}
    click.echo(f'Wrote {len(stream)} events to {tag_file}')
    manifest_file = join(output_dir, f'{output_file}_manifest.yaml')
    write_manifest(manifest_file, 'simulate-pairs', config_data, command, outputs, results, start_time)
    return manifest_file


def simulate_g2_wrapper(config_data, output_dir, output_file='g2', write_csv=False, command=()):
    """
    Simulate the heralded g2 experiment and write the tag file and manifest.

    Args:
    config_data (dict): resolved config
    output_dir (str): directory to write to
    output_file (str): base name of the outputs
    write_csv (bool): also write the channel,time_ps CSV export
    command (list): command line recorded in the manifest

    Returns:
    manifest_file (str): path to the run manifest
    """

    start_time = timestamp()
    output_dir = prepare_output_dir(output_dir)
    config = experiment_config(config_data)
    logging.info(f'simulate g2: P={config.source.pump_power} mW, T={config.acquisition_time} s, '
                 f'seed={config.rng_seed}')

    stream = simulate_heralded_g2(config)
    tag_file = join(output_dir, f'{output_file}.tags')
    write_tag_file(tag_file, stream, config.detection.hardware_resolution)
    outputs = [tag_file]
    if write_csv:
        csv_file = join(output_dir, f'{output_file}.csv')
        write_tag_csv(csv_file, stream)
        outputs.append(csv_file)

    results = {'events': len(stream),
               'heralding_rate': stream.rate('signal'),
               'singles_b': stream.rate('herald_b'),
               'singles_c': stream.rate('herald_c'),
               'pump_power': config.source.pump_power,
               'acquisition_time': config.acquisition_time}
    click.echo(f'Wrote {len(stream)} events to {tag_file}')
    manifest_file = join(output_dir, f'{output_file}_manifest.yaml')
    write_manifest(manifest_file, 'simulate-g2', config_data, command, outputs, results, start_time)
    return manifest_file


def simulate_franson_wrapper(config_data, output_dir, output_file='franson', command=()):
    """
    Simulate a Franson phase sweep: one histogram CSV per phase point plus a sweep table.

    Folded sweeps produce one fringe; unfolded sweeps produce one fringe per fixed idler-DLI phase.

    Args:
    config_data (dict): resolved config
    output_dir (str): directory to write to
    output_file (str): base name of the outputs
    command (list): command line recorded in the manifest

    Returns:
    manifest_file (str): path to the run manifest
    """

    start_time = timestamp()
    output_dir = prepare_output_dir(output_dir)
    cfg = franson_config_from_dict(config_data)
    section = config_data['franson']
    grid = phase_grid(section['phases'], section['phase_span'])
    settings = [None] if cfg.folded else list(section['idler_phases'])
    logging.info(f'simulate franson: folded={cfg.folded}, {len(grid)} phases, {len(settings)} setting(s)')

    rows, outputs = [], []
    for j, idler_phase in enumerate(settings):
        points = simulate_franson(cfg, grid, seed=cfg.base.rng_seed, idler_phase=idler_phase, spawn_key=(j,))
        for i, point in enumerate(tqdm(points, desc='Writing histograms', leave=False)):
            name = f'{output_file}_{i:03d}.csv' if cfg.folded else f'{output_file}_s{j}_{i:03d}.csv'
            write_histogram_csv(join(output_dir, name), point.histogram)
            outputs.append(join(output_dir, name))
            rows.append({'setting': j,
                         'idler_phase': np.nan if idler_phase is None else idler_phase,
                         'phase': point.phase,
                         'voltage': point.voltage,
                         'fringe_phase': point.fringe_phase,
                         'acquisition_s': cfg.acquisition_time,
                         'singles_signal': point.singles_signal,
                         'singles_idler': point.singles_idler,
                         'histogram': name,
                         'folded': cfg.folded,
                         'delay_ps': cfg.dli_signal.delay})

    sweep_file = join(output_dir, f'{output_file}_sweep.csv')
    with atomic_write(sweep_file, 'w') as f:
        pd.DataFrame(rows).to_csv(f, index=False)
    outputs.append(sweep_file)

    click.echo(f'Wrote {len(rows)} histograms to {output_dir}')
    results = {'folded': cfg.folded, 'phases': len(grid), 'settings': len(settings),
               'pair_rate': cfg.flux, 'delay_ps': cfg.dli_signal.delay}
    manifest_file = join(output_dir, f'{output_file}_manifest.yaml')
    write_manifest(manifest_file, 'simulate-franson', config_data, command, outputs, results, start_time)
    return manifest_file


def _pairs_histogram(stream, config_data, config):
    analysis = config_data['analysis']
    return build_start_stop_histogram(stream, 'signal', 'idler', analysis['bin_width'], analysis['span'],
                                      hardware_resolution=config.detection.hardware_resolution,
                                      pair_hardware_bins=analysis['pair_hardware_bins'])


def load_histogram(input_file, config_data):
    """
    Histogram from a histogram CSV, or built from a two-detector tag file.

    Args:
    input_file (str): .csv histogram or binary tag file
    config_data (dict): resolved config (binning)

    Returns:
    histogram (Histogram): start-stop histogram
    """

    if not exists(input_file):
        raise IOError(f'Could not find input file {input_file}')
    if splitext(input_file)[1].lower() == '.csv':
        return read_histogram_csv(input_file)
    stream, _ = read_tag_file(input_file)
    return _pairs_histogram(stream, config_data, experiment_config(config_data))


def analyze_histogram_wrapper(input_file, config_data, output_dir, output_file='histogram', command=()):
    """
    Build the start-stop histogram of a two-detector tag file.

    Args:
    input_file (str): tag file
    config_data (dict): resolved config
    output_dir (str): directory to write to
    output_file (str): base name of the outputs
    command (list): command line recorded in the manifest

    Returns:
    manifest_file (str): path to the run manifest
    """

    start_time = timestamp()
    output_dir = prepare_output_dir(output_dir)
    h = load_histogram(input_file, config_data)

    hist_file = join(output_dir, f'{output_file}.csv')
    write_histogram_csv(hist_file, h)
    metrics = [('histogram_total', h.total, np.sqrt(h.total), 'counts'),
               ('histogram_bins', len(h.counts), 0, 'bins'),
               ('bin_width', h.bin_width, 0, 'ps')]
    metrics_file = join(output_dir, f'{output_file}_metrics.txt')
    emit_metrics(metrics, metrics_file)

    outputs = [hist_file, metrics_file]
    fig = plot_histogram(h, headless=True)
    outputs += save_figure(fig, join(output_dir, output_file), output_dir)

    manifest_file = join(output_dir, f'{output_file}_manifest.yaml')
    write_manifest(manifest_file, 'analyze-histogram', config_data, command, outputs,
                   {'input': abspath(input_file), 'total': h.total}, start_time)
    return manifest_file


def car_metrics(h, config_data, config):
    """
    Peak fit, CAR, coincidence rate and on-chip PGR of one start-stop histogram.

    Returns:
    peak (FitResult): coincidence-peak fit
    car (CarResult): CAR result
    results (dict): flat dict of the headline numbers
    """

    analysis = config_data['analysis']
    peak = fit_coincidence_peak(h, analysis['peak_threshold'], analysis['off_peak_exclusion'])
    car = compute_car(h, peak, analysis['window_sigmas'])
    rate, rate_sigma = coincidence_rate(h, peak)
    pgr, pgr_sigma = scale_to_pgr(rate, rate_sigma, config)
    results = {'car': float(car.car), 'car_sigma': float(car.sigma), 'car_lower_bound': car.lower_bound,
               'C': float(car.C), 'A': float(car.A),
               'window_lo_ps': float(car.window[0]), 'window_hi_ps': float(car.window[1]),
               'fwhm_ps': peak.extra['fwhm'], 'fwhm_ps_sigma': peak.extra['fwhm_err'],
               'peak_center_ps': peak.param('center'),
               'coincidence_rate': float(rate), 'coincidence_rate_sigma': float(rate_sigma),
               'pgr': float(pgr), 'pgr_sigma': float(pgr_sigma)}
    return peak, car, results


def analyze_car_wrapper(input_file, config_data, output_dir, output_file='car', command=()):
    """
    CAR analysis of a tag file or histogram CSV.

    Args:
    input_file (str): tag file or histogram CSV
    config_data (dict): resolved config
    output_dir (str): directory to write to
    output_file (str): base name of the outputs
    command (list): command line recorded in the manifest

    Returns:
    manifest_file (str): path to the run manifest
    """

    start_time = timestamp()
    output_dir = prepare_output_dir(output_dir)
    config = experiment_config(config_data)
    h = load_histogram(input_file, config_data)

    try:
        peak, car, results = car_metrics(h, config_data, config)
    except AnalysisError as e:
        logging.error(e)
        raise

    if car.lower_bound:
        click.echo('No accidentals in the window: CAR is a lower bound')
    metrics = [('car', results['car'], results['car_sigma'], ''),
               ('coincidences', results['C'], np.sqrt(max(results['C'], 0)), 'counts'),
               ('accidentals', results['A'], None, 'counts'),
               ('fwhm', results['fwhm_ps'] / 1e3, results['fwhm_ps_sigma'] / 1e3, 'ns'),
               ('coincidence_rate', results['coincidence_rate'], results['coincidence_rate_sigma'], 'Hz'),
               ('pgr', results['pgr'], results['pgr_sigma'], 'Hz')]
    metrics_file = join(output_dir, f'{output_file}_metrics.txt')
    emit_metrics(metrics, metrics_file)

    outputs = [metrics_file]
    fig = plot_histogram(h, peak=peak, window=car.window, headless=True)
    outputs += save_figure(fig, join(output_dir, output_file), output_dir)

    results.update({'input': abspath(input_file), 'pump_power': config.source.pump_power,
                    'acquisition_time': h.acquisition_time})
    manifest_file = join(output_dir, f'{output_file}_manifest.yaml')
    write_manifest(manifest_file, 'analyze-car', config_data, command, outputs, results, start_time)
    return manifest_file


def g2_metrics(stream, config_data, counts_file=None):
    analysis = config_data['analysis']
    counts = count_triples(stream, analysis['triple_window'], analysis['symmetric_triples'])
    if counts_file is not None:
        write_triple_counts(counts_file, counts)
    g2 = heralded_g2(counts, analysis['heralded_detector_efficiency'])
    results = {'g2': float(g2.g2), 'g2_sigma': float(g2.sigma),
               'heralding_rate': float(g2.heralding_rate),
               'heralding_rate_sigma': float(_counting_sigma(counts.n_a, counts.acquisition_time)),
               'klyshko': float(g2.klyshko), 'klyshko_sigma': float(g2.klyshko_sigma),
               'klyshko_alt': float(g2.klyshko_alt), 'klyshko_alt_sigma': float(g2.klyshko_alt_sigma),
               'n_a': counts.n_a, 'n_b': counts.n_b, 'n_c': counts.n_c, 'n_ab': counts.n_ab,
               'n_ac': counts.n_ac, 'n_bc': counts.n_bc, 'n_abc': counts.n_abc,
               'window_ps': float(counts.window)}
    return g2, results


def analyze_g2_wrapper(input_file, config_data, output_dir, output_file='g2', command=()):
    """
    Heralded g2 and Klyshko efficiency of a three-detector tag file.

    Args:
    input_file (str): tag file with signal, herald_b and herald_c channels
    config_data (dict): resolved config
    output_dir (str): directory to write to
    output_file (str): base name of the outputs
    command (list): command line recorded in the manifest

    Returns:
    manifest_file (str): path to the run manifest
    """

    start_time = timestamp()
    output_dir = prepare_output_dir(output_dir)
    if not exists(input_file):
        raise IOError(f'Could not find input file {input_file}')
    stream, _ = read_tag_file(input_file)

    try:
        _, results = g2_metrics(stream, config_data)
    except AnalysisError as e:
        logging.error(e)
        raise

    metrics = [('g2', results['g2'], results['g2_sigma'], ''),
               ('heralding_rate', results['heralding_rate'], results['heralding_rate_sigma'], 'Hz'),
               ('klyshko', results['klyshko'], results['klyshko_sigma'], ''),
               ('klyshko_alt', results['klyshko_alt'], results['klyshko_alt_sigma'], ''),
               ('n_ab', results['n_ab'], np.sqrt(results['n_ab']), 'counts'),
               ('n_ac', results['n_ac'], np.sqrt(results['n_ac']), 'counts'),
               ('n_bc', results['n_bc'], np.sqrt(results['n_bc']), 'counts'),
               ('n_abc', results['n_abc'], np.sqrt(results['n_abc']), 'counts')]
    metrics_file = join(output_dir, f'{output_file}_metrics.txt')
    emit_metrics(metrics, metrics_file)

    results.update({'input': abspath(input_file), 'acquisition_time': stream.duration,
                    'pump_power': config_data['source']['pump_power']})
    manifest_file = join(output_dir, f'{output_file}_manifest.yaml')
    write_manifest(manifest_file, 'analyze-g2', config_data, command, [metrics_file], results, start_time)
    return manifest_file


def analyze_franson_wrapper(sweep_file, config_data, output_dir, output_file='franson', use='v_data', command=()):
    """
    Fringe visibility, singles flatness and entanglement-witness verdict of a simulated Franson sweep.

    Args:
    sweep_file (str): sweep table written by simulate_franson_wrapper
    config_data (dict): resolved config
    output_dir (str): directory to write to
    output_file (str): base name of the outputs
    use (str): visibility the verdict is applied to, 'v_data' or 'v_fit'
    command (list): command line recorded in the manifest

    Returns:
    manifest_file (str): path to the run manifest
    """

    start_time = timestamp()
    output_dir = prepare_output_dir(output_dir)
    if not exists(sweep_file):
        raise IOError(f'Could not find sweep table {sweep_file}')
    table = pd.read_csv(sweep_file)
    root = dirname(abspath(sweep_file))
    limit = config_data['analysis']['excluded_fraction_limit']

    metrics, fringe_rows, settings = [], [], {}
    for setting, group in table.groupby('setting'):
        folded = bool(group['folded'].iloc[0])
        delay = float(group['delay_ps'].iloc[0])
        volts_per_rad = franson_config_from_dict(config_data, folded).dli_signal.voltage_per_period / (2 * np.pi)
        points = [(row.phase, read_histogram_csv(join(root, row.histogram)))
                  for row in tqdm(group.itertuples(), total=len(group), desc='Reading histograms', leave=False)]

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always')
            vis = franson_visibility(points, delay, folded, limit)
        for w in caught:
            logging.warning(str(w.message))
            click.echo(str(w.message))

        verdict = bell_threshold(vis, use=use)
        flat_s = singles_modulation(group['fringe_phase'], group['singles_signal'])
        flat_i = singles_modulation(group['fringe_phase'], group['singles_idler'])
        tag = 'folded' if folded else f'unfolded_s{setting}'
        metrics += [(f'{tag}_v_data', vis.v_data, vis.v_data_sigma, ''),
                    (f'{tag}_v_fit', vis.v_fit, vis.v_fit_sigma, ''),
                    (f'{tag}_period', vis.phase_period, vis.phase_period_sigma, 'rad'),
                    (f'{tag}_period_voltage', vis.phase_period * volts_per_rad,
                     vis.phase_period_sigma * volts_per_rad, 'V'),
                    (f'{tag}_bell_margin', verdict.margin_sigma, None, 'sigma'),
                    (f'{tag}_singles_signal_depth', flat_s.depth, flat_s.sigma, ''),
                    (f'{tag}_singles_idler_depth', flat_i.depth, flat_i.sigma, '')]
        click.echo(f'{tag}: {use} = {verdict.value:.4f} +/- {verdict.sigma:.4f} -> '
                   f'{"PASS" if verdict.passed else "FAIL"} (bound {BELL_BOUND:.4f}, '
                   f'margin {verdict.margin_sigma:.1f} sigma)')

        by_phase = dict(zip(group['phase'], group['voltage']))
        for phase, area, sigma, side in zip(vis.phases, vis.central_areas, vis.central_sigmas, vis.side_areas):
            fringe_rows.append({'setting': setting, 'folded': folded, 'phase': phase,
                                'voltage': by_phase.get(phase, phase * volts_per_rad),
                                'central_area': area, 'central_sigma': sigma, 'side_area': side})
        settings[tag] = {'folded': folded, 'v_data': vis.v_data, 'v_data_sigma': vis.v_data_sigma,
                         'v_fit': vis.v_fit, 'v_fit_sigma': vis.v_fit_sigma,
                         'period': vis.phase_period, 'period_sigma': vis.phase_period_sigma,
                         'period_voltage': vis.phase_period * volts_per_rad,
                         'bell_pass': verdict.passed, 'bell_margin_sigma': float(verdict.margin_sigma),
                         'singles_flat': bool(flat_s.flat and flat_i.flat),
                         'excluded': len(vis.excluded)}

        fig = plot_fringe(vis, group['phase'], group['singles_signal'], group['singles_idler'],
                          volts_per_rad=volts_per_rad, headless=True)
        save_figure(fig, join(output_dir, f'{output_file}_{tag}'), output_dir)

    metrics_file = join(output_dir, f'{output_file}_metrics.txt')
    emit_metrics(metrics, metrics_file)
    fringe_file = join(output_dir, f'{output_file}_fringe.csv')
    with atomic_write(fringe_file, 'w') as f:
        pd.DataFrame(fringe_rows).to_csv(f, index=False)

    manifest_file = join(output_dir, f'{output_file}_manifest.yaml')
    write_manifest(manifest_file, 'analyze-franson', config_data, command, [metrics_file, fringe_file],
                   {'input': abspath(sweep_file), 'use': use, 'settings': settings}, start_time)
    return manifest_file


def point_seed(seed, index):
    """Seed of sweep point ``index``, independent of how the points are scheduled."""
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(index),)).generate_state(1, np.uint64)[0])


def sweep_point(config_data, experiment, index, power, duration, seed, points_dir):
    """
    Simulate and analyze one power point of a sweep.

    Args:
    config_data (dict): resolved config
    experiment (str): 'pairs' or 'g2'
    index (int): point index
    power (float): pump power (mW)
    duration (float): acquisition time (s)
    seed (int): seed for this point
    points_dir (str): directory for per-point files

    Returns:
    row (dict): per-point results
    """

    config = experiment_config(config_data).with_overrides(power=power, duration=duration, seed=seed)
    row = {'index': index, 'power_mw': power, 'duration_s': duration, 'seed': seed, 'status': 'ok'}

    if experiment == 'pairs':
        stream = simulate_pairs(config)
        for role in ('signal', 'idler'):
            count = stream.count(role)
            row[f'singles_{role}'] = count / duration
            row[f'singles_{role}_sigma'] = _counting_sigma(max(count, 1), duration)
        h = _pairs_histogram(stream, config_data, config)
        write_histogram_csv(join(points_dir, f'point_{index:03d}.csv'), h)
        row['analytic_car'] = float(analytic_car(config))
        try:
            _, _, results = car_metrics(h, config_data, config)
            row.update(results)
        except AnalysisError as e:
            row['status'] = str(e)
            logging.error(f'point {index} (P={power} mW): {e}')
    else:
        stream = simulate_heralded_g2(config)
        try:
            counts_file = join(points_dir, f'point_{index:03d}_counts.csv')
            _, results = g2_metrics(stream, config_data, counts_file)
            row.update(results)
        except AnalysisError as e:
            row['status'] = str(e)
            logging.error(f'point {index} (P={power} mW): {e}')
    return row


def _fit_rows(df, x, y, model, failures):
    usable = df[np.isfinite(df[y]) & (df[f'{y}_sigma'] > 0)] if y in df else df.iloc[:0]
    points = list(zip(usable[x], usable[y], usable[f'{y}_sigma']))
    try:
        fit = fit_power_sweep(points, model)
    except ValueError as e:
        failures.append(f'{y} vs {x}: {e}')
        logging.error(f'Could not fit {y} vs {x}: {e}')
        return None
    if not fit.converged:
        failures.append(f'{y} vs {x}: fit did not converge ({fit.message})')
        logging.error(f'{model} fit of {y} did not converge: {fit.message}')
    return fit


def sweep_wrapper(config_data, output_dir, experiment='pairs', powers=None, durations=None, jobs=1,
                  output_file='sweep', command=()):
    """
    Simulate and analyze a pump-power sweep, then fit the power dependence.

    Pairs sweeps fit the on-chip PGR with R P^2 and the singles with a power law; g2 sweeps fit
    g2 with a P^2 / (1 + a P^2). With jobs > 1 the points run on a local dask cluster; each point's
    seed derives from (seed, index), so the results do not depend on jobs.

    Args:
    config_data (dict): resolved config
    output_dir (str): directory to write to
    experiment (str): 'pairs' or 'g2'
    powers (list): pump powers (mW); None uses the configured back-computed grid
    durations (list): acquisition times (s), one per power; None uses the configured grid
    jobs (int): number of parallel workers
    output_file (str): base name of the outputs
    command (list): command line recorded in the manifest

    Returns:
    manifest_file (str): path to the run manifest
    """

    if experiment not in SWEEP_EXPERIMENTS:
        raise ValueError(f'Unknown sweep experiment "{experiment}"')
    start_time = timestamp()
    output_dir = prepare_output_dir(output_dir)
    points_dir = join(output_dir, f'{output_file}_points')
    os.makedirs(points_dir, exist_ok=True)

    section = config_data['sweep']
    back_computed = powers is None
    powers = list(section[f'{experiment}_powers'] if powers is None else powers)
    if durations is None:
        durations = list(section[f'{experiment}_times']) if back_computed else [config_data['acquisition_time']]
    if len(durations) == 1:
        durations = durations * len(powers)
    if len(durations) != len(powers):
        raise ValueError(f'{len(powers)} powers but {len(durations)} durations')
    if len(powers) < 3:
        raise ValueError('A power sweep needs at least 3 points')

    seed = config_data['rng_seed']
    tasks = [(config_data, experiment, i, float(p), float(t), point_seed(seed, i), points_dir)
             for i, (p, t) in enumerate(zip(powers, durations))]
    logging.info(f'sweep {experiment}: {len(tasks)} points, jobs={jobs}')

    rows = []
    if jobs > 1:
        client, cluster = initialize_dask(jobs)
        try:
            futures = [client.submit(sweep_point, *task, pure=False) for task in tasks]
            for future in tqdm(as_completed(futures), total=len(futures), desc='Sweep points'):
                rows.append(future.result())
        except Exception as e:
            logging.error(e)
            click.echo('Sweep interrupted. Closing Dask Client. You may find logs of the error here:')
            click.echo(f'---- {join(output_dir, "pairlab.log")}')
            raise
        finally:
            close_dask(client, cluster)
    else:
        for task in tqdm(tasks, desc='Sweep points'):
            rows.append(sweep_point(*task))

    df = pd.DataFrame(rows).sort_values('index').reset_index(drop=True)
    df['back_computed_power'] = back_computed

    metrics, results = [], {'experiment': experiment, 'points': len(df), 'back_computed_power': back_computed}
    fits = {}
    failures = [f'point {row.index} (P={row.power_mw} mW): {row.status}' for row in df.itertuples()
                if row.status != 'ok']
    if experiment == 'pairs':
        fit = _fit_rows(df, 'power_mw', 'pgr', 'quadratic', failures)
        if fit is not None:
            fits['pgr'] = fit
            results['R'] = fit.param('R') / 1e6
            results['R_sigma'] = fit.err('R') / 1e6
            metrics.append(('R', results['R'], results['R_sigma'], 'MHz/mW^2'))
        # the singles power law has three parameters
        for role in (('signal', 'idler') if len(df) > 3 else ()):
            fit = _fit_rows(df, 'power_mw', f'singles_{role}', 'power_law', failures)
            if fit is not None:
                fits[f'singles_{role}'] = fit
                results[f'singles_{role}_exponent'] = fit.param('exponent')
                results[f'singles_{role}_exponent_sigma'] = fit.err('exponent')
                metrics.append((f'singles_{role}_exponent', fit.param('exponent'), fit.err('exponent'), ''))
    else:
        fit = _fit_rows(df, 'power_mw', 'g2', 'sigmoid', failures)
        if fit is not None:
            fits['g2'] = fit
            results['a'] = fit.param('a')
            results['a_sigma'] = fit.err('a')
            metrics.append(('a', results['a'], results['a_sigma'], '1/mW^2'))

    table_file = join(output_dir, f'{output_file}.csv')
    with atomic_write(table_file, 'w') as f:
        df.to_csv(f, index=False)
    metrics_file = join(output_dir, f'{output_file}_metrics.txt')
    emit_metrics(metrics, metrics_file)

    outputs = [table_file, metrics_file] + sorted(join(points_dir, f) for f in os.listdir(points_dir))
    for name, fit in fits.items():
        fig = plot_power_sweep(df, name, fit=fit, headless=True)
        outputs += save_figure(fig, join(output_dir, f'{output_file}_{name}'), output_dir)

    manifest_file = join(output_dir, f'{output_file}_manifest.yaml')
    results['failures'] = failures
    write_manifest(manifest_file, 'analyze-sweep', config_data, command, outputs, results, start_time)
    if failures:
        raise AnalysisError(f'Sweep analysis failed: {"; ".join(failures)}')
    return manifest_file


REPORT_TABLES = {
    'singles_vs_power.csv': ['power_mw', 'duration_s', 'singles_signal', 'singles_signal_sigma',
                             'singles_idler', 'singles_idler_sigma', 'back_computed_power'],
    'car_vs_power.csv': ['power_mw', 'duration_s', 'car', 'car_sigma', 'car_lower_bound', 'analytic_car',
                         'coincidence_rate', 'coincidence_rate_sigma', 'pgr', 'pgr_sigma', 'fwhm_ps',
                         'back_computed_power'],
    'g2_vs_power.csv': ['power_mw', 'duration_s', 'heralding_rate', 'heralding_rate_sigma', 'g2', 'g2_sigma',
                        'klyshko', 'klyshko_sigma', 'klyshko_alt', 'klyshko_alt_sigma', 'back_computed_power'],
}


def _output_ending(manifest, suffix):
    for entry in manifest.get('outputs', []):
        if entry['path'].endswith(suffix) and exists(entry['path']):
            return entry['path']
    return None


def _single_run_row(manifest):
    results = manifest.get('results', {})
    row = {k: v for k, v in results.items() if not isinstance(v, (dict, list))}
    row['power_mw'] = results.get('pump_power', manifest['config']['source']['pump_power'])
    row['duration_s'] = results.get('acquisition_time', manifest['config']['acquisition_time'])
    row['back_computed_power'] = False
    return row


def report_wrapper(manifest_files, output_dir, output_file='report'):
    """
    Collect run manifests into plot-ready tables, a text summary and figures.

    Missing manifests or output files are listed in the summary and skipped with a warning.

    Args:
    manifest_files (list): manifest paths
    output_dir (str): directory to write to
    output_file (str): base name of the run table and summary

    Returns:
    written (list): paths of the files written
    """

    if len(manifest_files) == 0:
        raise click.UsageError('report needs at least one manifest')
    output_dir = prepare_output_dir(output_dir)

    runs, problems = [], []
    per_power = {name: [] for name in REPORT_TABLES}
    fringes, franson = [], {}
    for path in tqdm(manifest_files, desc='Reading manifests'):
        try:
            manifest, missing = read_manifest(path)
        except IOError as e:
            warnings.warn(str(e))
            problems.append(f'{path} (missing)')
            continue
        if missing:
            warnings.warn(f'{path}: {len(missing)} output file(s) missing or changed')
            problems += missing

        kind = manifest['kind']
        results = manifest.get('results', {})
        runs.append({'manifest': abspath(path), 'kind': kind, 'start_time': manifest.get('start_time'),
                     'end_time': manifest.get('end_time'), 'version': manifest.get('version'),
                     **{k: v for k, v in results.items() if not isinstance(v, (dict, list))}})

        if kind == 'analyze-sweep':
            table = _output_ending(manifest, '.csv')
            if table is None:
                continue
            df = pd.read_csv(table)
            targets = (['singles_vs_power.csv', 'car_vs_power.csv'] if results.get('experiment') == 'pairs'
                       else ['g2_vs_power.csv'])
            for name in targets:
                per_power[name] += df.reindex(columns=REPORT_TABLES[name]).to_dict('records')
        elif kind == 'analyze-car':
            per_power['car_vs_power.csv'].append(_single_run_row(manifest))
        elif kind == 'analyze-g2':
            per_power['g2_vs_power.csv'].append(_single_run_row(manifest))
        elif kind == 'analyze-franson':
            table = _output_ending(manifest, '_fringe.csv')
            if table is not None:
                fringes.append(pd.read_csv(table).assign(manifest=abspath(path)))
            franson.update(results.get('settings', {}))

    written = []
    run_file = join(output_dir, f'{output_file}.csv')
    pd.DataFrame(runs).to_csv(run_file, index=False)
    written.append(run_file)

    for name, rows in per_power.items():
        if rows:
            df = pd.DataFrame(rows).reindex(columns=REPORT_TABLES[name]).sort_values('power_mw')
            df.to_csv(join(output_dir, name), index=False)
            written.append(join(output_dir, name))
            y = {'singles_vs_power.csv': 'singles_signal', 'car_vs_power.csv': 'car',
                 'g2_vs_power.csv': 'g2'}[name]
            fig = plot_power_sweep(df, y, headless=True)
            written += save_figure(fig, join(output_dir, splitext(name)[0]), output_dir)
    if fringes:
        pd.concat(fringes).to_csv(join(output_dir, 'franson_fringe.csv'), index=False)
        written.append(join(output_dir, 'franson_fringe.csv'))

    lines = [f'pairlab report ({timestamp()})', f'{len(runs)} run(s)', '']
    for run in runs:
        lines.append(f'{run["kind"]:18s} {basename(run["manifest"])}')
    for tag, s in franson.items():
        lines.append(f'{tag}: v_data {s["v_data"]:.4f} +/- {s["v_data_sigma"]:.4f}, v_fit {s["v_fit"]:.4f} '
                     f'+/- {s["v_fit_sigma"]:.4f}, period {s["period"]:.4f} rad ({s["period_voltage"]:.2f} V), '
                     f'{"PASS" if s["bell_pass"] else "FAIL"}')
    folded = [s['period'] for s in franson.values() if s['folded']]
    unfolded = [s['period'] for s in franson.values() if not s['folded']]
    if folded and unfolded:
        lines.append(f'folded / unfolded period ratio: {np.mean(folded) / np.mean(unfolded):.4f}')
    if problems:
        lines += ['', 'missing or changed files:'] + [f'  {p}' for p in problems]

    summary_file = join(output_dir, f'{output_file}.txt')
    with open(summary_file, 'w') as f:
        f.write('\n'.join(lines) + '\n')
    written.append(summary_file)
    click.echo('\n'.join(lines))
    return written
