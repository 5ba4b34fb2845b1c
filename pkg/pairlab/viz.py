"""
Visualization operations for coincidence histograms, power sweeps and Franson fringes.
"""

import click
import logging
import numpy as np
import seaborn as sns
from os.path import join
import matplotlib.pyplot as plt
from pairlab.fitting import model_eval

AXIS_LABELS = {
    'pgr': 'On-chip PGR (Hz)',
    'singles_signal': 'Signal singles (Hz)',
    'singles_idler': 'Idler singles (Hz)',
    'car': 'CAR',
    'g2': 'Heralded g2(0)',
    'klyshko': 'Klyshko efficiency',
}


def save_figure(fig, save_file, output_dir):
    """
    Save a figure as png and pdf.

    Args:
    fig (plt.Figure): figure to save
    save_file (str): path without extension
    output_dir (str): directory containing the run log

    Returns:
    written (list): paths of the saved files; empty when plotting failed
    """

    written = []
    try:
        for ext in ('png', 'pdf'):
            fig.savefig(f'{save_file}.{ext}')
            written.append(f'{save_file}.{ext}')
    except Exception as e:
        logging.error(e)
        click.echo(f'could not save {save_file}')
        click.echo(f'You may find error logs here: {join(output_dir, "pairlab.log")}')
    finally:
        plt.close(fig)
    return written


def plot_histogram(h, peak=None, window=None, headless=False):
    """
    Plot a start-stop histogram, optionally with its peak fit and CAR window.

    Args:
    h (Histogram): histogram
    peak (FitResult): gaussian peak fit
    window (tuple): (lo, hi) CAR window (ps)
    headless (bool): bool flag to run in headless environment

    Returns:
    fig (plt.Figure): figure to save
    """

    if headless:
        plt.switch_backend('agg')

    sns.set_style('ticks')
    fig, ax = plt.subplots(1, 1, figsize=(8, 4))
    ax.step(h.centers / 1e3, h.counts, where='mid', color='k', lw=0.8)

    if peak is not None:
        center, sigma = peak.param('center'), peak.param('sigma')
        x = np.linspace(center - 6 * sigma, center + 6 * sigma, 400)
        ax.plot(x / 1e3, model_eval('gaussian', peak.values, x)[0], 'r-', lw=1.5,
                label=f'FWHM {peak.extra.get("fwhm", np.nan) / 1e3:.3f} ns')
        ax.set_xlim((center - 20 * sigma) / 1e3, (center + 20 * sigma) / 1e3)
        ax.legend(frameon=False)
    if window is not None:
        for edge in window:
            ax.axvline(edge / 1e3, color='C0', ls='--', lw=0.8)

    ax.set_xlabel('Delay (ns)')
    ax.set_ylabel(f'Counts per {h.bin_width:g} ps')
    sns.despine()
    return fig


def plot_power_sweep(df, y, fit=None, headless=False):
    """
    Plot a quantity against pump power with error bars and an optional fitted curve.

    Args:
    df (pandas.DataFrame): sweep table with power_mw, y and optionally y_sigma columns
    y (str): column to plot
    fit (FitResult): fit of y against power (mW)
    headless (bool): bool flag to run in headless environment

    Returns:
    fig (plt.Figure): figure to save
    """

    if headless:
        plt.switch_backend('agg')

    sns.set_style('ticks')
    fig, ax = plt.subplots(1, 1, figsize=(6, 4))
    p = df['power_mw'].to_numpy(dtype=float)
    values = df[y].to_numpy(dtype=float)
    sigma = df[f'{y}_sigma'].to_numpy(dtype=float) if f'{y}_sigma' in df else None
    ax.errorbar(p * 1e3, values, yerr=sigma, fmt='o', color='k', ms=4, capsize=2)

    if fit is not None and len(p):
        x = np.linspace(0.5 * p.min(), 1.05 * p.max(), 200)
        ax.plot(x * 1e3, model_eval(fit.model, fit.values, x)[0], 'r-', lw=1.2)

    if y == 'car':
        ax.set_yscale('log')
    ax.set_xlabel('Pump power (uW)')
    ax.set_ylabel(AXIS_LABELS.get(y, y))
    sns.despine()
    return fig


def plot_fringe(vis, phases, singles_signal, singles_idler, volts_per_rad=None, headless=False):
    """
    Plot the Franson central-peak fringe with its sinusoid fit above the normalized singles.

    Args:
    vis (VisibilityResult): visibility analysis
    phases (array-like): swept phase of every point (rad)
    singles_signal (array-like): signal singles per point
    singles_idler (array-like): idler singles per point
    volts_per_rad (float): heater calibration; labels the top axis in volts when given
    headless (bool): bool flag to run in headless environment

    Returns:
    fig (plt.Figure): figure to save
    """

    if headless:
        plt.switch_backend('agg')

    sns.set_style('ticks')
    fig, (ax, ax_singles) = plt.subplots(2, 1, figsize=(7, 6), sharex=True,
                                         gridspec_kw={'height_ratios': [3, 1]})
    ax.errorbar(vis.phases, vis.central_areas, yerr=vis.central_sigmas, fmt='o', color='k', ms=4, capsize=2)
    if vis.fringe_fit is not None:
        x = np.linspace(vis.phases.min(), vis.phases.max(), 400)
        ax.plot(x, model_eval('sinusoid', vis.fringe_fit.values, x)[0], 'r-', lw=1.2)
    ax.set_ylabel('Central-peak counts')
    ax.set_title(f'V = {vis.v_fit:.3f} +/- {vis.v_fit_sigma:.3f}')

    phases = np.asarray(phases, dtype=float)
    order = np.argsort(phases)
    for counts, label in ((singles_signal, 'signal'), (singles_idler, 'idler')):
        counts = np.asarray(counts, dtype=float)
        ax_singles.plot(phases[order], counts[order] / counts.mean(), '.-', label=label)
    ax_singles.set_ylim(0.8, 1.2)
    ax_singles.set_ylabel('Singles (norm.)')
    ax_singles.set_xlabel('DLI phase (rad)')
    ax_singles.legend(frameon=False, ncol=2)

    if volts_per_rad:
        top = ax.secondary_xaxis('top', functions=(lambda v: v * volts_per_rad, lambda v: v / volts_per_rad))
        top.set_xlabel('Heater voltage (V)')
    sns.despine()
    return fig
