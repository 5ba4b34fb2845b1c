"""
CLI for simulating photon-pair experiments and analyzing their time tags.
"""

import os
import click
from os.path import join
from pairlab.util import (command_with_config, dump_yaml, POWER, DURATION, PICOSECONDS, POWER_LIST,
                          DURATION_LIST)
from pairlab.helpers.wrappers import (simulate_pairs_wrapper, simulate_g2_wrapper, simulate_franson_wrapper,
                                      analyze_histogram_wrapper, analyze_car_wrapper, analyze_g2_wrapper,
                                      analyze_franson_wrapper, sweep_wrapper, report_wrapper)

orig_init = click.core.Option.__init__


def new_init(self, *args, **kwargs):
    orig_init(self, *args, **kwargs)
    self.show_default = True


click.core.Option.__init__ = new_init

FRANSON_ALIASES = {
    'power': 'franson.pump_power',
    'duration': 'franson.acquisition_time',
    'phases': 'franson.phases',
    'folded': 'franson.folded',
    'bin_width': 'franson.bin_width',
    'span': 'franson.span',
}
SWEEP_ALIASES = {'experiment': 'sweep.experiment'}


@click.group()
@click.version_option()
def cli():
    pass


@cli.group(help='Simulate time-tag streams and histograms')
def simulate():
    pass


@cli.group(help='Analyze time tags and coincidence histograms')
def analyze():
    pass


def common_options(function):
    """
    Decorator function for the Click parameters shared by every config-driven command.

    Args:
    function: Function to add enclosed parameters to as click options.

    Returns:
    function: Updated function including shared parameters.
    """

    function = click.option('--config-file', type=click.Path(), envvar='PAIRLAB_CONFIG',
                            help='Path to configuration file')(function)
    function = click.option('--output-dir', '-o', default=os.getcwd(), type=click.Path(),
                            help='Directory to store results')(function)
    function = click.option('--print-config', is_flag=True, help='Print the resolved configuration and exit')(function)
    return function


def common_simulation_options(function):
    """
    Decorator function for the Click parameters shared by the simulation commands.

    Args:
    function: Function to add enclosed parameters to as click options.

    Returns:
    function: Updated function including shared parameters.
    """

    function = click.option('--seed', type=int, default=None, help='Master RNG seed')(function)
    function = click.option('--power', type=POWER, default=None,
                            help='Pump power in the feeder waveguide, e.g. 50uW')(function)
    function = click.option('--duration', type=DURATION, default=None,
                            help='Acquisition time, e.g. 30s')(function)
    return function


def common_analysis_options(function):
    """
    Decorator function for the Click parameters shared by the histogram analysis commands.

    Args:
    function: Function to add enclosed parameters to as click options.

    Returns:
    function: Updated function including shared parameters.
    """

    function = click.option('--bin-width', type=PICOSECONDS, default=None, help='Histogram bin width, e.g. 160ps')(function)
    function = click.option('--span', type=PICOSECONDS, default=None, help='Histogram span, e.g. 100ns')(function)
    return function


def command_line(ctx):
    """Command path and the explicitly given options of the running command, for the run manifest."""
    args = ctx.command_path.split()
    for param in ctx.command.params:
        source = ctx.get_parameter_source(param.name)
        if source is None or source.name == 'DEFAULT':
            continue
        value = ctx.params.get(param.name)
        if isinstance(param, click.Argument):
            args += [str(v) for v in (value if isinstance(value, (list, tuple)) else [value])]
        elif getattr(param, 'is_flag', False):
            args.append(param.opts[0] if value or not param.secondary_opts else param.secondary_opts[0])
        else:
            args.append(f'{param.opts[0]}={value}')
    return args


@simulate.command(name='pairs', cls=command_with_config('config_file'),
                  help='Simulate the two-detector (signal, idler) experiment')
@common_options
@common_simulation_options
@click.option('--output-file', default='pairs', type=str, help='Base name of the output files')
@click.option('--csv', 'write_csv', is_flag=True, help='Also write a channel,time_ps CSV export')
@click.pass_context
def simulate_pairs(ctx, output_dir, output_file, write_csv, config_data, **cli_args):
    simulate_pairs_wrapper(config_data, output_dir, output_file, write_csv, command_line(ctx))


@simulate.command(name='g2', cls=command_with_config('config_file'),
                  help='Simulate the three-detector heralded g2 experiment')
@common_options
@common_simulation_options
@click.option('--output-file', default='g2', type=str, help='Base name of the output files')
@click.option('--csv', 'write_csv', is_flag=True, help='Also write a channel,time_ps CSV export')
@click.pass_context
def simulate_g2(ctx, output_dir, output_file, write_csv, config_data, **cli_args):
    simulate_g2_wrapper(config_data, output_dir, output_file, write_csv, command_line(ctx))


@simulate.command(name='franson', cls=command_with_config('config_file', FRANSON_ALIASES),
                  help='Simulate a Franson phase sweep as one coincidence histogram per phase point')
@common_options
@common_simulation_options
@common_analysis_options
@click.option('--folded/--unfolded', default=None, help='One shared interferometer, or one per photon')
@click.option('--phases', type=int, default=None, help='Number of phase points per fringe setting')
@click.option('--output-file', default='franson', type=str, help='Base name of the output files')
@click.pass_context
def simulate_franson(ctx, output_dir, output_file, config_data, **cli_args):
    simulate_franson_wrapper(config_data, output_dir, output_file, command_line(ctx))


@analyze.command(name='histogram', cls=command_with_config('config_file'),
                 help='Build the signal-idler start-stop histogram of a tag file')
@click.argument('input_file', type=click.Path())
@common_options
@common_analysis_options
@click.option('--output-file', default='histogram', type=str, help='Base name of the output files')
@click.pass_context
def analyze_histogram(ctx, input_file, output_dir, output_file, config_data, **cli_args):
    analyze_histogram_wrapper(input_file, config_data, output_dir, output_file, command_line(ctx))


@analyze.command(name='car', cls=command_with_config('config_file'),
                 help='Coincidence-to-accidental ratio of a tag file or histogram CSV')
@click.argument('input_file', type=click.Path())
@common_options
@common_analysis_options
@click.option('--output-file', default='car', type=str, help='Base name of the output files')
@click.pass_context
def analyze_car(ctx, input_file, output_dir, output_file, config_data, **cli_args):
    analyze_car_wrapper(input_file, config_data, output_dir, output_file, command_line(ctx))


@analyze.command(name='g2', cls=command_with_config('config_file'),
                 help='Heralded g2(0) and Klyshko efficiency of a three-detector tag file')
@click.argument('input_file', type=click.Path())
@common_options
@click.option('--window', type=PICOSECONDS, default=None, help='Coincidence window, e.g. 5ns')
@click.option('--output-file', default='g2', type=str, help='Base name of the output files')
@click.pass_context
def analyze_g2(ctx, input_file, output_dir, output_file, config_data, **cli_args):
    analyze_g2_wrapper(input_file, config_data, output_dir, output_file, command_line(ctx))


@analyze.command(name='franson', cls=command_with_config('config_file'),
                 help='Fringe visibility and entanglement verdict of a simulated Franson sweep')
@click.argument('sweep_file', type=click.Path())
@common_options
@click.option('--use', type=click.Choice(['v_data', 'v_fit']), default='v_data',
              help='Visibility the 1/sqrt(2) threshold is applied to')
@click.option('--output-file', default='franson', type=str, help='Base name of the output files')
@click.pass_context
def analyze_franson(ctx, sweep_file, output_dir, output_file, use, config_data, **cli_args):
    analyze_franson_wrapper(sweep_file, config_data, output_dir, output_file, use, command_line(ctx))


@analyze.command(name='sweep', cls=command_with_config('config_file', SWEEP_ALIASES),
                 help='Simulate and analyze a pump-power sweep and fit its power dependence')
@common_options
@common_analysis_options
@click.option('--seed', type=int, default=None, help='Master RNG seed')
@click.option('--duration', type=DURATION, default=None, help='Acquisition time for every point when --powers is given')
@click.option('--experiment', type=click.Choice(['pairs', 'g2']), default=None, help='Experiment to sweep')
@click.option('--powers', type=POWER_LIST, default=None, help='Comma-separated pump powers, e.g. 10uW,20uW,40uW')
@click.option('--durations', type=DURATION_LIST, default=None, help='Comma-separated acquisition times, one per power')
@click.option('--window', type=PICOSECONDS, default=None, help='Coincidence window of g2 sweeps')
@click.option('--jobs', '-j', type=int, default=None, help='Number of parallel workers')
@click.option('--output-file', default='sweep', type=str, help='Base name of the output files')
@click.pass_context
def analyze_sweep(ctx, output_dir, output_file, experiment, powers, durations, jobs, config_data, **cli_args):
    sweep_wrapper(config_data, output_dir, experiment, powers, durations, jobs, output_file, command_line(ctx))


@cli.command(name='report', help='Collect run manifests into plot-ready tables and a summary')
@click.argument('manifests', nargs=-1, required=True, type=click.Path())
@click.option('--output-dir', '-o', default=join(os.getcwd(), 'report'), type=click.Path(),
              help='Directory to store the report')
@click.option('--output-file', default='report', type=str, help='Base name of the run table and summary')
def report(manifests, output_dir, output_file):
    report_wrapper(list(manifests), output_dir, output_file)


@cli.command(name='print-config', cls=command_with_config('config_file'),
             help='Print the packaged defaults merged with a config file')
@click.option('--config-file', type=click.Path(), envvar='PAIRLAB_CONFIG', help='Path to configuration file')
def print_config(config_data, **cli_args):
    click.echo(dump_yaml(config_data), nl=False)


if __name__ == '__main__':
    cli()
