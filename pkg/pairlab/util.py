"""
Utility functions for configuration handling, unit-suffixed command-line values, Dask initialization and file bookkeeping.
"""

import os
import re
import click
import dask
import hashlib
import psutil
import logging
import tempfile
from io import StringIO
from copy import deepcopy
from contextlib import contextmanager
from os.path import join, dirname, exists, abspath
from ruamel.yaml import YAML
from ruamel.yaml.error import YAMLError
from dask.distributed import Client

CONFIG_ENV_VAR = 'PAIRLAB_CONFIG'
DEFAULT_CONFIG = join(dirname(abspath(__file__)), 'default_config.yaml')


class ConfigError(ValueError):
    """Invalid or unparseable configuration."""


class TagFileError(IOError):
    """A time-tag or histogram file does not match its expected format."""


class AnalysisError(RuntimeError):
    """An analysis could not produce a result from the given data."""


class NoPeakError(AnalysisError):
    """No coincidence peak stands out of the accidental floor."""


class EventBudgetError(MemoryError):
    """A simulation would produce more events than the configured cap."""


def _yaml():
    yaml = YAML(typ='safe', pure=True)
    yaml.default_flow_style = False
    return yaml


def read_yaml(yaml_file):
    """
    Read yaml file and return dictionary representation of file contents.

    Args:
    yaml_file (str): path to yaml file

    Returns:
    return_dict (dict): dict of yaml file contents, {} if the file cannot be opened
    """

    try:
        with open(yaml_file, 'r') as f:
            return_dict = _yaml().load(f)
    except IOError:
        return_dict = {}

    return return_dict if return_dict is not None else {}


def write_yaml(yaml_file, data):
    """
    Write a dict to a yaml file.

    Args:
    yaml_file (str): destination path
    data (dict): content
    """

    with open(yaml_file, 'w') as f:
        _yaml().dump(data, f)


def dump_yaml(data):
    """
    Render a dict as a YAML string.
    """

    stream = StringIO()
    _yaml().dump(data, stream)
    return stream.getvalue()


def merge_config(base, update, path=''):
    """
    Recursively merge ``update`` onto ``base``; keys absent from ``base`` are rejected.

    Args:
    base (dict): reference config (packaged defaults)
    update (dict): user values
    path (str): dotted prefix used in error messages

    Returns:
    merged (dict): new dict
    """

    merged = deepcopy(base)
    for key, value in (update or {}).items():
        where = f'{path}{key}'
        if key not in base:
            raise ConfigError(f'Unknown config key "{where}"')
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f'Config key "{where}" must be a section')
            merged[key] = merge_config(base[key], value, path=f'{where}.')
        else:
            merged[key] = value
    return merged


def load_config(config_file=None):
    """
    Resolve the configuration: packaged defaults, overlaid with the user config file if given.

    Args:
    config_file (str): path to a user yaml config, or None for the defaults only

    Returns:
    config (dict): resolved nested config
    """

    try:
        with open(DEFAULT_CONFIG, 'r') as f:
            defaults = _yaml().load(f)
    except YAMLError as e:
        raise ConfigError(f'Could not parse packaged defaults: {e}')

    if config_file is None:
        return defaults

    if not exists(config_file):
        raise IOError(f'Could not find config file {config_file}')
    try:
        with open(config_file, 'r') as f:
            user = _yaml().load(f)
    except YAMLError as e:
        raise ConfigError(f'Could not parse config file {config_file}: {e}')
    if user is not None and not isinstance(user, dict):
        raise ConfigError(f'Config file {config_file} must contain a mapping of sections')

    return merge_config(defaults, user)


def get_config_value(config, path):
    node = config
    for key in path.split('.'):
        node = node[key]
    return node


def set_config_value(config, path, value):
    keys = path.split('.')
    node = config
    for key in keys[:-1]:
        node = node[key]
    node[keys[-1]] = value


def experiment_config(config):
    """
    Build a validated ExperimentConfig from a resolved config dict.

    Args:
    config (dict): resolved config (see load_config)

    Returns:
    experiment (ExperimentConfig): validated experiment
    """

    from pairlab.model import ExperimentConfig
    try:
        return ExperimentConfig.from_dict(config)
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f'Invalid experiment configuration: {e}')


class UnitParam(click.ParamType):
    """
    Click parameter for numbers that must carry a unit suffix, converted to a canonical unit.
    """

    _pattern = re.compile(r'^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-zµμ]+)\s*$')

    def __init__(self, name, units, integer=False):
        self.name = name
        self.units = units
        self.integer = integer

    def parse(self, value):
        if str(value).strip() in ('0', '0.0'):
            # zero needs no unit
            return 0 if self.integer else 0.
        match = self._pattern.match(str(value))
        if match is None:
            raise ValueError(f'"{value}" needs a unit suffix, one of: {", ".join(self.units)}')
        number, unit = match.groups()
        unit = unit.replace('µ', 'u').replace('μ', 'u')
        if unit not in self.units:
            raise ValueError(f'Unknown unit "{unit}" in "{value}"; use one of: {", ".join(self.units)}')
        out = float(number) * self.units[unit]
        return int(round(out)) if self.integer else out

    def convert(self, value, param, ctx):
        if value is None or isinstance(value, (int, float)):
            # config-file values are already in canonical units
            return value
        try:
            return self.parse(value)
        except ValueError as e:
            self.fail(str(e), param, ctx)


class UnitListParam(UnitParam):
    """Comma-separated list of unit-suffixed numbers."""

    def convert(self, value, param, ctx):
        if value is None or isinstance(value, (list, tuple)):
            return value
        try:
            return [self.parse(v) for v in str(value).split(',') if v.strip()]
        except ValueError as e:
            self.fail(str(e), param, ctx)


POWER = UnitParam('power', {'W': 1e3, 'mW': 1., 'uW': 1e-3, 'nW': 1e-6})
DURATION = UnitParam('duration', {'s': 1., 'ms': 1e-3, 'min': 60.})
PICOSECONDS = UnitParam('time', {'ps': 1., 'ns': 1e3, 'us': 1e6}, integer=True)
POWER_LIST = UnitListParam('powers', {'W': 1e3, 'mW': 1., 'uW': 1e-3, 'nW': 1e-6})
DURATION_LIST = UnitListParam('durations', {'s': 1., 'ms': 1e-3, 'min': 60.})

# cli parameter name -> config path, shared by the commands
DEFAULT_ALIASES = {
    'power': 'source.pump_power',
    'duration': 'acquisition_time',
    'seed': 'rng_seed',
    'bin_width': 'analysis.bin_width',
    'span': 'analysis.span',
    'window': 'analysis.triple_window',
    'jobs': 'sweep.jobs',
}


# adapted from https://stackoverflow.com/questions/46358797/
# python-click-supply-arguments-and-options-from-a-configuration-file
def command_with_config(config_file_param_name, aliases=None):
    """
    Build a click Command class that resolves options against the experiment config.
    Hierarchy of parameters: params from cli options > params from config_file > packaged defaults.

    The resolved config dict is handed to the command as ``config_data``. A ``print_config`` flag prints
    it and exits. Exceptions map onto exit codes: config/format errors 2, I/O errors 3, analysis failures 4.

    Args:
    config_file_param_name (str): name of the option holding the config path
    aliases (dict): cli parameter name -> dotted config path, overriding DEFAULT_ALIASES entries

    Returns:
    custom_command_class (click.Command): Command subclass
    """

    param_aliases = {**DEFAULT_ALIASES, **(aliases or {})}

    class custom_command_class(click.Command):

        def invoke(self, ctx):
            try:
                config_data = load_config(ctx.params.get(config_file_param_name))

                for param, value in list(ctx.params.items()):
                    if param not in param_aliases:
                        continue
                    if value is None:
                        # fall back to the config value when the option was not given
                        ctx.params[param] = get_config_value(config_data, param_aliases[param])
                    else:
                        set_config_value(config_data, param_aliases[param], value)

                if ctx.params.pop('print_config', False):
                    click.echo(dump_yaml(config_data), nl=False)
                    ctx.exit(0)

                ctx.params['config_data'] = config_data
                return super(custom_command_class, self).invoke(ctx)
            except (ConfigError, TagFileError, EventBudgetError, ValueError) as e:
                click.echo(f'Error: {e}', err=True)
                logging.error(e)
                ctx.exit(2)
            except AnalysisError as e:
                click.echo(f'Analysis failed: {e}', err=True)
                logging.error(e)
                ctx.exit(4)
            except OSError as e:
                click.echo(f'I/O error: {e}', err=True)
                logging.error(e)
                ctx.exit(3)

    return custom_command_class


def file_checksum(path, chunk_size=1 << 20):
    """
    SHA-256 digest of a file.

    Args:
    path (str): file path
    chunk_size (int): read size

    Returns:
    digest (str): hex digest
    """

    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            sha.update(chunk)
    return sha.hexdigest()


@contextmanager
def atomic_write(path, mode='wb'):
    """
    Open a temporary file next to ``path`` and move it into place once the block exits cleanly.

    Args:
    path (str): final destination
    mode (str): file mode for the temporary file
    """

    directory = dirname(abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix='.part')
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if exists(tmp):
            os.remove(tmp)
        raise


def set_dask_config(memory={'target': 0.85, 'spill': False, 'pause': False, 'terminate': 0.95}):
    """
    Set initial dask configuration parameters

    Args:
    memory (dict): dictionary containing default dask configuration variables to ensure safe amount of resource usage.
    """

    memory = {f'distributed.worker.memory.{k}': v for k, v in memory.items()}
    dask.config.set(memory)


def get_env_cpu_and_mem():
    """
    Read the current system and return the memory and CPUs available to a local cluster.

    Returns:
    mem (float): bytes of memory to allocate to the cluster
    cpu (int): number of CPUs to allocate
    """

    mem = psutil.virtual_memory().available * 0.8
    cpu = max(1, (psutil.cpu_count() or 2) - 1)

    return mem, cpu


def initialize_dask(nworkers=1, local_processes=True, dashboard_port=':0', **kwargs):
    """
    Start a local dask cluster for running independent simulations in parallel.

    Args:
    nworkers (int): requested number of workers (capped by the CPUs available)
    local_processes (bool): use worker processes (True) or threads (False)
    dashboard_port (str): dashboard address; ':0' picks a free port
    kwargs: extra keyword arguments for dask.distributed.Client

    Returns:
    client (dask Client): initialized Client
    cluster (dask Cluster): initialized Cluster
    """

    max_mem, max_cpu = get_env_cpu_and_mem()
    if nworkers > max_cpu:
        click.echo(f'Reducing number of workers to {max_cpu} to match the number of CPUs')
    nworkers = int(min(max(1, nworkers), max_cpu))
    mem_limit = max(1, max_mem / nworkers)

    click.echo(f'Setting number of workers to: {nworkers}')
    set_dask_config()

    client = Client(processes=local_processes,
                    threads_per_worker=1,
                    memory_limit=mem_limit,
                    n_workers=nworkers,
                    dashboard_address=dashboard_port,
                    **kwargs)

    return client, client.cluster


def close_dask(client, cluster, timeout=30):
    """
    Shut down the Dask client and cluster.

    Args:
    client (Dask Client): Client object
    cluster (dask Cluster): initialized Cluster
    timeout (int): seconds to wait for a graceful shutdown
    """

    if client is not None:
        try:
            client.close(timeout=timeout)
            cluster.close(timeout=timeout)
        except Exception as e:
            logging.error(e)
            click.echo('Could not shutdown dask client')
