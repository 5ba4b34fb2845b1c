"""
Helper functions for reading and writing pairlab data: binary time-tag files, CSV exports,
histogram CSVs, triple counts, run manifests and metric lines.

Tag file layout (little-endian):
    header   magic b'PAIRLAB1' | version u16 | resolution_ps u32 | channel_count u8 | duration_ps u64 | seed u64
    channels channel_count x u8 channel ids
    records  (channel u8, time_ps u64), 9 bytes each, time-ordered
"""

import struct
import datetime
import numpy as np
import pandas as pd
from os.path import exists, join, dirname, basename, abspath
from pairlab import __version__
from pairlab.analysis import Histogram, TripleCoincidenceCounts
from pairlab.sim import TagStream, CHANNEL_ROLES
from pairlab.util import TagFileError, atomic_write, file_checksum, read_yaml, write_yaml

MAGIC = b'PAIRLAB1'
VERSION = 1
HEADER = struct.Struct('<8sHIBQQ')
RECORD = np.dtype([('channel', '<u1'), ('time', '<u8')])
TIMESTAMP_FORMAT = '%Y-%m-%d_%H-%M-%S'


def timestamp():
    return f'{datetime.datetime.now():{TIMESTAMP_FORMAT}}'


def write_tag_file(path, stream, resolution_ps=80):
    """
    Write a TagStream to the binary tag format.

    Args:
    path (str): destination file
    stream (TagStream): events to write
    resolution_ps (int): TDC resolution stored in the header
    """

    if resolution_ps <= 0:
        raise ValueError('Resolution must be positive')
    channel_ids = np.array(sorted(stream.channel_map), dtype=np.uint8)
    records = np.empty(len(stream), dtype=RECORD)
    records['channel'] = stream.channels
    records['time'] = stream.times

    with atomic_write(path, 'wb') as f:
        f.write(HEADER.pack(MAGIC, VERSION, int(resolution_ps), len(channel_ids),
                            stream.duration_ps, int(stream.seed)))
        f.write(channel_ids.tobytes())
        f.write(records.tobytes())


def read_tag_header(path):
    """
    Read and validate the fixed header of a tag file.

    Args:
    path (str): tag file

    Returns:
    header (dict): version, resolution_ps, channel_count, duration_ps, seed
    """

    with open(path, 'rb') as f:
        raw = f.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise TagFileError(f'{path}: truncated header ({len(raw)} of {HEADER.size} bytes)')
    magic, version, resolution, channel_count, duration_ps, seed = HEADER.unpack(raw)
    if magic != MAGIC:
        raise TagFileError(f'{path}: not a pairlab tag file (magic {magic!r})')
    if version != VERSION:
        raise TagFileError(f'{path}: unsupported tag file version {version}')
    if resolution == 0:
        raise TagFileError(f'{path}: resolution_ps must be positive')
    return {'version': version, 'resolution_ps': resolution, 'channel_count': channel_count,
            'duration_ps': duration_ps, 'seed': seed}


def read_tag_file(path):
    """
    Read a binary tag file.

    Args:
    path (str): tag file

    Returns:
    stream (TagStream): events with roles looked up from the fixed channel ids
    header (dict): header fields
    """

    header = read_tag_header(path)
    with open(path, 'rb') as f:
        f.seek(HEADER.size)
        table = f.read(header['channel_count'])
        body = f.read()
    if len(table) < header['channel_count']:
        raise TagFileError(f'{path}: truncated channel table')
    if len(body) % RECORD.itemsize:
        raise TagFileError(f'{path}: truncated record block ({len(body)} bytes is not a multiple of '
                           f'{RECORD.itemsize})')
    if header['duration_ps'] == 0:
        raise TagFileError(f'{path}: zero duration in header')

    records = np.frombuffer(body, dtype=RECORD)
    channel_map = {int(c): CHANNEL_ROLES.get(int(c), f'ch{int(c)}') for c in table}
    try:
        stream = TagStream(records['channel'].copy(), records['time'].astype(np.int64),
                           header['duration_ps'] / 1e12, channel_map, header['seed'])
    except ValueError as e:
        raise TagFileError(f'{path}: {e}')
    return stream, header


def write_tag_csv(path, stream):
    """Plain CSV export with columns channel,time_ps."""
    df = pd.DataFrame({'channel': stream.channels, 'time_ps': stream.times})
    with atomic_write(path, 'w') as f:
        df.to_csv(f, index=False)


def read_tag_csv(path, duration, channel_map=None):
    """
    Read a channel,time_ps CSV back into a TagStream.

    Args:
    path (str): csv file
    duration (float): acquisition time (s)
    channel_map (dict): channel id -> role; defaults to the fixed roles of the ids present

    Returns:
    stream (TagStream): events sorted by (time, channel)
    """

    df = pd.read_csv(path)
    if list(df.columns) != ['channel', 'time_ps']:
        raise TagFileError(f'{path}: expected columns channel,time_ps, got {",".join(df.columns)}')
    df = df.sort_values(['time_ps', 'channel'], kind='mergesort')
    if channel_map is None:
        channel_map = {int(c): CHANNEL_ROLES.get(int(c), f'ch{int(c)}') for c in df['channel'].unique()}
    return TagStream(df['channel'].to_numpy(), df['time_ps'].to_numpy(), duration, channel_map)


def write_histogram_csv(path, h):
    """
    Histogram CSV with columns bin_start_ps,count; a leading comment line carries the acquisition time.
    """

    df = pd.DataFrame({'bin_start_ps': h.edges[:-1], 'count': h.counts})
    with atomic_write(path, 'w') as f:
        f.write(f'# acquisition_time_s={h.acquisition_time!r}\n')
        df.to_csv(f, index=False)


def read_histogram_csv(path, acquisition_time=None):
    """
    Read a histogram CSV.

    Args:
    path (str): csv file
    acquisition_time (float): integration time (s) when the file has no acquisition-time comment

    Returns:
    histogram (Histogram): counts on uniform bins
    """

    with open(path, 'r') as f:
        first = f.readline()
    if first.startswith('# acquisition_time_s='):
        acquisition_time = float(first.split('=', 1)[1])
    if acquisition_time is None:
        raise TagFileError(f'{path}: no acquisition time recorded')

    try:
        df = pd.read_csv(path, comment='#')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise TagFileError(f'{path}: {e}')
    if list(df.columns) != ['bin_start_ps', 'count']:
        raise TagFileError(f'{path}: expected columns bin_start_ps,count')
    if len(df) == 0:
        raise TagFileError(f'{path}: no bins')

    starts = df['bin_start_ps'].to_numpy(dtype=float)
    widths = np.diff(starts)
    if len(widths) and not np.allclose(widths, widths[0]):
        raise TagFileError(f'{path}: bins are not uniform')
    bin_width = widths[0] if len(widths) else 1.
    counts = df['count'].to_numpy()
    return Histogram(bin_width=float(bin_width), origin=float(starts[0]), counts=counts,
                     acquisition_time=acquisition_time)


TRIPLE_FIELDS = ['n_a', 'n_b', 'n_c', 'n_ab', 'n_ac', 'n_bc', 'n_abc', 'window', 'acquisition_time', 'symmetric']


def write_triple_counts(path, counts):
    """One-row CSV with the raw counts of the heralded g2 experiment."""
    df = pd.DataFrame([{k: getattr(counts, k) for k in TRIPLE_FIELDS}])
    with atomic_write(path, 'w') as f:
        df.to_csv(f, index=False)


def read_triple_counts(path):
    """
    Read a triple-counts CSV written by write_triple_counts.

    Args:
    path (str): csv file

    Returns:
    counts (TripleCoincidenceCounts): raw counts
    """

    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise TagFileError(f'{path}: {e}')
    if list(df.columns) != TRIPLE_FIELDS or len(df) != 1:
        raise TagFileError(f'{path}: expected one row with columns {",".join(TRIPLE_FIELDS)}')
    row = df.iloc[0]
    try:
        return TripleCoincidenceCounts(**{k: int(row[k]) for k in TRIPLE_FIELDS[:7]},
                                       window=float(row['window']),
                                       acquisition_time=float(row['acquisition_time']),
                                       symmetric=bool(row['symmetric']))
    except ValueError as e:
        raise TagFileError(f'{path}: {e}')


def format_metric(name, value, sigma=None, units=''):
    """
    One metric as a tab-separated line: name, value, sigma, units.
    """

    sigma = np.nan if sigma is None else sigma
    return f'{name}\t{value:.6g}\t{sigma:.6g}\t{units}'


def write_metrics(path, metrics):
    with atomic_write(path, 'w') as f:
        for metric in metrics:
            f.write(format_metric(*metric) + '\n')


def read_metrics(path):
    """
    Read metric lines.

    Returns:
    metrics (pandas.DataFrame): columns name, value, sigma, units
    """

    return pd.read_csv(path, sep='\t', header=None, names=['name', 'value', 'sigma', 'units'],
                       keep_default_na=False, na_values=['nan'])


def _plain(value):
    # numpy scalars and arrays as builtin types for the safe yaml dumper
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_manifest(path, kind, config, command, outputs, results=None, start_time=None):
    """
    Write a run manifest next to the run's outputs.

    Args:
    path (str): manifest yaml path
    kind (str): run type ('simulate-pairs', 'analyze-car', ...)
    config (dict): resolved config snapshot
    command (list): command line arguments
    outputs (list): output file paths (checksummed)
    results (dict): headline results
    start_time (str): run start timestamp
    """

    root = dirname(abspath(path))
    manifest = {
        'kind': kind,
        'version': __version__,
        'command': [str(c) for c in command],
        'start_time': start_time or timestamp(),
        'end_time': timestamp(),
        'config': config,
        'outputs': [{'path': basename(p) if dirname(abspath(p)) == root else abspath(p),
                     'sha256': file_checksum(p)} for p in outputs],
        'results': results or {},
    }
    manifest = _plain(manifest)
    write_yaml(path, manifest)
    return manifest


def read_manifest(path):
    """
    Read a manifest and check its outputs.

    Args:
    path (str): manifest yaml

    Returns:
    manifest (dict): manifest contents with absolute output paths
    problems (list): outputs that are missing or whose checksum changed
    """

    if not exists(path):
        raise IOError(f'Could not find manifest {path}')
    manifest = read_yaml(path)
    if not isinstance(manifest, dict) or 'kind' not in manifest:
        raise TagFileError(f'{path}: not a pairlab manifest')

    root = dirname(abspath(path))
    problems = []
    for entry in manifest.get('outputs', []):
        entry['path'] = join(root, entry['path'])
        if not exists(entry['path']):
            problems.append(f'{entry["path"]} (missing)')
        elif file_checksum(entry['path']) != entry['sha256']:
            problems.append(f'{entry["path"]} (checksum changed)')
    return manifest, problems
