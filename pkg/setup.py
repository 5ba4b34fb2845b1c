from setuptools import setup, find_packages
import os.path
import codecs


def read(rel_path):
    here = os.path.abspath(os.path.dirname(__file__))
    with codecs.open(os.path.join(here, rel_path), 'r') as fp:
        return fp.read()

def get_version(rel_path):
    for line in read(rel_path).splitlines():
        if line.startswith('__version__'):
            delim = '"' if '"' in line else "'"
            return line.split(delim)[1]
    else:
        raise RuntimeError("Unable to find version string.")


setup(
    name='pairlab',
    description='Simulation and time-tag analysis of microring photon-pair sources',
    version=get_version('pairlab/__init__.py'),
    platforms=['mac', 'unix'],
    packages=find_packages(exclude=['tests', 'tests.*']),
    package_data={'pairlab': ['default_config.yaml']},
    install_requires=['numpy>=1.20', 'scipy>=1.6', 'pandas>=1.2', 'matplotlib>=3.3', 'seaborn>=0.11.0',
                      'tqdm>=4.48.0', 'click>=8.0', 'ruamel.yaml>=0.17', 'dask>=2021.3.0',
                      'distributed>=2021.3.0', 'psutil>=5.6.7'],
    extras_require={'test': ['pytest', 'pytest-cov'], 'docs': ['sphinx', 'sphinx-click', 'sphinx_rtd_theme']},
    python_requires='>=3.8',
    entry_points={'console_scripts': ['pairlab = pairlab.cli:cli']}
)
