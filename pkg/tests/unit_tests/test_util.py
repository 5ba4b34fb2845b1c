import os
import click
import pytest
from unittest import TestCase
from click.testing import CliRunner
from pairlab.util import (read_yaml, write_yaml, merge_config, load_config, get_config_value, set_config_value,
                          experiment_config, atomic_write, file_checksum, command_with_config, ConfigError,
                          NoPeakError, POWER, DURATION, PICOSECONDS, POWER_LIST)


def make_command(action):

    @click.command(cls=command_with_config('config_file'))
    @click.option('--config-file', type=click.Path(), default=None)
    @click.option('--power', type=POWER, default=None)
    @click.option('--print-config', is_flag=True)
    def command(config_file, power, config_data):
        action(power, config_data)

    return command


class TestUtil(TestCase):

    def setUp(self):
        self.runner = CliRunner()

    def test_read_write_yaml(self):
        with self.runner.isolated_filesystem():
            write_yaml('a.yaml', {'source': {'pump_power': 0.05}, 'rng_seed': 3})
            assert read_yaml('a.yaml') == {'source': {'pump_power': 0.05}, 'rng_seed': 3}
            assert read_yaml('missing.yaml') == {}

    def test_merge_config(self):
        base = {'a': 1, 'b': {'c': 2, 'd': 3}}
        merged = merge_config(base, {'b': {'c': 5}})
        assert merged == {'a': 1, 'b': {'c': 5, 'd': 3}}
        assert base['b']['c'] == 2

        with pytest.raises(ConfigError, match='b.e'):
            merge_config(base, {'b': {'e': 1}})
        with pytest.raises(ConfigError):
            merge_config(base, {'b': 4})

    def test_load_config(self):
        defaults = load_config()
        assert defaults['source']['pump_power'] == pytest.approx(0.0106)
        assert experiment_config(defaults).pgr == pytest.approx(16741.6, rel=1e-4)

        with self.runner.isolated_filesystem():
            write_yaml('user.yaml', {'source': {'pump_power': 0.088}})
            config = load_config('user.yaml')
            assert config['source']['pump_power'] == 0.088
            assert config['acquisition_time'] == defaults['acquisition_time']

            write_yaml('bad.yaml', {'sorce': {'pump_power': 0.088}})
            with pytest.raises(ConfigError):
                load_config('bad.yaml')

            with open('broken.yaml', 'w') as f:
                f.write('source: [unclosed\n')
            with pytest.raises(ConfigError):
                load_config('broken.yaml')

            with open('list.yaml', 'w') as f:
                f.write('- 1\n- 2\n')
            with pytest.raises(ConfigError):
                load_config('list.yaml')

        with pytest.raises(IOError):
            load_config('no/such/config.yaml')

    def test_invalid_experiment_values(self):
        config = load_config()
        config['source']['pump_power'] = -1.
        with pytest.raises(ConfigError):
            experiment_config(config)

    def test_config_paths(self):
        config = {'a': {'b': {'c': 1}}}
        assert get_config_value(config, 'a.b.c') == 1
        set_config_value(config, 'a.b.c', 2)
        assert config['a']['b']['c'] == 2
        with pytest.raises(KeyError):
            get_config_value(config, 'a.x')

    def test_unit_params(self):
        assert POWER.parse('50uW') == pytest.approx(0.05)
        assert POWER.parse('50µW') == pytest.approx(0.05)
        assert POWER.parse('0.088 mW') == pytest.approx(0.088)
        assert POWER.parse('0') == 0.
        assert DURATION.parse('2min') == 120.
        assert PICOSECONDS.parse('1.5ns') == 1500
        assert isinstance(PICOSECONDS.parse('80ps'), int)
        assert POWER_LIST.convert('10uW, 20uW,40uW', None, None) == pytest.approx([0.01, 0.02, 0.04])
        with pytest.raises(ValueError):
            POWER.parse('50')
        with pytest.raises(ValueError):
            POWER.parse('50 furlongs')

    def test_atomic_write(self):
        with self.runner.isolated_filesystem():
            with atomic_write('out.bin') as f:
                f.write(b'abc')
            with open('out.bin', 'rb') as f:
                assert f.read() == b'abc'

            with pytest.raises(RuntimeError):
                with atomic_write('out.bin') as f:
                    f.write(b'partial')
                    raise RuntimeError('interrupted')
            with open('out.bin', 'rb') as f:
                assert f.read() == b'abc'
            assert [p for p in os.listdir('.') if p.endswith('.part')] == []

    def test_file_checksum(self):
        with self.runner.isolated_filesystem():
            with open('a.txt', 'wb') as f:
                f.write(b'pairlab')
            digest = file_checksum('a.txt')
            assert len(digest) == 64
            assert file_checksum('a.txt') == digest
            with open('a.txt', 'ab') as f:
                f.write(b'!')
            assert file_checksum('a.txt') != digest

    def test_command_with_config(self):
        seen = {}

        def record(power, config_data):
            seen['power'] = power
            seen['config_power'] = config_data['source']['pump_power']

        command = make_command(record)
        result = self.runner.invoke(command, [])
        assert result.exit_code == 0, result.output
        assert seen == {'power': 0.0106, 'config_power': 0.0106}

        result = self.runner.invoke(command, ['--power', '88uW'])
        assert result.exit_code == 0, result.output
        assert seen['power'] == pytest.approx(0.088)
        assert seen['config_power'] == pytest.approx(0.088)

        result = self.runner.invoke(command, ['--power', '0.05mW', '--print-config'])
        assert result.exit_code == 0
        assert 'pump_power: 0.05' in result.output

    def test_command_exit_codes(self):

        def fail_with(error):
            def action(power, config_data):
                raise error
            return make_command(action)

        assert self.runner.invoke(fail_with(ConfigError('bad')), []).exit_code == 2
        assert self.runner.invoke(fail_with(ValueError('bad')), []).exit_code == 2
        assert self.runner.invoke(fail_with(IOError('gone')), []).exit_code == 3
        assert self.runner.invoke(fail_with(NoPeakError('flat')), []).exit_code == 4

        with self.runner.isolated_filesystem():
            write_yaml('bad.yaml', {'nonsense': 1})
            result = self.runner.invoke(make_command(lambda *a: None), ['--config-file', 'bad.yaml'])
            assert result.exit_code == 2
            assert 'nonsense' in result.output

        assert self.runner.invoke(make_command(lambda *a: None), ['--power', '5']).exit_code == 2
