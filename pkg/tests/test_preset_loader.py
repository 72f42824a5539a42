import logging

import pytest
import yaml

from boundary import FlowConfig
from energy import EnergyConfig
from errors import ConfigError
from preset_loader import (
    ExperimentConfig, PresetLoader, PresetValidator, flags_to_sections, merge_sections,
    resolve_settings,
)


@pytest.fixture
def loader():
    return PresetLoader()


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def test_index_lists_bundled_presets(loader):
    assert loader.list_presets() == ['rational', 'unbounded', 'vdp']


def test_disabled_preset_skipped(tmp_path):
    write_yaml(tmp_path / 'presets.yml', {'presets': [
        {'id': 'on', 'file': 'on.yml'},
        {'id': 'off', 'file': 'off.yml', 'enabled': False},
    ]})
    assert PresetLoader(tmp_path).list_presets() == ['on']


def test_index_entry_needs_file(tmp_path):
    write_yaml(tmp_path / 'presets.yml', {'presets': [{'id': 'broken'}]})
    with pytest.raises(ConfigError):
        PresetLoader(tmp_path).load_index()


def test_vdp_preset_values(loader):
    settings = resolve_settings('vdp', loader=loader)
    assert settings.preset == 'vdp'
    assert settings.system == 'vdp_reverse'
    assert settings.gamma == 1.0
    assert settings.points == 50
    assert settings.init_radius == 0.1
    assert settings.horizon == 4.0
    assert settings.escape_horizon == 40.0


def test_rational_preset_is_conservative(loader):
    settings = resolve_settings('rational', loader=loader)
    assert settings.system == 'rational'
    assert settings.gamma == 0.7


def test_unbounded_preset_caps_iterations(loader):
    settings = resolve_settings('unbounded', loader=loader)
    assert settings.max_iters == 450
    assert settings.flow_config().hold_escaped


def test_hold_escaped_flag():
    assert not resolve_settings().flow_config().hold_escaped
    assert resolve_settings(flags={'hold_escaped': True}).flow_config().hold_escaped


def test_defaults_without_preset():
    settings = resolve_settings()
    assert settings == ExperimentConfig()


def test_precedence_flags_over_config_over_preset(loader, tmp_path):
    config = write_yaml(tmp_path / 'run.yml', {
        'flow': {'gamma': 0.8, 'max_iters': 20},
        'energy': {'horizon': 3.0},
    })
    settings = resolve_settings('vdp', config, {'gamma': 0.6, 'points': None}, loader=loader)
    assert settings.gamma == 0.6
    assert settings.max_iters == 20
    assert settings.horizon == 3.0
    assert settings.points == 50
    assert settings.system == 'vdp_reverse'


def test_invalid_gamma_lists_issue(loader, tmp_path):
    config = write_yaml(tmp_path / 'bad.yml', {'flow': {'gamma': 1.5, 'points': 4}})
    with pytest.raises(ConfigError) as err:
        resolve_settings('vdp', config, loader=loader)
    messages = [str(i) for i in err.value.issues if i.level == 'error']
    assert len(messages) == 2
    assert any('gamma' in m for m in messages)
    assert err.value.exit_code == 1


def test_unknown_key_is_warning(loader, tmp_path, caplog):
    config = write_yaml(tmp_path / 'extra.yml', {'flow': {'gamma': 0.9, 'colour': 'red'}, 'plots': {}})
    with caplog.at_level(logging.WARNING):
        settings = resolve_settings(None, config, loader=loader)
    assert settings.gamma == 0.9
    assert "unknown key 'colour'" in caplog.text
    assert "unknown section 'plots'" in caplog.text


def test_unknown_preset(loader):
    with pytest.raises(ConfigError, match="unknown preset 'lorenz'"):
        loader.load_preset('lorenz')


def test_invalid_yaml(loader, tmp_path):
    path = tmp_path / 'broken.yml'
    path.write_text("flow: [gamma: 1\n")
    with pytest.raises(ConfigError, match='invalid YAML'):
        loader.load_file(path)


def test_top_level_must_be_mapping(loader, tmp_path):
    path = tmp_path / 'list.yml'
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match='mapping'):
        loader.load_file(path)


def test_missing_config_file(loader, tmp_path):
    with pytest.raises(ConfigError, match='not found'):
        loader.load_file(tmp_path / 'absent.yml')


@pytest.mark.parametrize('flags', [
    {'gamma': 0.0}, {'step_size': -0.1}, {'rule': 'simpson'}, {'method': 'Euler'}, {'points': 3},
])
def test_invalid_flags_refused(flags):
    with pytest.raises(ConfigError):
        resolve_settings(flags=flags)


def test_validator_type_checks():
    issues = PresetValidator({
        'flow': {'max_iters': 2.5, 'gamma': True},
        'output': {'svg': 'yes'},
    }).validate_all()
    assert sorted(i.message.split("'")[1] for i in issues) == ['gamma', 'max_iters', 'svg']
    assert all(i.level == 'error' for i in issues)


def test_validator_accepts_int_for_float():
    assert PresetValidator({'flow': {'gamma': 1, 'step_size': 1}}).validate_all() == []


def test_merge_sections_skips_none():
    merged = merge_sections({'flow': {'gamma': 1.0}}, {'flow': {'gamma': None, 'points': 20}})
    assert merged == {'flow': {'gamma': 1.0, 'points': 20}}


def test_flags_to_sections():
    sections = flags_to_sections({'system': 'rational', 'gamma': 0.5, 'svg': None, 'x0': '1,2'})
    assert sections == {'system': {'id': 'rational'}, 'flow': {'gamma': 0.5}}


def test_experiment_config_builds_run_configs():
    settings = ExperimentConfig(gamma=0.7, points=20, horizon=2.0, rule='rectangle', seed=3)
    flow = settings.flow_config()
    assert isinstance(flow, FlowConfig)
    assert flow.gamma == 0.7 and flow.n_points == 20 and flow.seed == 3
    assert isinstance(flow.energy, EnergyConfig)
    assert flow.energy.horizon == 2.0
    assert flow.energy.rule == 'rectangle'
