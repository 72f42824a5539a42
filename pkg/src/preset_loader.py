"""Preset loader module for YAML-based experiment configurations."""

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

from boundary import FlowConfig
from config import (
    ATOL, CONVERGENCE_RADIUS, CURVE_POINTS, DEFAULT_HORIZON, ESCAPE_HORIZON, ESCAPE_RADIUS,
    FLOW_MAX_ITERS, FLOW_STEP, HISTORY_EVERY, INIT_RADIUS, INTEGRATION_METHOD,
    NEAR_ORIGIN_PROBES, NEAR_ORIGIN_RADIUS, PE_RELATIVE_TOL, PRESET_DIR, RESAMPLE_EVERY,
    RESULTS_DIR, SAMPLE_INTERVAL, ENERGY_ATOL, ENERGY_RTOL,
)
from energy import A_REF_SOURCES, EnergyConfig
from errors import ConfigError
from estimator import QUADRATURE_RULES, TRAPEZOID
from integrator import SOLVERS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ValidationIssue:
    """One problem found in a preset or config file."""

    level: str     # 'error' or 'warning'
    category: str  # section name, or 'file'
    message: str

    def __str__(self):
        return f"[{self.level.upper()}] {self.category}: {self.message}"


@dataclass
class ExperimentConfig:
    """Flattened settings of one ROA experiment (every key maps to a CLI flag)."""

    preset: str = 'custom'
    # system
    system: str = 'vdp_reverse'
    seed: int = 0
    # integrator
    dt: float = SAMPLE_INTERVAL
    method: str = INTEGRATION_METHOD
    rtol: float = ENERGY_RTOL
    atol: float = ENERGY_ATOL
    conv_radius: float = CONVERGENCE_RADIUS
    escape_radius: float = ESCAPE_RADIUS
    # energy
    horizon: float = DEFAULT_HORIZON
    escape_horizon: float = ESCAPE_HORIZON
    rule: str = TRAPEZOID
    a_ref: str = 'analytic'
    near_origin_radius: float = NEAR_ORIGIN_RADIUS
    near_origin_probes: int = NEAR_ORIGIN_PROBES
    pe_relative_tol: float = PE_RELATIVE_TOL
    # flow
    gamma: float = 1.0
    step_size: float = FLOW_STEP
    max_iters: int = FLOW_MAX_ITERS
    points: int = CURVE_POINTS
    init_radius: float = INIT_RADIUS
    resample_every: int = RESAMPLE_EVERY
    history_every: int = HISTORY_EVERY
    conv_tol: Optional[float] = None
    hold_escaped: bool = False
    # output
    out_dir: str = str(RESULTS_DIR)
    svg: bool = False
    compare_oracle: bool = False
    strict: bool = False
    threads: Optional[int] = None

    def energy_config(self) -> EnergyConfig:
        return EnergyConfig(
            horizon=self.horizon, dt=self.dt, escape_horizon=self.escape_horizon,
            rule=self.rule, rtol=self.rtol, atol=self.atol, conv_radius=self.conv_radius,
            escape_radius=self.escape_radius, pe_relative_tol=self.pe_relative_tol,
            method=self.method, a_ref_source=self.a_ref,
            near_origin_radius=self.near_origin_radius,
            near_origin_probes=self.near_origin_probes,
        )

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            gamma=self.gamma, step_size=self.step_size, max_iters=self.max_iters,
            conv_tol=self.conv_tol, n_points=self.points, init_radius=self.init_radius,
            resample_every=self.resample_every, history_every=self.history_every,
            hold_escaped=self.hold_escaped, seed=self.seed, energy=self.energy_config(),
        )


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _at_least_one(v):
    return v >= 1


# section -> key -> (expected type(s), range check or choices, description of the check)
SCHEMA: Dict[str, Dict[str, tuple]] = {
    'system': {
        'id': (str, None, ''),
        'seed': (int, _non_negative, 'must be >= 0'),
    },
    'integrator': {
        'dt': (float, _positive, 'must be positive'),
        'method': (str, tuple(SOLVERS), ''),
        'rtol': (float, _positive, 'must be positive'),
        'atol': (float, _positive, 'must be positive'),
        'conv_radius': (float, _positive, 'must be positive'),
        'escape_radius': (float, _positive, 'must be positive'),
    },
    'energy': {
        'horizon': (float, _positive, 'must be positive'),
        'escape_horizon': (float, _positive, 'must be positive'),
        'rule': (str, QUADRATURE_RULES, ''),
        'a_ref': (str, A_REF_SOURCES, ''),
        'near_origin_radius': (float, _positive, 'must be positive'),
        'near_origin_probes': (int, _at_least_one, 'must be >= 1'),
        'pe_relative_tol': (float, _positive, 'must be positive'),
    },
    'flow': {
        'gamma': (float, lambda v: 0 < v <= 1, 'must lie in (0, 1]'),
        'step_size': (float, _positive, 'must be positive'),
        'max_iters': (int, _at_least_one, 'must be >= 1'),
        'points': (int, lambda v: v >= 8, 'must be >= 8'),
        'init_radius': (float, _positive, 'must be positive'),
        'resample_every': (int, _non_negative, 'must be >= 0'),
        'history_every': (int, _at_least_one, 'must be >= 1'),
        'conv_tol': (float, _positive, 'must be positive'),
        'hold_escaped': (bool, None, ''),
    },
    'output': {
        'out_dir': (str, None, ''),
        'svg': (bool, None, ''),
        'compare_oracle': (bool, None, ''),
        'strict': (bool, None, ''),
        'threads': (int, _at_least_one, 'must be >= 1'),
    },
}

# flat ExperimentConfig field -> (section, key)
FIELD_KEYS = {'system': ('system', 'id')}
for _section, _keys in SCHEMA.items():
    for _key in _keys:
        if (_section, _key) != ('system', 'id'):
            FIELD_KEYS[_key] = (_section, _key)


class PresetValidator:
    """Validates sectioned experiment settings."""

    def __init__(self, data: Mapping[str, Any], source: str = '<settings>'):
        self.data = data
        self.source = source
        self.issues: List[ValidationIssue] = []

    def validate_all(self) -> List[ValidationIssue]:
        """Run all checks and return the issues found."""
        self.issues = []
        if not isinstance(self.data, Mapping):
            self.issues.append(ValidationIssue(
                'error', 'file', f"{self.source}: top level must be a mapping of sections"
            ))
            return self.issues

        for section, values in self.data.items():
            if section not in SCHEMA:
                self.issues.append(ValidationIssue(
                    'warning', 'file', f"{self.source}: unknown section '{section}' ignored"
                ))
                continue
            if values is None:
                continue
            if not isinstance(values, Mapping):
                self.issues.append(ValidationIssue(
                    'error', section, f"{self.source}: section must be a mapping"
                ))
                continue
            for key, value in values.items():
                self._validate_value(section, key, value)
        return self.issues

    def _validate_value(self, section: str, key: str, value: Any):
        spec = SCHEMA[section].get(key)
        if spec is None:
            self.issues.append(ValidationIssue(
                'warning', section, f"unknown key '{key}' ignored"
            ))
            return
        if value is None:
            return
        expected, check, hint = spec
        if not _matches_type(value, expected):
            self.issues.append(ValidationIssue(
                'error', section, f"'{key}' must be {expected.__name__}, got {value!r}"
            ))
            return
        if isinstance(check, tuple):
            if value not in check:
                self.issues.append(ValidationIssue(
                    'error', section, f"'{key}' must be one of {', '.join(check)}, got '{value}'"
                ))
        elif check is not None and not check(value):
            self.issues.append(ValidationIssue('error', section, f"'{key}' {hint}, got {value}"))


def _matches_type(value: Any, expected: type) -> bool:
    if expected is bool:
        return isinstance(value, bool)
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if expected is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, expected)


def merge_sections(base: Mapping[str, Any], overlay: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    """Section-wise merge; overlay values that are not None win."""
    merged = {s: dict(v or {}) for s, v in base.items()}
    for section, values in (overlay or {}).items():
        target = merged.setdefault(section, {})
        for key, value in (values or {}).items():
            if value is not None:
                target[key] = value
    return merged


def flags_to_sections(flags: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    """Turn flat flag values (None = not given) into sectioned settings."""
    sections: Dict[str, Dict[str, Any]] = {}
    for name, value in flags.items():
        if value is None or name not in FIELD_KEYS:
            continue
        section, key = FIELD_KEYS[name]
        sections.setdefault(section, {})[key] = value
    return sections


class PresetLoader:
    """Loads experiment presets from YAML files."""

    def __init__(self, preset_dir=None):
        """Initialize the preset loader.

        Args:
            preset_dir: Directory containing presets.yml and the preset files
        """
        self.preset_dir = Path(preset_dir or PRESET_DIR)
        self.index: Dict[str, dict] = {}

    def load_index(self) -> Dict[str, dict]:
        """Read presets.yml; disabled entries are skipped."""
        index_file = self.preset_dir / 'presets.yml'
        data = self._read_yaml(index_file)
        self.index = {}
        for entry in data.get('presets', []) or []:
            if not isinstance(entry, Mapping) or 'id' not in entry or 'file' not in entry:
                raise ConfigError(f"{index_file}: every preset entry needs 'id' and 'file'")
            if entry.get('enabled', True):
                self.index[entry['id']] = dict(entry)
        logger.debug(f"Indexed {len(self.index)} presets from {index_file}")
        return self.index

    def list_presets(self) -> List[str]:
        if not self.index:
            self.load_index()
        return sorted(self.index)

    def load_preset(self, preset_id: str) -> Dict[str, Any]:
        """Sections of one indexed preset."""
        if not self.index:
            self.load_index()
        entry = self.index.get(preset_id)
        if entry is None:
            raise ConfigError(
                f"unknown preset '{preset_id}' (available: {', '.join(sorted(self.index)) or 'none'})"
            )
        data = self.load_file(self.preset_dir / entry['file'])
        logger.info(f"Loaded preset '{preset_id}': {entry.get('description', '')}")
        return data

    def load_file(self, path) -> Dict[str, Any]:
        """Read and validate one settings file."""
        path = Path(path)
        data = self._read_yaml(path)
        issues = PresetValidator(data, str(path)).validate_all()
        _raise_on_errors(issues, str(path))
        return {s: v for s, v in data.items() if s in SCHEMA}

    def _read_yaml(self, path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise ConfigError(f"settings file not found: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML ({e})")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return data


def _raise_on_errors(issues: List[ValidationIssue], source: str):
    for issue in issues:
        if issue.level == 'warning':
            logger.warning(str(issue))
    errors = [i for i in issues if i.level == 'error']
    if errors:
        listing = '; '.join(str(i) for i in errors)
        raise ConfigError(f"{source}: {len(errors)} invalid setting(s): {listing}", issues)


def resolve_settings(preset: Optional[str] = None, config_file=None,
                     flags: Optional[Mapping[str, Any]] = None,
                     loader: Optional[PresetLoader] = None) -> ExperimentConfig:
    """Layer defaults < preset < config file < flags into one ExperimentConfig."""
    loader = loader or PresetLoader()
    sections: Dict[str, Dict[str, Any]] = {}
    if preset:
        sections = merge_sections(sections, loader.load_preset(preset))
    if config_file:
        sections = merge_sections(sections, loader.load_file(config_file))
    flag_sections = flags_to_sections(flags or {})
    _raise_on_errors(PresetValidator(flag_sections, 'command line').validate_all(), 'command line')
    sections = merge_sections(sections, flag_sections)

    values: Dict[str, Any] = {'preset': preset or 'custom'}
    for name, (section, key) in FIELD_KEYS.items():
        if key in sections.get(section, {}):
            values[name] = sections[section][key]
    known = {f.name for f in fields(ExperimentConfig)}
    settings = ExperimentConfig(**{k: v for k, v in values.items() if k in known})
    logger.debug(f"Resolved settings: {asdict(settings)}")
    return settings
