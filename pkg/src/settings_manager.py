import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from src.core.routing import Scheme
from src.core.topology import TopologySpec
from src.errors import ConfigError, ExpanderBenchError
from src.utils.log import get_logger

logger = get_logger(__name__)

EXPERIMENTS = ('cs_heatmap', 'scale', 'burst', 'trace', 'failure', 'expressibility', 'partition', 'fairness')

COMMON_SECTION = 'common'

ENV_OVERRIDES = {
    'EXPANDERBENCH_LOG_LEVEL': 'logLevel',
    'EXPANDERBENCH_WORKERS': 'workers',
    'EXPANDERBENCH_OUTPUT_DIR': 'outputDir',
}

# "small runs" stay within a few racks, "large runs" reach toward the whole datacenter
GRID_PRESETS = {
    'small': ('1g,1r,2r,3r,4r', '1g,1r,2r,3r,4r'),
    'large': ('1r,4r,8r,16r', '1r,4r,8r,16r'),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one experiment run, in the runner's snake_case form"""

    experiment: str
    base_spec: TopologySpec
    scheme: Scheme
    seed: int
    output_dir: str
    workers: int = 1
    log_level: str = 'INFO'
    c_values: tuple = ()
    s_values: tuple = ()
    cs_points: tuple = ()
    scale_sizes: tuple = ()
    burst_preset: str = 'incast_40_20'
    flow_size_bytes: float = 0.0
    start_window: float = 0.0
    matrix_path: str = ''
    norm_values: tuple = ()
    top_n: int = 0
    failure_kind: str = 'link'
    failure_lambda: float = 0.0
    loss_mode: str = 'auto'
    loss_samples: int = 10 ** 6
    failure_elements: int = 0
    express_schemes: tuple = ()
    express_k: tuple = ()
    k_values: tuple = ()
    partition_restarts: int = 1
    partition_topologies: tuple = ()
    expansion_budget: int = 1000
    fairness_racks: int = 4
    fairness_subflows: int = 4
    settings: dict = field(default_factory=dict, compare=False)


class SettingsManager:
    def __init__(self, config_path=None, experiment=None, overrides=None):
        """
        config_path: INI file with a [common] section and one section per experiment
        experiment: experiment name; its section overrides [common]
        overrides: highest-priority settings (command line flags)
        """
        self.config_path = config_path
        self.experiment = experiment
        self.default_settings = self._get_default_settings()
        self.current_settings = self.load_settings(overrides or {})

    def _get_experiment_allowed_settings(self):
        """Settings keys each experiment reads besides the common ones"""
        common = ['baseTopology', 'routing', 'routingK', 'seed', 'workers', 'logLevel', 'outputDir']
        return {
            'cs_heatmap': common + ['cValues', 'sValues', 'gridPreset'],
            'scale': common + ['scaleSizes', 'csPoints'],
            'burst': common + ['burstPreset', 'flowSizeBytes'],
            'trace': common + ['matrixPath', 'normValues', 'topN', 'startWindow'],
            'failure': common + ['failureKind', 'failureLambda', 'lossMode', 'lossSamples', 'failureElements'],
            'expressibility': common + ['expressSchemes', 'expressK'],
            'partition': common + ['kValues', 'partitionRestarts', 'partitionTopologies', 'expansionBudget'],
            'fairness': common + ['fairnessRacks', 'fairnessSubflows'],
        }

    def _get_default_settings(self):
        return {
            # Common
            'baseTopology': 'fattree:k=8,oversub=4',
            'routing': 'ecmp',
            'routingK': 4,
            'seed': 0,
            'workers': 1,
            'logLevel': 'INFO',
            'outputDir': 'results',

            # C-S heatmap and scale sweep
            'cValues': '1r,2r,3r,4r',
            'sValues': '1r,2r,3r,4r',
            'gridPreset': '',
            'scaleSizes': '2,4,8',
            'csPoints': '1r:1r,1r:4r',

            # Bursts and traces
            'burstPreset': 'incast_40_20',
            'flowSizeBytes': 100000,
            'matrixPath': '',
            'normValues': '0.5,1,2',
            'topN': 0,
            'startWindow': 0.010,

            # Failures
            'failureKind': 'link',
            'failureLambda': 0.001,
            'lossMode': 'auto',
            'lossSamples': 1000000,
            'failureElements': 0,

            # Expressibility, partitioning, fairness
            'expressSchemes': 'kdisjoint,kshortest',
            'expressK': '4',
            'kValues': '2,5',
            'partitionRestarts': 1,
            'partitionTopologies': '',
            'expansionBudget': 1000,
            'fairnessRacks': 4,
            'fairnessSubflows': 4,
        }

    def _read_config_file(self):
        if not self.config_path:
            return {}
        if not Path(self.config_path).is_file():
            raise ConfigError(f"config file not found: {self.config_path}")

        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep camelCase keys
        try:
            parser.read(self.config_path)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {self.config_path}: {e}")

        settings = {}
        for section in (COMMON_SECTION, self.experiment):
            if section and parser.has_section(section):
                settings.update(parser.items(section))
        for section in parser.sections():
            if section != COMMON_SECTION and section not in EXPERIMENTS:
                logger.warning("Ignoring unknown config section [%s]", section)
        return settings

    def load_settings(self, overrides):
        """Defaults < config file < environment < overrides"""
        settings = self.default_settings.copy()
        raw = self._read_config_file()
        for key, value in raw.items():
            if key not in self.default_settings:
                raise ConfigError(f"unknown setting '{key}' in {self.config_path}")
            settings[key] = self._coerce(key, value)

        for env_key, key in ENV_OVERRIDES.items():
            value = os.environ.get(env_key)
            if value:
                settings[key] = self._coerce(key, value)

        for key, value in overrides.items():
            if value is None:
                continue
            if key not in self.default_settings:
                raise ConfigError(f"unknown setting '{key}'")
            settings[key] = self._coerce(key, value)

        if self.experiment:
            allowed = self._get_experiment_allowed_settings().get(self.experiment, [])
            for key in raw:
                if key not in allowed:
                    logger.warning("Setting '%s' is not used by experiment '%s'", key, self.experiment)
        return settings

    def _coerce(self, key, value):
        """Convert a text value to the type of the default"""
        default = self.default_settings[key]
        if not isinstance(value, str):
            return value
        value = value.strip()
        try:
            if isinstance(default, bool):
                return value.lower() in ('1', 'true', 'yes', 'on')
            if isinstance(default, int):
                return int(value, 0)
            if isinstance(default, float):
                return float(value)
        except ValueError:
            raise ConfigError(f"setting '{key}' expects a {type(default).__name__}, got '{value}'")
        return value

    def get_settings(self):
        return self.current_settings.copy()

    def get_setting(self, key, default=None):
        return self.current_settings.get(key, default)

    def validate_settings(self, settings=None):
        """(ok, message) for the given settings (current ones by default)"""
        settings = settings or self.current_settings
        try:
            for key in self.default_settings:
                if key not in settings:
                    return False, f"missing setting '{key}'"

            numeric_validations = {
                'routingK': (1, 64),
                'workers': (1, 256),
                'seed': (0, (1 << 64) - 1),
                'topN': (0, 10 ** 6),
                'failureLambda': (0.0, 1.0),
                'lossSamples': (1, 10 ** 9),
                'failureElements': (0, 10 ** 7),
                'partitionRestarts': (1, 1000),
                'expansionBudget': (0, 10 ** 7),
                'fairnessRacks': (1, 10 ** 4),
                'fairnessSubflows': (1, 64),
                'flowSizeBytes': (1, 10 ** 15),
                'startWindow': (0.0, 3600.0),
            }
            for key, (min_val, max_val) in numeric_validations.items():
                value = settings[key]
                if not isinstance(value, (int, float)) or value < min_val or value > max_val:
                    return False, f"setting '{key}' must lie in [{min_val}, {max_val}], got {value!r}"

            if settings['lossMode'] not in ('auto', 'exact', 'sampled'):
                return False, f"lossMode must be auto, exact or sampled, got '{settings['lossMode']}'"
            if settings['failureKind'] not in ('link', 'switch'):
                return False, f"failureKind must be link or switch, got '{settings['failureKind']}'"
            if settings['gridPreset'] and settings['gridPreset'] not in GRID_PRESETS:
                return False, f"unknown gridPreset '{settings['gridPreset']}'"

            if self.experiment and self.experiment not in EXPERIMENTS:
                return False, f"unknown experiment '{self.experiment}'; choose from {', '.join(EXPERIMENTS)}"

            list_keys = {
                'cs_heatmap': ['cValues', 'sValues'],
                'scale': ['scaleSizes', 'csPoints'],
                'trace': ['normValues'],
                'expressibility': ['expressSchemes', 'expressK'],
                'partition': ['kValues'],
            }.get(self.experiment, [])
            for key in list_keys:
                if not _split_list(settings[key]):
                    return False, f"setting '{key}' must be a non-empty list"

            if self.experiment == 'trace':
                path = settings['matrixPath']
                if not path or not Path(path).is_file():
                    return False, f"matrixPath '{path}' does not exist"

            TopologySpec.parse(settings['baseTopology']).validate()
            Scheme.parse(settings['routing'], settings['routingK'])
            return True, "Settings valid"

        except ExpanderBenchError as e:
            return False, str(e)

    def get_experiment_config(self):
        """Settings converted for the experiment runner; raises ConfigError when invalid"""
        ok, message = self.validate_settings()
        if not ok:
            raise ConfigError(message)
        settings = self.get_settings()

        c_values, s_values = settings['cValues'], settings['sValues']
        if settings['gridPreset']:
            c_values, s_values = GRID_PRESETS[settings['gridPreset']]

        try:
            return ExperimentConfig(
                experiment=self.experiment or '',
                base_spec=TopologySpec.parse(settings['baseTopology']),
                scheme=Scheme.parse(settings['routing'], settings['routingK']),
                seed=settings['seed'],
                output_dir=settings['outputDir'],
                workers=settings['workers'],
                log_level=settings['logLevel'],
                c_values=tuple(_split_list(c_values)),
                s_values=tuple(_split_list(s_values)),
                cs_points=tuple(_parse_cs_point(p) for p in _split_list(settings['csPoints'])),
                scale_sizes=tuple(int(v) for v in _split_list(settings['scaleSizes'])),
                burst_preset=settings['burstPreset'],
                flow_size_bytes=float(settings['flowSizeBytes']),
                start_window=settings['startWindow'],
                matrix_path=settings['matrixPath'],
                norm_values=tuple(float(v) for v in _split_list(settings['normValues'])),
                top_n=settings['topN'],
                failure_kind=settings['failureKind'],
                failure_lambda=settings['failureLambda'],
                loss_mode=settings['lossMode'],
                loss_samples=settings['lossSamples'],
                failure_elements=settings['failureElements'],
                express_schemes=tuple(_split_list(settings['expressSchemes'])),
                express_k=tuple(int(v) for v in _split_list(settings['expressK'])),
                k_values=tuple(int(v) for v in _split_list(settings['kValues'])),
                partition_restarts=settings['partitionRestarts'],
                partition_topologies=tuple(TopologySpec.parse(s) for s in
                                           _split_list(settings['partitionTopologies'], ';')),
                expansion_budget=settings['expansionBudget'],
                fairness_racks=settings['fairnessRacks'],
                fairness_subflows=settings['fairnessSubflows'],
                settings=settings,
            )
        except ValueError as e:
            raise ConfigError(f"malformed list value: {e}")


def _split_list(value, separator=','):
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    return [v.strip() for v in str(value).split(separator) if v.strip()]


def parse_count(token, rack, graph_rack=None):
    """
    '12' -> 12 servers, '3r' -> 3 racks of `rack` servers (the base fabric's),
    '2g' -> 2 racks of `graph_rack` servers (the random graph's)
    """
    token = str(token).strip().lower()
    try:
        if token.endswith('r'):
            return int(token[:-1] or 1) * rack
        if token.endswith('g'):
            if graph_rack is None:
                raise ConfigError(f"server count '{token}' needs a random-graph rack size")
            return int(token[:-1] or 1) * graph_rack
        return int(token)
    except ValueError:
        raise ConfigError(f"bad server count '{token}'; use N, Nr or Ng")


def _parse_cs_point(text):
    c, sep, s = text.partition(':')
    if not sep or not c.strip() or not s.strip():
        raise ConfigError(f"cs point '{text}' must look like C:S")
    return c.strip(), s.strip()
