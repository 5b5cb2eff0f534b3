import pytest

from src.core.routing import Scheme
from src.core.topology import TopologySpec
from src.errors import ConfigError
from src.settings_manager import ENV_OVERRIDES, SettingsManager, parse_count


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in ENV_OVERRIDES:
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / 'bench.ini'
    path.write_text('[common]\n'
                    'baseTopology = leafspine:x=6,y=2\n'
                    'seed = 5\n'
                    '\n'
                    '[cs_heatmap]\n'
                    'cValues = 1r,2r\n'
                    'sValues = 1r\n'
                    '\n'
                    '[failure]\n'
                    'seed = 9\n')
    return path


class TestLoading:
    def test_defaults(self):
        manager = SettingsManager(experiment='cs_heatmap')
        assert manager.get_setting('baseTopology') == 'fattree:k=8,oversub=4'
        assert manager.validate_settings() == (True, 'Settings valid')

    def test_file_sections(self, config_file):
        manager = SettingsManager(config_file, 'cs_heatmap')
        assert manager.get_setting('seed') == 5
        assert manager.get_setting('cValues') == '1r,2r'

    def test_experiment_section_wins(self, config_file):
        assert SettingsManager(config_file, 'failure').get_setting('seed') == 9

    def test_environment_then_overrides(self, config_file, monkeypatch):
        monkeypatch.setenv('EXPANDERBENCH_WORKERS', '3')
        assert SettingsManager(config_file, 'cs_heatmap').get_setting('workers') == 3
        assert SettingsManager(config_file, 'cs_heatmap', {'workers': 6}).get_setting('workers') == 6

    def test_none_override_is_ignored(self, config_file):
        assert SettingsManager(config_file, 'cs_heatmap', {'seed': None}).get_setting('seed') == 5

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            SettingsManager(tmp_path / 'absent.ini', 'cs_heatmap')

    def test_unknown_key(self, tmp_path):
        path = tmp_path / 'bad.ini'
        path.write_text('[common]\nlinkSpeed = 10\n')
        with pytest.raises(ConfigError):
            SettingsManager(path, 'cs_heatmap')

    def test_bad_number(self, tmp_path):
        path = tmp_path / 'bad.ini'
        path.write_text('[common]\nseed = many\n')
        with pytest.raises(ConfigError):
            SettingsManager(path, 'cs_heatmap')


class TestValidation:
    @pytest.mark.parametrize('overrides', [
        {'workers': 0},
        {'lossMode': 'guess'},
        {'failureKind': 'rack'},
        {'failureLambda': 2.0},
        {'baseTopology': 'torus:k=4'},
        {'routing': 'vlb'},
        {'gridPreset': 'huge'},
    ])
    def test_rejects(self, overrides):
        ok, message = SettingsManager(experiment='failure', overrides=overrides).validate_settings()
        assert not ok
        assert message

    def test_trace_needs_matrix(self):
        ok, message = SettingsManager(experiment='trace').validate_settings()
        assert not ok
        assert 'matrixPath' in message

    def test_unknown_experiment(self):
        ok, _ = SettingsManager(experiment='tomography').validate_settings()
        assert not ok

    def test_invalid_config_raises(self):
        with pytest.raises(ConfigError):
            SettingsManager(experiment='cs_heatmap', overrides={'workers': 0}).get_experiment_config()


class TestExperimentConfig:
    def test_conversion(self, config_file):
        config = SettingsManager(config_file, 'cs_heatmap', {'routing': 'kdisjoint', 'routingK': 8}) \
            .get_experiment_config()
        assert config.experiment == 'cs_heatmap'
        assert config.base_spec == TopologySpec.leaf_spine(6, 2)
        assert config.scheme == Scheme.k_disjoint(8)
        assert config.c_values == ('1r', '2r')
        assert config.s_values == ('1r',)
        assert config.cs_points == (('1r', '1r'), ('1r', '4r'))
        assert config.flow_size_bytes == 100000.0

    def test_grid_preset(self):
        config = SettingsManager(experiment='cs_heatmap', overrides={'gridPreset': 'large'}).get_experiment_config()
        assert config.c_values == ('1r', '4r', '8r', '16r')

    def test_partition_topologies(self):
        overrides = {'partitionTopologies': 'rrg:leafspine:x=6,y=2,seed=1; fattree:k=4,oversub=1'}
        config = SettingsManager(experiment='partition', overrides=overrides).get_experiment_config()
        assert config.partition_topologies == (
            TopologySpec.rrg(TopologySpec.leaf_spine(6, 2), 1), TopologySpec.fat_tree(4, 1))
        assert config.k_values == (2, 5)

    def test_malformed_cs_point(self):
        with pytest.raises(ConfigError):
            SettingsManager(experiment='scale', overrides={'csPoints': '1r-4r'}).get_experiment_config()


@pytest.mark.parametrize('token,servers', [('12', 12), ('3r', 24), ('r', 8), (' 2R ', 16)])
def test_parse_count(token, servers):
    assert parse_count(token, 8) == servers


def test_parse_count_rejects():
    with pytest.raises(ConfigError):
        parse_count('many', 8)


def test_parse_count_graph_racks():
    assert parse_count('2g', 8, 5) == 10
    assert parse_count('g', 8, 5) == 5


def test_graph_racks_need_a_graph_rack_size():
    with pytest.raises(ConfigError):
        parse_count('1g', 8)


def test_small_preset_starts_with_one_graph_rack():
    config = SettingsManager(experiment='cs_heatmap', overrides={'gridPreset': 'small'}).get_experiment_config()
    assert config.c_values[0] == '1g'
    assert config.s_values[0] == '1g'


def test_fairness_subflows():
    config = SettingsManager(experiment='fairness').get_experiment_config()
    assert config.fairness_subflows == 4
    ok, _ = SettingsManager(experiment='fairness', overrides={'fairnessSubflows': 0}).validate_settings()
    assert not ok
