import csv
import dataclasses
import json

import pytest

from main import main
from src.runner import NA, ExperimentRunner
from src.settings_manager import ENV_OVERRIDES, SettingsManager

SMALL_BASE = 'leafspine:x=6,y=2'


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in ENV_OVERRIDES:
        monkeypatch.delenv(key, raising=False)


def run_experiment(out_dir, experiment, **overrides):
    overrides = {'baseTopology': SMALL_BASE, 'seed': 3, 'outputDir': str(out_dir), **overrides}
    config = SettingsManager(experiment=experiment, overrides=overrides).get_experiment_config()
    return ExperimentRunner(config).run()


def data_lines(path):
    return [line for line in path.read_text().splitlines() if not line.startswith('#')]


def read_rows(path):
    return list(csv.DictReader(data_lines(path)))


class TestCsHeatmap:
    def test_tiles_and_infeasible_tile(self, tmp_path):
        ok, message = run_experiment(tmp_path, 'cs_heatmap', cValues='1r,40', sValues='1r,20')
        assert ok, message
        rows = read_rows(tmp_path / 'cs_heatmap.csv')
        assert [(row['C'], row['S']) for row in rows] == [('6', '6'), ('6', '20'), ('40', '6'), ('40', '20')]
        assert [row['ratio'] for row in rows].count(NA) == 1
        assert rows[-1]['ratio'] == NA
        for row in rows[:-1]:
            assert float(row['ratio']) > 0
            assert 0 < float(row['mean_base']) <= 1.0

    def test_header_echoes_seed(self, tmp_path):
        run_experiment(tmp_path, 'cs_heatmap', cValues='1r', sValues='1r')
        header = (tmp_path / 'cs_heatmap.csv').read_text().splitlines()
        assert header[0] == '# experiment=cs_heatmap'
        assert header[1] == '# seed=3'

    def test_rerun_is_byte_identical(self, tmp_path):
        run_experiment(tmp_path, 'cs_heatmap', cValues='1r,2r', sValues='1r,2r')
        first = (tmp_path / 'cs_heatmap.csv').read_bytes()
        run_experiment(tmp_path, 'cs_heatmap', cValues='1r,2r', sValues='1r,2r')
        assert (tmp_path / 'cs_heatmap.csv').read_bytes() == first

    def test_worker_count_does_not_change_results(self, tmp_path):
        run_experiment(tmp_path / 'one', 'cs_heatmap', cValues='1r,2r', sValues='1r,2r', workers=1)
        run_experiment(tmp_path / 'two', 'cs_heatmap', cValues='1r,2r', sValues='1r,2r', workers=4)
        for name in ('cs_heatmap.csv', 'run_manifest.json'):
            assert (tmp_path / 'one' / name).read_bytes() == (tmp_path / 'two' / name).read_bytes()

    def test_header_leaves_out_execution_settings(self, tmp_path):
        run_experiment(tmp_path, 'cs_heatmap', cValues='1r', sValues='1r', workers=3, logLevel='DEBUG')
        header = [line for line in (tmp_path / 'cs_heatmap.csv').read_text().splitlines() if line.startswith('#')]
        assert '# routing=ecmp' in header
        for key in ('workers', 'outputDir', 'logLevel'):
            assert not any(line.startswith(f"# {key}=") for line in header)

    def test_manifest(self, tmp_path):
        run_experiment(tmp_path, 'cs_heatmap', cValues='1r', sValues='1r')
        manifest = json.loads((tmp_path / 'run_manifest.json').read_text())
        assert manifest['experiment'] == 'cs_heatmap'
        assert manifest['files'] == ['cs_heatmap.csv']
        assert manifest['tiles'] == 1
        assert SMALL_BASE in manifest['topologies']
        assert 'workers' not in manifest['settings']
        assert not {'wall_seconds', 'memory', 'timestamp'} & set(manifest)

    def test_manifest_rerun_is_byte_identical(self, tmp_path):
        run_experiment(tmp_path, 'cs_heatmap', cValues='1r', sValues='1r')
        first = (tmp_path / 'run_manifest.json').read_bytes()
        run_experiment(tmp_path, 'cs_heatmap', cValues='1r', sValues='1r')
        assert (tmp_path / 'run_manifest.json').read_bytes() == first

    def test_one_graph_rack_shows_the_red_patch(self, tmp_path):
        # five servers fill one random-graph rack; leaf-spine racks hold six
        ratios = []
        for seed in range(12):
            tile = {}
            for scheme, k in (('ecmp', 4), ('kdisjoint', 2)):
                out = tmp_path / f"{scheme}{seed}"
                ok, message = run_experiment(out, 'cs_heatmap', cValues='1g', sValues='1g', seed=seed,
                                             routing=scheme, routingK=k)
                assert ok, message
                [row] = read_rows(out / 'cs_heatmap.csv')
                assert (row['C'], row['S']) == ('5', '5')
                tile[scheme] = float(row['ratio'])
            ratios.append((tile['ecmp'], tile['kdisjoint']))
        assert any(ecmp < 1.0 and disjoint >= 0.9 for ecmp, disjoint in ratios)


def test_scale_sweep(tmp_path):
    ok, message = run_experiment(tmp_path, 'scale', scaleSizes='2,4', csPoints='1r:1r')
    assert ok, message
    rows = read_rows(tmp_path / 'scale.csv')
    assert [(row['servers'], row['C'], row['S']) for row in rows] == [('48', '6', '6'), ('192', '12', '12')]


class TestBurst:
    def test_incast(self, tmp_path):
        ok, message = run_experiment(tmp_path, 'burst', baseTopology='fattree:k=4,oversub=4')
        assert ok, message
        summary = read_rows(tmp_path / 'burst_summary.csv')
        assert [row['topology'] for row in summary] == ['base', 'rrg']
        assert all(row['flows'] == '800' for row in summary)
        assert all(float(row['p50']) <= float(row['p99']) for row in summary)
        assert len(read_rows(tmp_path / 'burst_fct.csv')) == 1600
        assert (tmp_path / 'burst_rrg.fct').exists()

    def test_too_few_servers_fails(self, tmp_path):
        ok, message = run_experiment(tmp_path, 'burst')
        assert not ok
        assert 'burst' in message


def test_trace(tmp_path):
    matrix = tmp_path / 'racks.csv'
    matrix.write_text('r1,r2,600000\nr2,r3,300000\nr3,r1,100000\n')
    ok, message = run_experiment(tmp_path / 'out', 'trace', matrixPath=str(matrix), normValues='1,2')
    assert ok, message
    rows = read_rows(tmp_path / 'out' / 'trace.csv')
    assert [(row['norm_factor'], row['topology']) for row in rows] == [
        ('1.0', 'base'), ('1.0', 'rrg'), ('2.0', 'base'), ('2.0', 'rrg')]
    assert all(row['flows'] == '108' for row in rows)


def test_failure(tmp_path):
    ok, message = run_experiment(tmp_path, 'failure', baseTopology='leafspine:x=2,y=2', lossMode='exact',
                                 failureLambda=0.01)
    assert ok, message
    summary = read_rows(tmp_path / 'failure_summary.csv')
    assert [(row['topology'], row['scheme']) for row in summary] == [
        ('base', 'ecmp'), ('rrg', 'ecmp'), ('rrg', 'kdisjoint:4'), ('rrg', 'kshortest:4')]
    assert float(summary[0]['avg_p_loss']) == pytest.approx(3 / 28)
    assert len([row for row in read_rows(tmp_path / 'failure.csv') if row['topology'] == 'base']) == 8


def test_expressibility(tmp_path):
    ok, message = run_experiment(tmp_path, 'expressibility', expressK='2')
    assert ok, message
    rows = read_rows(tmp_path / 'expressibility.csv')
    assert [row['scheme'] for row in rows] == ['kdisjoint', 'kshortest']
    assert all(0.0 <= float(row['fraction']) <= 1.0 for row in rows)


def test_partition(tmp_path):
    ok, message = run_experiment(tmp_path, 'partition', partitionTopologies='rrg:leafspine:x=6,y=2,seed=1',
                                 kValues='2,5')
    assert ok, message
    rows = read_rows(tmp_path / 'partition.csv')
    assert [row['k'] for row in rows] == ['2', '5']
    assert rows[1]['expansion_bound'] == NA
    assert float(rows[0]['h_upper']) <= float(rows[0]['expansion_bound']) + 1e-12
    assert len((tmp_path / 'expansion.txt').read_text().splitlines()) == 1


def test_fairness(tmp_path):
    ok, message = run_experiment(tmp_path, 'fairness', fairnessRacks=1)
    assert ok, message
    summary = read_rows(tmp_path / 'fairness_summary.csv')
    assert [row['topology'] for row in summary] == ['base', 'rrg']
    assert all(0.0 < float(row['jain']) <= 1.0 + 1e-12 for row in summary)
    assert len(read_rows(tmp_path / 'fairness_rates.csv')) == 2 * 36


def test_unknown_experiment(tmp_path):
    config = SettingsManager(experiment='cs_heatmap', overrides={'outputDir': str(tmp_path)}).get_experiment_config()
    ok, message = ExperimentRunner(dataclasses.replace(config, experiment='tomography')).run()
    assert not ok
    assert 'tomography' in message


class TestMain:
    def test_success(self, tmp_path):
        config = tmp_path / 'bench.ini'
        config.write_text(f"[common]\nbaseTopology = {SMALL_BASE}\n\n[cs_heatmap]\ncValues = 1r\nsValues = 1r\n")
        code = main(['-c', str(config), '-e', 'cs_heatmap', '-o', str(tmp_path / 'out'), '--seed', '1'])
        assert code == 0
        assert (tmp_path / 'out' / 'cs_heatmap.csv').exists()

    def test_config_error(self, tmp_path):
        assert main(['-c', str(tmp_path / 'absent.ini'), '-e', 'cs_heatmap']) == 2

    def test_run_failure(self, tmp_path):
        config = tmp_path / 'bench.ini'
        config.write_text(f"[common]\nbaseTopology = {SMALL_BASE}\n")
        assert main(['-c', str(config), '-e', 'burst', '-o', str(tmp_path / 'out')]) == 1

    def test_experiment_is_required(self):
        with pytest.raises(SystemExit):
            main([])


@pytest.mark.slow
class TestAtScale:
    def test_oversubscribed_fat_tree_heatmap(self, tmp_path):
        ok, message = run_experiment(tmp_path, 'cs_heatmap', baseTopology='fattree:k=8,oversub=4',
                                     cValues='2r,4r,6r', sValues='2r,4r,6r', workers=4)
        assert ok, message
        ratios = [float(row['ratio']) for row in read_rows(tmp_path / 'cs_heatmap.csv')]
        assert len(ratios) == 9
        assert all(2.0 <= ratio <= 4.4 for ratio in ratios)

    def test_full_bandwidth_fat_tree_heatmap(self, tmp_path):
        ok, message = run_experiment(tmp_path, 'cs_heatmap', baseTopology='fattree:k=8,oversub=1',
                                     cValues='2r,4r,6r', sValues='2r,4r,6r', workers=4)
        assert ok, message
        ratios = sorted(float(row['ratio']) for row in read_rows(tmp_path / 'cs_heatmap.csv'))
        assert 0.8 <= ratios[len(ratios) // 2] <= 1.5

    def test_leaf_spine_skewed_tiles(self, tmp_path):
        ok, message = run_experiment(tmp_path, 'cs_heatmap', baseTopology='leafspine:x=24,y=8',
                                     cValues='1r,2r', sValues='8r,12r', workers=4)
        assert ok, message
        ratios = [float(row['ratio']) for row in read_rows(tmp_path / 'cs_heatmap.csv')]
        assert len(ratios) == 4
        assert all(1.3 <= ratio <= 2.2 for ratio in ratios)

    def test_scale_sweep_is_flat(self, tmp_path):
        by_size = {}
        for seed in (1, 2, 3):
            out = tmp_path / str(seed)
            ok, message = run_experiment(out, 'scale', scaleSizes='2,4,8', csPoints='1r:4r', seed=seed, workers=4)
            assert ok, message
            for row in read_rows(out / 'scale.csv'):
                by_size.setdefault(int(row['servers']), []).append(float(row['ratio']))
        assert sorted(by_size) == [48, 192, 768]
        means = [sum(ratios) / len(ratios) for ratios in by_size.values()]
        assert max(means) / min(means) - 1 < 0.3

    @pytest.mark.parametrize('preset', ['incast_40_20', 'outcast_20_40'])
    def test_bursts_finish_sooner_on_random_graph(self, tmp_path, preset):
        ok, message = run_experiment(tmp_path, 'burst', baseTopology='fattree:k=8,oversub=4', burstPreset=preset)
        assert ok, message
        base, rrg = read_rows(tmp_path / 'burst_summary.csv')
        assert (base['topology'], rrg['topology']) == ('base', 'rrg')
        assert float(rrg['p50']) <= float(base['p50'])
        assert float(rrg['p99']) <= float(base['p99'])

    def test_random_graph_fairness_with_disjoint_subflows(self, tmp_path):
        ok, message = run_experiment(tmp_path, 'fairness', baseTopology='fattree:k=8,oversub=4',
                                     routing='kdisjoint', routingK=4, fairnessRacks=4, fairnessSubflows=4)
        assert ok, message
        base, rrg = read_rows(tmp_path / 'fairness_summary.csv')
        assert float(rrg['jain']) >= float(base['jain']) - 0.05
