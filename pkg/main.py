import argparse
import sys

# Load environment variables from .env file
from dotenv import load_dotenv

from src.errors import ExpanderBenchError
from src.runner import ExperimentRunner
from src.settings_manager import EXPERIMENTS, SettingsManager
from src.utils.log import configure_logging, get_logger

logger = get_logger('main')


def build_parser():
    parser = argparse.ArgumentParser(
        description='ExpanderBench - expander vs fat-tree / leaf-spine throughput, FCT, failure and partition experiments')
    parser.add_argument('--config', '-c', help='INI config with a [common] section and per-experiment sections')
    parser.add_argument('--experiment', '-e', required=True, choices=EXPERIMENTS, help='Experiment to run')
    parser.add_argument('--seed', type=int, help='Base seed (unsigned 64-bit)')
    parser.add_argument('--out', '-o', help='Output directory')
    parser.add_argument('--workers', '-w', type=int, help='Worker threads for tiles')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')
    return parser


def main(argv=None):
    load_dotenv()
    args = build_parser().parse_args(argv)

    overrides = {
        'seed': args.seed,
        'outputDir': args.out,
        'workers': args.workers,
        'logLevel': args.log_level,
    }
    try:
        settings = SettingsManager(args.config, args.experiment, overrides)
        configure_logging(settings.get_setting('logLevel', 'INFO'))
        config = settings.get_experiment_config()
    except ExpanderBenchError as e:
        print(f"expanderbench: {e}", file=sys.stderr)
        return 2

    success, message = ExperimentRunner(config).run()
    if not success:
        print(f"expanderbench: {message}", file=sys.stderr)
        return 1
    logger.info(message)
    return 0


if __name__ == '__main__':
    sys.exit(main())
