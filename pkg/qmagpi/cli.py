import argparse
import json
import logging
import platform
import sys
from typing import List, Optional

from core.constants import (
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_RUNTIME_ERROR,
    SCENARIO_VALUES,
)

logger = logging.getLogger(__name__)

_SCENARIO_HELP = {
    'odmr': 'Sweep the carrier and fit the hyperfine triplet',
    'track': 'Recover a square-wave test field from averaged open-loop traces',
    'dynrange': 'Compare open- and closed-loop linear range',
    'allan': 'Allan deviation of open- and closed-loop records',
    'psd': 'Noise spectra of sensitive, insensitive and electronic traces',
    'replay': 'Track a recorded field profile under PI lock',
    'calibrate': 'Fit resonance shift against coil current',
}


def setup_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def _run_config(args, scenario: Optional[str]) -> int:
    from qmagpi.config import load_config
    from qmagpi.errors import ConfigError
    from qmagpi.runner import ScenarioRunner, resolve_output_root

    try:
        config = load_config(args.config)
        if scenario is not None and config.scenario != scenario:
            logger.warning(f"Config {args.config} is for '{config.scenario}'; running '{scenario}'")
        config = config.with_overrides(seed=args.seed, scenario=scenario)
        output_root = resolve_output_root(args.out, config)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    runner = ScenarioRunner(config, output_root)
    try:
        summary = runner.run()
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except Exception as e:
        print(f"Error: {config.scenario} failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR

    print(f"{config.scenario} results in {runner.out_dir}")
    for key, value in summary.items():
        if not isinstance(value, dict):
            print(f"   {key:32} {value}")
    return EXIT_OK


def cmd_scenario(args) -> int:
    setup_logging(args.verbose)
    return _run_config(args, args.command)


def cmd_run(args) -> int:
    setup_logging(args.verbose)
    return _run_config(args, None)


def cmd_info(args) -> int:
    setup_logging(args.verbose)
    from qmagpi import __version__
    from qmagpi.host_info import get_host_info, get_library_versions

    host = get_host_info()
    libraries = get_library_versions()

    print(f"qmagpi {__version__} - System Information")
    print("=" * 70)

    print(f"\nPlatform:")
    print(f"   System:      {platform.system()}")
    print(f"   Release:     {platform.release()}")
    print(f"   Machine:     {platform.machine()}")
    print(f"   Python:      {platform.python_version()}")

    print(f"\nHost:")
    print(f"   Name:        {host.get('HostName', 'N/A')}")
    print(f"   CPU:         {str(host.get('Cpu', 'N/A'))[:60]}")
    print(f"   CPU count:   {host.get('CpuCount', 'N/A')}")
    print(f"   RAM:         {host.get('RamGb', 0)} GB")

    print(f"\nLibraries:")
    for name, version in libraries.items():
        print(f"   {name:12} {version}")

    if args.json:
        output = {'version': __version__, 'host': host, 'libraries': libraries}
        print(f"\n{json.dumps(output, indent=2)}")
    print()
    return EXIT_OK


def cmd_validate(args) -> int:
    import importlib

    setup_logging(args.verbose)

    print("qmagpi - Validation")
    print("=" * 70)

    version = sys.version_info
    print(f"\nPython {version.major}.{version.minor}.{version.micro}")
    if version < (3, 8):
        print("Python 3.8+ required")
        return EXIT_RUNTIME_ERROR

    required = {
        'numpy': 'Numerical computing',
        'scipy': 'Filters, fitting and statistics',
        'allantools': 'Allan deviation',
        'pandas': 'CSV input and output',
        'psutil': 'System monitoring',
    }

    print("\nRequired Dependencies:")
    all_ok = True
    for module, desc in required.items():
        try:
            mod = importlib.import_module(module)
            mod_version = getattr(mod, '__version__', 'unknown')
            print(f"   {module:20} {mod_version:15} ({desc})")
        except ImportError:
            print(f"   {module:20} MISSING ({desc})")
            all_ok = False

    if not all_ok:
        print("\nSome dependencies missing. Run:")
        print("   pip install -r requirements.txt")
        return EXIT_RUNTIME_ERROR
    print("\nAll required dependencies installed!")

    if args.config:
        from qmagpi.config import load_config
        from qmagpi.errors import ConfigError

        try:
            config = load_config(args.config)
        except ConfigError as e:
            print(f"\nConfig invalid: {e}")
            return EXIT_CONFIG_ERROR
        print(f"\nConfig {args.config} is valid ({config.scenario} scenario)")
    return EXIT_OK


def _add_run_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', required=True, help='Scenario JSON file')
    parser.add_argument('--seed', type=int, default=None, help='Override the config seed')
    parser.add_argument('--out', default=None, help='Output directory (default: $QMAGPI_OUT)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='qmagpi',
        description='qmagpi - Lock-in NV magnetometer simulator with PI resonance tracking'
    )

    parser.add_argument('-v', '--verbose', action='store_true', help='Verbose output')
    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    for scenario in SCENARIO_VALUES:
        parser_scenario = subparsers.add_parser(scenario, help=_SCENARIO_HELP[scenario])
        _add_run_arguments(parser_scenario)
        parser_scenario.set_defaults(func=cmd_scenario)

    parser_run = subparsers.add_parser('run', help="Run the scenario named in the config")
    _add_run_arguments(parser_run)
    parser_run.set_defaults(func=cmd_run)

    parser_info = subparsers.add_parser('info', help='Display system info')
    parser_info.add_argument('--json', action='store_true', help='Output as JSON')
    parser_info.set_defaults(func=cmd_info)

    parser_validate = subparsers.add_parser('validate', help='Validate installation and config')
    parser_validate.add_argument('--config', default=None, help='Scenario JSON file to check')
    parser_validate.set_defaults(func=cmd_validate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_CONFIG_ERROR

    return args.func(args)


if __name__ == '__main__':
    sys.exit(main())
