#!/usr/bin/env python3
"""
Synthetic difference-in-differences toolkit
Main command-line entry point
"""

import argparse
import sys
from typing import List, Optional

from src.app import COMMANDS, report_error, run_command
from src.config import Config
from src.core.errors import ConfigError
from src.utils.logger import setup_logger


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(description='Synthetic control / SDID / DID panel estimation toolkit')
    parser.add_argument('command', choices=sorted(COMMANDS), help='Command to run')
    parser.add_argument('--config', default='config.ini', help='Configuration file (default: config.ini)')
    parser.add_argument('--out', default=None, help='Output directory (default: from config)')
    parser.add_argument('--seed', type=int, default=None, help='Root random seed (default: from config)')
    parser.add_argument('--method', choices=['did', 'scm', 'sdid'], default=None,
                        help='Estimator (default: from config)')
    parser.add_argument('--inference', choices=['gaussian', 'permutation'], default=None,
                        help='Inference mode (default: from config)')
    parser.add_argument('--zeta', type=float, default=None, help='Override the unit-weight regularization')
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    args = parse_args(argv)
    try:
        config = Config(args.config)
    except FileNotFoundError as e:
        return report_error(ConfigError(str(e)))

    logger = setup_logger('src', config.logging_config)
    try:
        run = config.run_config({
            'output_directory': args.out,
            'seed': args.seed,
            'method': args.method,
            'inference_mode': args.inference,
            'zeta_override': args.zeta,
        })
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return report_error(e)

    return run_command(args.command, run)


if __name__ == "__main__":
    sys.exit(main())
