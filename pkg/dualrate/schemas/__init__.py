"""
Run configuration schema and parser.
"""

from .run_config import RunConfig, documented_defaults, parse_config, parse_pairs, parse_value

__all__ = ["RunConfig", "documented_defaults", "parse_config", "parse_pairs", "parse_value"]
