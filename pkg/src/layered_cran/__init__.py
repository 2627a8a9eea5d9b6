"""Layered azimuth/elevation precoding with fronthaul compression for FD-MIMO C-RAN."""

__version__ = "0.1.0"

from .channel import (TopologyParams, draw_block, draw_long_term_state,  # noqa: E402
                      generate_topology)
from .errors import ConfigError, DomainError, InfeasibleError  # noqa: E402
from .evaluation import STRATEGIES, evaluate_ergodic  # noqa: E402
