"""Strategy drivers: layered CAP/CBP, conventional baselines and precoder extraction."""
from .base import Budgets, StrategyConfig, dc_loop
from .cap import long_term_cap, short_term_cap
from .cbp import long_term_cbp, short_term_cbp
from .conventional import (conventional_cap, conventional_cbp, conventional_cbp_short_term,
                           conventional_realization)
from .extraction import LayeredSolution, extract_and_normalize
