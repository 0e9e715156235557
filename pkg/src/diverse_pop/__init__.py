"""Weighted diversification population protocol: simulators, oracles and metrics."""

from .protocol import (DARK, LIGHT, Configuration, ConfigurationError, CountEngine,
                       NoPartnerError, ObserverError, ProtocolError, TrackedAgent,
                       TransitionKernel, WeightTable, enumerate_kernel, run, step_agentwise,
                       step_counts, step_with_tracking)
from .rng import make_rng

__version__ = "0.1.0"
