"""Epoch-based optimistic concurrency control for multi-leader replication."""

from .config import SimConfig, load_config
from .oracle import oracle_check, replay
from .sim import run_simulation

__all__ = ["SimConfig", "load_config", "oracle_check", "replay", "run_simulation"]
__version__ = "0.1.0"
