"""Cell-free MIMO downlink simulation with classical and edge-GNN resource allocation."""

from .config import ConfigError, Scenario, SystemConfig, UMA, UMI, desk_config

__all__ = ["ConfigError", "Scenario", "SystemConfig", "UMA", "UMI", "desk_config"]
__version__ = "0.1.0"
