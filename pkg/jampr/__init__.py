"""Joint attention model for parallel route construction (CVRP / CVRP-TW)."""

__version__ = "0.1.0"
