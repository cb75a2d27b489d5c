"""Stability theory toolkit for finite-user slotted Aloha."""
from .model import ArrivalDist, SystemParams

__version__ = "0.1.0"

__all__ = ["ArrivalDist", "SystemParams", "__version__"]
