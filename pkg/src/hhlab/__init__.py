"""Numerical laboratory for the Hodgkin-Huxley neuron driven by a periodic
Ornstein-Uhlenbeck input."""
from .model import SignalSpec, State5

__version__ = "0.1.0"

__all__ = ["SignalSpec", "State5", "__version__"]
