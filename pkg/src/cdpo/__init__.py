"""PPO and complexity-driven PPO (CDPO) on CartPole and CARTerpillar, in numpy."""

from .regularizers import RegularizerKind, complexity, disequilibrium, entropy

__all__ = ["RegularizerKind", "complexity", "disequilibrium", "entropy"]
__version__ = "0.1.0"
