"""DelayHJB - minimax and viscosity solutions of HJB equations for time-delay systems."""

__version__ = "0.4.0"
