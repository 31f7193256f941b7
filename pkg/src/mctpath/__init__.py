"""Energy-maximizing depth planning and MPC depth tracking for a moored
marine current turbine."""

__version__ = "0.1.0"
