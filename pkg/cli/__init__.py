"""Command-line dispatch for the simulator."""
