"""Security-aware QoS simulation toolkit for fractal network traffic."""

__version__ = "0.1.0"
