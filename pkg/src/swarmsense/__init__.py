"""Multi-robot gas-field estimation: coverage planning, collaborative
particle filtering, swarm control and entropy-driven active sensing."""

__version__ = "0.1.0"
