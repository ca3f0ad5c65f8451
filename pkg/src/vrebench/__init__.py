"""Rehabilitation platform workload with two storage engines, a load generator, metrics and a shard simulator."""

__version__ = "0.1.0"
