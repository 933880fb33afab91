"""Synthetic Text-to-SQL dataset generation over sub-schema partitions, with
schema linking and execution-based evaluation."""

__version__ = "0.1.0"
