"""Datasets, metrics, evaluation harness and command-line entry point."""
