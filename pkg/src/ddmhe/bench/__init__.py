"""Experiment orchestration: configuration, pipelines, reports and the CLI."""
