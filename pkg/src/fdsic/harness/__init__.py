"""Experiment configuration, dataset caching and the command line interface."""
