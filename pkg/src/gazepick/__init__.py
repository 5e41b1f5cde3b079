"""Gaze-driven object and task selection for assistive robot arms."""

__version__ = "0.1.0"
