"""Asleep/awake labelling of phone sensor logs with a mixed-emission hidden Markov model."""

__version__ = "0.1.0"
