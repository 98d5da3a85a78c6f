"""Experiment specs, the built-in counterexample, orchestration and reports."""

from .runner import diagnose, read_csv, run_experiment, sweep  # noqa: F401
from .spec import BUILTINS, ExperimentSpec, load_spec  # noqa: F401
