"""Scenario runner, transcript analyzer and retrieval benchmark."""

from .analysis import ServerView, Verdict, assert_indistinguishable, load_transcript, server_view
from .bench import Fit, benchmark, fit_scaling
from .scenario import Round, Scenario, ScenarioResult, run_scenario

__all__ = [
    "Fit", "Round", "Scenario", "ScenarioResult", "ServerView", "Verdict",
    "assert_indistinguishable", "benchmark", "fit_scaling", "load_transcript",
    "run_scenario", "server_view",
]
