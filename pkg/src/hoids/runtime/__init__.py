"""Server, client and in-memory simulation of the hierarchical IDS."""

from .client import ClientConfig, ClientCore, Counters, TCPClient, alert_line
from .pipeline import DEFAULT_PIPELINES, Pipeline, build_principle
from .server import LEVELS, LevelConfig, ServerConfig, ServerCore, ServerHandle, serve
from .simulate import (ClientReport, ClientSpec, Scenario, ScenarioError, SimulationReport,
                       simulate)

__all__ = ["ClientConfig", "ClientCore", "ClientReport", "ClientSpec", "Counters",
           "DEFAULT_PIPELINES", "LEVELS", "LevelConfig", "Pipeline", "Scenario", "ScenarioError",
           "ServerConfig", "ServerCore", "ServerHandle", "SimulationReport", "TCPClient",
           "alert_line", "build_principle", "serve", "simulate"]
