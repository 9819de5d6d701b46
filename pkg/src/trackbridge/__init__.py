"""Planner-to-actuator tracking bridge: Frenet tracking control, supervision,
a framed UDP protocol, mocked planner/localization and a simulated vehicle."""

__version__ = "0.1.0"
