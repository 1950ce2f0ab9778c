"""
servnet_tool: command-line front end for the servnet simulator.
"""
from .report import RunReport, build_report

__all__ = ["RunReport", "build_report"]
