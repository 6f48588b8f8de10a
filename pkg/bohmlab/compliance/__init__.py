from .diagnostics import DiagnosticsCollector, StageDiagnostics
from .report import RunReport, write_artifacts, write_density, write_results, write_trajectories
