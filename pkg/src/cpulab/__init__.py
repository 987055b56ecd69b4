"""CPU-only inference profiling lab.

Measures CPU/RAM/energy cost of local model inference as a function of
input size (token count, image resolution), integrates resource usage
above an idle baseline, fits the resulting scaling curves, and renders
comparison reports.

The package is organized by pipeline stage:

- ``trace_core``: sample/trace/window value types and the integration math
- ``sampler``: background resource and power-meter collection
- ``windowing``: idle-baseline estimation and inference-window detection
- ``clamp_model``: resize-and-clamp operator and piecewise compute model
- ``analysis``: linear fits, knee (changepoint) detection, run comparison
- ``orchestrator``: input sweeps, backend drivers, run artifacts
- ``report``/``cli``: tables, figures, and the command-line surface
"""

__version__ = "0.1.0"
