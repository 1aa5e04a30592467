"""Coherent-structure detection from rolling-window Ulam matrix cocycles."""
from ._backend import BACKEND, set_threads
from .cocycle import (WindowSVD, lyapunov_rate, read_svd, rolling_windows, truncated_svd,
                      window_product, write_svd)
from .diagnostics import (animate_mode, coherence_curve, coherence_log, equivariance_mismatch,
                          equivariance_series, evolve_mode, fsm_normalize)
from .fields import AnalyticField, GriddedField, alpha, alpha_tilde, read_gridded, write_gridded
from .integrate import ESCAPED, Domain, FlowSpec, advect, flow_compose, flow_map
from .tracking import TrackedPaths, track_by_values, track_by_vectors
from .ulam import BinPartition, UlamMatrix, build_ulam, read_ulam, write_ulam

__version__ = "0.1.0"
