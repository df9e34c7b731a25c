"""Continuous-time recommendation on user-item interaction graphs.

The engine slices a timestamped interaction log into contiguous intervals,
evolves node embeddings through each interval with a linear graph ODE solved
by fixed-step RK4, aggregates across the accumulated graph with per-edge
temporal attention at each interval boundary, and trains the whole stack
end-to-end with a pairwise ranking loss.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
