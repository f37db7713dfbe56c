"""Reference implementations and verification harness for a hybrid
sparse-attention stack: full / sliding-window / linear attention oracles,
sparse state expansion (SSE), mixture-of-block attention (MoBA), the
SSE-SWA composite layer with merge norm, INT8-spiking and FP8-E4M3
activation coding, distillation losses, and an analytical long-context
cost model.

Everything runs in float64 on CPU; outputs are deterministic given a seed.
"""

__version__ = "0.1.0"

from .tensor_ops import NumericsError, ShapeError

__all__ = ["NumericsError", "ShapeError", "__version__"]
