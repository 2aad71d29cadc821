"""Single-image gaussian-splat reconstruction with a differentiable CPU rasterizer."""

try:
    from ._leansplat import *  # noqa: F401,F403  (installed layout)
except ImportError:
    from _leansplat import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
