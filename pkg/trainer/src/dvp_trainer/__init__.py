"""Training side of the video precoding network.

Optimizes the multi-scale downscaler against plain linear upscaling (no codec
in the loop) and exports weight files plus golden forward-pass vectors that
the inference engine consumes.
"""

__version__ = "0.1.0"
