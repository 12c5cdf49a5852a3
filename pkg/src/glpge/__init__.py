"""glpge: two-stage document image enhancement.

A global stage predicts three scalar photometric corrections (brightness,
contrast, saturation) from a fixed-size thumbnail and applies them at full
resolution; a local stage refines the result through learned per-pixel
gain/offset maps applied to a smoothed copy of the image. Includes a
synthetic degradation pipeline, composite training losses, quality metrics,
analytic FLOP accounting, and a batch CLI.
"""

__version__ = "0.1.0"
