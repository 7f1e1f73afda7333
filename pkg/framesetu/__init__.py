"""FrameSetu: flow-based video frame interpolation with asymmetric blending."""

__version__ = "0.1.0"
