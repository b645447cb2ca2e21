"""Complex-valued 2D Gaussian holograms: rasterization, band-limited
propagation, multi-plane losses and phase-only conversion."""

__version__ = "0.1.0"
