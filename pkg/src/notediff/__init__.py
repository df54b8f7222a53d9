"""Note-level masked diffusion for symbolic music, on a small numpy autodiff engine."""
__version__ = "0.1.0"
