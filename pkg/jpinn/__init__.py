"""
jPINN: joint physics-informed neural network regression of NO2 and NOx.

The package bundles a small reverse-mode autodiff engine, full residual
networks, the advection-diffusion residual loss, a mini-batch trainer, a
bootstrap ensemble with 0.632+ prediction intervals and a synthetic
transport simulator that manufactures ground-truth datasets.
"""

__version__ = "0.1.0"
