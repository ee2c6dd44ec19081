"""Residuals of the advection-diffusion loss and its constraint terms."""
