"""Diffusion process, toy models, timestep curriculum and the optimizer."""
