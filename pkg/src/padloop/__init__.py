"""Affect-driven performance estimation and closed-loop stimulus control from EEG fractal features."""

__version__ = "0.1.0"
