"""Dual adversarial domain adaptation on small synthetic shifts, built on a NumPy autodiff core."""

__version__ = "0.1.0"
