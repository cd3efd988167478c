"""Numerical toolkit for globally integrable quantum systems."""
