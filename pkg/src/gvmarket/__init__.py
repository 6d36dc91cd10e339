"""Electricity forward markets driven by Gaussian Volterra processes."""
