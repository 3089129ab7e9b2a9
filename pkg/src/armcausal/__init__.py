"""Sensorimotor forward/inverse models of a simulated arm and their Shapley-value analysis."""
