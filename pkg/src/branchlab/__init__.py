"""Semilinear heat flow and its dual branching Brownian particle system."""
