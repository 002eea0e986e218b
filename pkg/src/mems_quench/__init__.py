"""Stochastic MEMS quenching: simulation, Monte Carlo and closed-form bounds."""
