"""Quasilinear Neumann problems: P1 solver, structure audits and Moser-ladder diagnostics."""
