"""Module Core - Modèle SC-ACOPF, solveurs et orchestration."""
