"""Module API - Acquisition des fichiers de cas (local ou distant)."""
