"""
SCACOPF - Résolution du SC-ACOPF (AC optimal power flow sous contraintes de sécurité N-1).

Pipeline : modèle réseau, lissage softplus des disjonctions, ADMM deux niveaux pour le cas
de base, classement des contingences et modèles de recours, orchestration manager/workers/writer.

Auteur : BRGM
Licence : MIT
"""

__version__ = "1.0.0"
__author__ = "BRGM"
