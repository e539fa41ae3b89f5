"""Module Utils - Fichiers de solution et exports tabulaires."""
