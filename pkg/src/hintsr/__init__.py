"""Conditioned neural symbolic regression.

Generates synthetic expression corpora annotated with structural side
information, trains a dual-encoder transformer that accepts user
hypotheses alongside observations, and evaluates how reliably the
decoded equations honour those hypotheses.
"""

__version__ = "0.1.0"
