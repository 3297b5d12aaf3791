"""Keyword-based autocomplete communication schemes.

A stochastic encoder extracts keyword subsequences from sentences, a
sequence-to-sequence decoder with attention and copying reconstructs the
sentence, and the pair is trained without supervision under an
efficiency-accuracy tradeoff.
"""

__version__ = "0.1.0"
