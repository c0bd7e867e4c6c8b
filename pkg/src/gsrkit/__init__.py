"""Grounded situation recognition at desk scale.

A verb/role/noun frame ontology, a transformer encoder-decoder that
predicts a verb plus grounded nouns for the verb's semantic roles, the
five-term training objective, the full metric suite, and grounded
situation-similarity retrieval. Everything runs on CPU with numpy; the
model trains end to end on synthetic feature grids.
"""

__version__ = "0.1.0"
