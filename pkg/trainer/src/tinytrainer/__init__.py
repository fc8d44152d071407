"""Weighted supervised fine-tuning of a tiny byte-level causal language model.

Consumes line-delimited {input, target, weight, kind, round} training files and
a hyperparameter JSON file, fine-tunes from a base checkpoint, and writes a
checkpoint manifest — the whole exchange happens through files and argv so the
producing pipeline never imports this package.
"""

__version__ = "0.1.0"
