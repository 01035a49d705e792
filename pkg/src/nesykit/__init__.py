"""Neuro-symbolic composition learning: perception networks plus learnable
rule tables, trained end to end with supervision only on their composition."""

__version__ = "0.1.0"
