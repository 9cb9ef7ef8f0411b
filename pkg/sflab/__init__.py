"""sflab - Sobolev training of two-layer ReLU networks under gradient flow"""

__version__ = "0.1.0"
