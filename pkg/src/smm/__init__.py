"""Small Math Model: strategy choice for early arithmetic as a small neural network."""
__version__ = "0.1.0"
