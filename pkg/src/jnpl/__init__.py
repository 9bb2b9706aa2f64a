"""Noisy-label training with complementary (negative) and selective positive learning."""

__version__ = "0.1.0"
