# genreg/exceptions.py


class ConfigError(ValueError):
    """Invalid experiment configuration or command-line flags."""


class NumericalAbort(RuntimeError):
    """A numerical failure that makes continuing meaningless (NaN loss, step-size overflow, divergence)."""
