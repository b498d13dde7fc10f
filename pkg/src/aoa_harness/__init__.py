"""Actor/observer attribution-bias harness."""

__version__ = "0.1.0"
