class EdgeFaasError(Exception):
    """Base class for every error raised by the platform."""
