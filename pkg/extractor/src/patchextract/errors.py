"""Exception types for the extractor."""


class ExtractError(Exception):
    """Base class for extractor failures."""


class ConfigError(ExtractError):
    """Invalid sampling parameters or command-line arguments."""


class ModelLoadError(ExtractError):
    """A weights file was given but could not be loaded."""
