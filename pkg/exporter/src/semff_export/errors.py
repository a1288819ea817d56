class ExportError(Exception):
    """Base for everything this tool raises on purpose."""


class InputError(ExportError):
    """Unreadable or malformed input data."""


class BackboneError(ExportError):
    """Backbone unavailable or misconfigured."""
