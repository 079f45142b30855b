"""Exception types raised by folialab."""


class FolialabError(Exception):
    """Base class for library errors."""


class CatalogError(FolialabError, ValueError):
    """Unknown catalog id or inadmissible catalog parameters."""


class ChartDomainError(FolialabError, ValueError):
    """A map value left the admissible chart region of its target."""

    def __init__(self, message, node=None, radius=None):
        super().__init__(message)
        self.node = node
        self.radius = radius


class ShapeError(FolialabError, ValueError):
    """Field shapes do not match each other or their model."""


class FlowAbort(FolialabError, RuntimeError):
    """A gradient flow stopped early; the partial trace is attached."""

    def __init__(self, message, trace=None, state=None):
        super().__init__(message)
        self.trace = trace
        self.state = state
