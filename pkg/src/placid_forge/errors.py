"""Exception types shared across the package."""


class PlacidForgeError(Exception):
    """Base class for all package-specific errors."""


class SpecError(PlacidForgeError):
    """A manifest, spec, or template violates its schema or an invariant."""


class PlacementError(PlacidForgeError):
    """Scatter placement could not be satisfied within the retry budget."""


class DegenerateTransformError(PlacidForgeError):
    """A geometric transform produced a non-convex or zero-area quad."""
