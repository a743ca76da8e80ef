"""Exception types shared across the pipeline."""


class FreesegError(Exception):
    """Base class for all pipeline errors."""


class BackendUnavailable(FreesegError):
    """No model client configured and the cache cannot serve the request."""


class ShapeMismatch(FreesegError):
    """A tensor arrived with dimensions that violate the caller's contract."""


class EmptyCaption(FreesegError):
    """Captioner returned an empty string."""


class CorruptEntry(FreesegError):
    """Cache payload is inconsistent with its manifest entry."""


class DegenerateInput(FreesegError):
    """Clustering input has fewer points than clusters."""


class NonFinite(FreesegError):
    """NaN or Inf encountered in a numerical routine."""


class EmptyMask(FreesegError):
    """A mask with no foreground pixels where one is required."""


class PartitionViolation(FreesegError):
    """Masks that should partition the image overlap or leave gaps."""


class UnknownLabel(FreesegError):
    """A segmentation label is missing from the active label list."""


class MissingAnnotation(FreesegError):
    """No ground-truth annotation found for the requested image."""


class CorruptRLE(FreesegError):
    """Run-length data does not cover the declared canvas."""


class EmptyAccumulator(FreesegError):
    """Metrics requested from an accumulator that saw no pixels."""
