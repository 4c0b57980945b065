"""Exception hierarchy shared across the toolkit."""


class SpnError(Exception):
    """Base class for all toolkit errors."""


class DecodeError(SpnError):
    """A raw frame or container file could not be decoded."""


class ValidationError(SpnError):
    """Inputs disagree on dimensions or declared metadata."""


class CropRangeError(SpnError, IndexError):
    """Crop window falls outside the image."""


class CfaPhaseError(SpnError):
    """An odd offset or dimension would break the CFA phase."""


class UnsupportedLayoutError(SpnError):
    """Operation needs a Bayer layout but got MONO (or an unknown tag)."""


class ShapeError(SpnError, ValueError):
    """Array dimensions do not conform to the block / wavelet schedule."""


class DegenerateInputError(SpnError, ValueError):
    """Correlation of a constant array (zero centred norm)."""

    def __init__(self, message, plane=None):
        super().__init__(message)
        self.plane = plane


class ProtocolError(SpnError):
    """Experimental protocol cannot be satisfied (empty sets, too few frames)."""


class CalibrationMismatchError(SpnError):
    """Dark frame and light frame were captured under different conditions."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class IngestionError(SpnError):
    """A file referenced by a manifest or plan is missing or unreadable."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class GroupingError(SpnError):
    """Box statistics requested for an empty group."""


class StageError(SpnError):
    """Harness stage failure, tagged with the stage name and offending item."""

    def __init__(self, stage, item, cause):
        super().__init__(f"[{stage}] {item}: {cause}")
        self.stage = stage
        self.item = item
        self.cause = cause
