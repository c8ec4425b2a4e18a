"""Exception hierarchy shared by every subpackage."""


class VserError(Exception):
    """Base class for all package errors."""


class ShapeError(VserError, ValueError):
    pass


class InvalidAudio(VserError, ValueError):
    pass


class InvalidFrequency(VserError, ValueError):
    pass


class InvalidConfig(VserError, ValueError):
    pass


class InvalidAugment(VserError, ValueError):
    pass


class InvalidLabel(VserError, ValueError):
    pass


class InvalidSigma(VserError, ValueError):
    pass


class InvalidDataset(VserError, ValueError):
    pass


class InvalidRatio(VserError, ValueError):
    pass


class StratifyError(VserError, ValueError):
    pass


class MatchError(VserError, ValueError):
    """Teacher and student feature maps cannot be matched."""


class FormatError(VserError, ValueError):
    """A binary file does not follow the expected layout."""


class IngestError(VserError):
    pass


class PrereqError(VserError):
    """A pipeline stage was started without the artifacts it depends on."""
