"""
Exception hierarchy for SlumpVision
Every error carries the process exit code the CLI reports for it
"""


class SlumpVisionError(Exception):
    """Base class for all SlumpVision failures"""

    exit_code = 2


class InvalidShapeError(SlumpVisionError):
    """A tensor extent is zero, negative or otherwise unusable"""


class ShapeMismatchError(SlumpVisionError):
    """Two shapes that must agree do not"""


class InvalidAxisError(SlumpVisionError):
    """Duplicate or out-of-range reduction axis"""


class InvalidLossError(SlumpVisionError):
    """backward() was called on a non-scalar tensor"""


class NoGraphError(SlumpVisionError):
    """backward() was called on a tensor that was never traced"""


class NumericFailureError(SlumpVisionError):
    """A NaN or infinity showed up where finite values are required"""

    exit_code = 3


class InvalidModelError(SlumpVisionError):
    """Unknown model identifier"""


class DegenerateBatchError(SlumpVisionError):
    """Train-mode batch normalization saw fewer than two values per channel"""


class InvalidRoiError(SlumpVisionError):
    """Region-of-interest circle is malformed or outside the frame"""


class TooShortError(SlumpVisionError):
    """Clip is shorter than the requested tail"""


class NoWindowError(SlumpVisionError):
    """Not enough frames to form a single window"""


class InvalidFrameRateError(SlumpVisionError):
    """Clip frame rate is below the requested sampling rate"""


class ClipFormatError(SlumpVisionError):
    """A CWV1 file is truncated or carries an unknown header"""


class DatasetError(SlumpVisionError):
    """Manifest is empty, unreadable, or too many clips were skipped"""


class ConfigError(SlumpVisionError):
    """Unknown configuration key or invalid value"""


class CheckpointError(SlumpVisionError):
    """Checkpoint file is malformed or incompatible with the model"""


class VerificationError(SlumpVisionError):
    """A gradient check or other verification threshold was exceeded"""

    exit_code = 4
