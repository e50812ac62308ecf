"""Exception types raised across the package."""


class CFMError(Exception):
    """Base class for all package errors."""


class SizeError(CFMError, ValueError):
    """Array shape or length is incompatible with the operation."""


class PatternIndexError(CFMError, IndexError):
    """Pattern or Hadamard row index outside its valid range."""


class ParameterError(CFMError, ValueError):
    """A scalar parameter is out of its admissible range."""


class ValidationError(CFMError, ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class DataError(CFMError, ValueError):
    """Measurement data is unusable (non-finite values, bad file contents)."""


class DegenerateRangeError(CFMError, ValueError):
    """Reference image has zero dynamic range."""


class EmptyBandError(CFMError, ValueError):
    """A spectral band contains no channel of the wavelength axis."""


class DegenerateSpectrumError(CFMError, ValueError):
    """Extraction region carries no signal."""
