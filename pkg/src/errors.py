# src/errors.py
"""Exception hierarchy shared by every affina service.

Everything raised on purpose derives from AffinaError so the command line can map
domain failures to exit code 1 and usage failures (ConfigError) to exit code 2.
"""


class AffinaError(Exception):
    """Base class for domain errors"""


class ConfigError(AffinaError):
    """Unknown key or malformed value in a config file or flag"""


class ImageIOError(AffinaError):
    """Image file missing or unreadable"""


class ImageFormatError(AffinaError):
    """Image encoding not supported"""


class SizeError(AffinaError):
    """Raster too small for the requested operation"""


class BoundsError(AffinaError):
    """Coordinate outside a raster"""


class DegenerateTransformError(AffinaError):
    """Affine matrix is (numerically) singular"""


class ScaleError(AffinaError):
    """Scale outside the supported range"""


class SingularMatrixError(AffinaError):
    """Linear system cannot be solved"""


class BorderError(AffinaError):
    """Candidate too close to the raster border"""


class RefinementRejected(AffinaError):
    """Sub-pixel refinement failed for a candidate"""


class PatchRejected(BorderError):
    """Relocated patch leaves the raster"""


class DescriptorRejected(AffinaError):
    """Descriptor histogram has zero norm"""


class InsufficientCandidatesError(AffinaError):
    """Fewer than two reference descriptors to match against"""


class TooFewMatchesError(AffinaError):
    """Not enough matches for geometric verification"""


class ModelError(AffinaError):
    """Outlier model cannot be fitted"""


class NoInlierStructureError(AffinaError):
    """Histogram shows no excess over the outlier model"""


class NumericError(AffinaError):
    """Iterative computation did not converge"""


class DatasetError(AffinaError):
    """Image sequence directory is incomplete or corrupt"""


class InterchangeError(AffinaError):
    """Features, descriptor, match or inlier file missing or malformed"""


__all__ = [
    'AffinaError', 'ConfigError', 'ImageIOError', 'ImageFormatError', 'SizeError',
    'BoundsError', 'DegenerateTransformError', 'ScaleError', 'SingularMatrixError',
    'BorderError', 'RefinementRejected', 'PatchRejected', 'DescriptorRejected',
    'InsufficientCandidatesError', 'TooFewMatchesError', 'ModelError',
    'NoInlierStructureError', 'NumericError', 'DatasetError', 'InterchangeError',
]
