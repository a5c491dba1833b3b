"""Exception hierarchy shared across the library.

Data-shaped problems (bad files, empty inputs, degenerate geometry) all derive
from :class:`HgndError` so callers can catch one base class; the CLI maps them
to exit code 3 and plain I/O failures to exit code 2.
"""


class HgndError(Exception):
    """Base class for all library-specific errors."""


class FormatError(HgndError):
    """Malformed input file."""


class PlyFormatError(FormatError):
    """Malformed PLY input; message carries line number or byte offset."""


class EmptyMeshError(HgndError):
    """Operation requires at least one triangle."""


class EmptyPatchError(HgndError):
    """No triangle fell inside the support sphere; caller skips the keypoint."""


class DegeneratePatchError(HgndError):
    """Every triangle in the patch has zero area."""


class IllConditionedLrfError(HgndError):
    """Scatter-matrix eigenvalues too close to define a stable frame."""


class EmptyDescriptorError(HgndError):
    """Every triangle was skipped; the histogram is all-zero."""


class InsufficientDataError(HgndError):
    """Fewer than two reference descriptors: no second-nearest exists."""


class DegenerateOutputError(HgndError):
    """Simplification collapsed the mesh below a usable size."""


class ConfigError(HgndError):
    """Benchmark configuration file is malformed or inconsistent."""
