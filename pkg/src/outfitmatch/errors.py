"""Error taxonomy shared by the library and the CLI.

Each class maps to a distinct process exit code so shell pipelines can
tell input problems from internal bugs.
"""


class OutfitMatchError(Exception):
    """Base class; `exit_code` is what the CLI returns for this category."""

    exit_code = 1


class InputError(OutfitMatchError):
    """Rejected input: bad argument values, dimension mismatches."""

    exit_code = 2


class ParseError(OutfitMatchError):
    """A file could not be parsed; message carries the line number."""

    exit_code = 3


class SchemaError(OutfitMatchError):
    """A file parsed but violates the declared schema (dims, ids, sides)."""

    exit_code = 4


class SamplingError(OutfitMatchError):
    """Negative sampling is impossible for some query."""

    exit_code = 5


class GenerationError(OutfitMatchError):
    """Synthetic data generation cannot satisfy the requested shape."""

    exit_code = 6


class ConsistencyError(OutfitMatchError):
    """Internal invariant broke (stale cache, shape drift, non-finite loss)."""

    exit_code = 7


class CheckpointVersionError(OutfitMatchError):
    """Checkpoint file has an unsupported format version."""

    exit_code = 8


class OracleError(OutfitMatchError):
    """A test oracle (finite differences) hit a non-finite evaluation."""

    exit_code = 9
