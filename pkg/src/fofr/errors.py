"""Exception hierarchy for the fofr package."""


class FofrError(Exception):
    """Base class for all fofr errors."""


# --- data model / ingestion ---

class MalformedRow(FofrError):
    pass


class DuplicateTimestamp(FofrError):
    pass


class DomainViolation(FofrError):
    pass


class MissingChannel(FofrError):
    pass


class InsufficientCoverage(FofrError):
    pass


class BadGridSize(FofrError):
    pass


# --- smoothing ---

class DegenerateWindow(FofrError):
    pass


class NonFiniteFit(FofrError):
    pass


class NoPairs(FofrError):
    pass


class AllCandidatesDegenerate(FofrError):
    pass


# --- fpca ---

class EigenFailure(FofrError):
    pass


class EmptySpectrum(FofrError):
    pass


class TooSparse(FofrError):
    pass


class TooFewSubjects(FofrError):
    pass


class BlockMismatch(FofrError):
    pass


class ChannelCountMismatch(FofrError):
    pass


class LengthMismatch(FofrError):
    pass


# --- regression ---

class ShapeMismatch(FofrError):
    pass


class DivergenceDetected(FofrError):
    pass


# --- pipeline / persistence ---

class ChannelMismatch(FofrError):
    pass


class NoOverlap(FofrError):
    pass


class VersionMismatch(FofrError):
    pass


class CorruptArtifact(FofrError):
    pass


class PipelineError(FofrError):
    """Wraps a module-level error with the pipeline stage where it occurred."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


# --- synthetic generator ---

class BadScenario(FofrError):
    pass


class IndexOutOfRange(FofrError):
    pass
