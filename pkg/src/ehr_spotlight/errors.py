"""Exception types shared across the package."""


class SpotlightError(Exception):
    """Base class for every error this package raises deliberately."""


class DimensionError(SpotlightError):
    """Array or grid shapes do not fit the requested operation."""


class ParameterError(SpotlightError):
    """A numeric argument is outside its valid range."""


class ContractError(SpotlightError):
    """A caller violated a documented precondition."""


class ConfigError(SpotlightError):
    """A configuration file or mapping is malformed or incomplete."""


class FormatError(SpotlightError):
    """A serialized artifact is corrupt, truncated, or of the wrong version."""


class VocabularyError(SpotlightError):
    """A code is missing from the active vocabulary."""


class PathwayLengthError(SpotlightError):
    """A pathway holds more events than the image width allows."""


class UnlabeledPathwayError(SpotlightError):
    """The condition row of an image carries no label events."""


class CohortSpecError(SpotlightError):
    """A synthetic cohort specification is invalid or infeasible."""


class SplitError(SpotlightError):
    """A dataset split request would leave one side empty."""


class TrainingDivergedError(SpotlightError):
    """Loss or gradients became non-finite during optimization."""


class UnreliableCheckError(SpotlightError):
    """A gradient check target is non-deterministic; fix seeds first."""


class UndefinedRatioError(SpotlightError):
    """A sparsity ratio was requested over images with no event cells."""
