"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class CrossViewError(Exception):
    exit_code = 1


class ConfigError(CrossViewError, ValueError):
    exit_code = 2


class DataError(CrossViewError):
    exit_code = 3


class NotFound(DataError, FileNotFoundError):
    pass


class MalformedLayout(DataError):
    pass


class EmptyFold(DataError):
    pass


class Unsampleable(DataError):
    def __init__(self, diagnostic):
        self.diagnostic = diagnostic
        super().__init__(f"manifest cannot produce triplets: {diagnostic}")


class LabelError(DataError, ValueError):
    pass


class LabelSpaceError(DataError):
    pass


class LabelMapError(DataError):
    pass


class EmptyEval(DataError):
    pass


class EmptyClassError(DataError):
    pass


class ShapeError(CrossViewError, ValueError):
    exit_code = 3


class NumericError(CrossViewError):
    exit_code = 4


class DivergedError(NumericError):
    def __init__(self, step, value):
        self.step = step
        super().__init__(f"non-finite loss ({value}) at step {step}")


class CheckpointError(CrossViewError):
    exit_code = 5


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass
