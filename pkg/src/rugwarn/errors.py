"""Exception hierarchy shared by every stage."""


class RugwarnError(Exception):
    """Base class; ``code`` doubles as the CLI exit status."""

    code = 1


class EmptyInput(RugwarnError, ValueError):
    pass


class MissingColumn(RugwarnError, ValueError):
    pass


class MalformedRow(RugwarnError, ValueError):
    pass


class EmptyFile(RugwarnError, ValueError):
    pass


class EmptySampleList(RugwarnError, ValueError):
    pass


class SingleClassTraining(RugwarnError, ValueError):
    pass


class NonFiniteFeature(RugwarnError, ValueError):
    pass


class ColumnMismatch(RugwarnError, ValueError):
    pass


class DegenerateLabels(RugwarnError, ValueError):
    pass


class DegenerateSplit(RugwarnError, ValueError):
    pass


class InvalidSpec(RugwarnError, ValueError):
    pass


class ConfigInvalid(RugwarnError):
    code = 2


class MissingInput(RugwarnError):
    code = 3


class StageFailure(RugwarnError):
    code = 4

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
