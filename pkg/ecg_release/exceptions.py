class ReleaseError(Exception):
    pass


class SchemaError(ReleaseError):
    pass


class UnknownRhythmError(ReleaseError):
    pass


class EmptyDatasetError(ReleaseError):
    pass


class RowError(ReleaseError):
    """Raised when a row cannot be parsed in strict mode.

    Attributes:
        row -- the 1-based line number in the source file
        column -- the offending column
    """

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class PlanValidationError(ReleaseError):
    """Raised when a release plan is structurally invalid.

    Attributes:
        errors -- itemized validation messages
    """

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors
