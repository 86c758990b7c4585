from typing import Optional


class SieveError(Exception):
    """Base class for every error raised by the enforcement core."""


class ContractViolation(SieveError, ValueError):
    pass


class InvalidPolicyError(ContractViolation):
    pass


class IncomparableValuesError(SieveError, TypeError):
    pass


class UnsupportedConditionError(SieveError):
    """A derived-value condition reached an evaluator that cannot run subqueries."""


class PolicyConflictError(SieveError):
    pass


class PolicyNotFoundError(SieveError):
    pass


class QuerySyntaxError(SieveError):
    pass


class AlreadyRewrittenError(QuerySyntaxError):
    pass


class EnforcementUnavailableError(SieveError):
    """Raised when a governed relation has no guarded expression (fail closed)."""


class BackendError(SieveError):
    def __init__(self, message: str, rewritten_sql: Optional[str] = None):
        super().__init__(message)
        self.rewritten_sql = rewritten_sql

    def __str__(self):
        base = super().__str__()
        if self.rewritten_sql:
            return f"{base}\n--- rewritten query ---\n{self.rewritten_sql}"
        return base


class OracleMismatchError(SieveError):
    def __init__(self, message: str, repro_path: Optional[str] = None):
        super().__init__(message)
        self.repro_path = repro_path


class CalibrationError(SieveError):
    pass


class WorkloadFormatError(SieveError):
    pass


class DataLoadError(SieveError):
    pass
