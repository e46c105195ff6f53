from typing import Optional, NoReturn


class ErrorCode:
    # Usage / configuration errors (1000-1999)
    USAGE = 1001
    INVALID_CONFIG = 1002
    CONFIG_MISMATCH = 1003
    UNSUPPORTED_SIZE = 1004

    # Infeasibility / validation errors (2000-2999)
    INFEASIBLE_STATE = 2001
    CONTRACT_VIOLATION = 2002
    INFEASIBLE_SOLUTION = 2003
    VALIDATION_FAILED = 2004
    ALL_MASKED = 2005

    # IO / parse / format errors (3000-3999)
    PARSE_ERROR = 3001
    VERSION_MISMATCH = 3002
    SCHEMA_VIOLATION = 3003
    FILE_NOT_FOUND = 3004

    # Numerical / training errors (4000-4999)
    NON_FINITE = 4001
    INSUFFICIENT_DATA = 4002


# Process exit codes of the command-line surface
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3


def exit_code_for(error_code: int) -> int:
    """Map an error code range to the process exit code."""
    if 2000 <= error_code < 3000:
        return EXIT_INFEASIBLE
    if 3000 <= error_code < 4000:
        return EXIT_IO
    return EXIT_USAGE


class JamprError(Exception):
    def __init__(
        self,
        error_code: int,
        message: str,
        details: Optional[dict] = None
    ):
        self.error_code = error_code
        self.message = message
        self.details = details
        super().__init__(message)

    @property
    def exit_code(self) -> int:
        return exit_code_for(self.error_code)

    def __str__(self) -> str:
        if self.details:
            return f"[{self.error_code}] {self.message} {self.details}"
        return f"[{self.error_code}] {self.message}"


def raise_usage(message: str = "Invalid usage", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.USAGE, message, details)

def raise_invalid_config(message: str = "Invalid configuration", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.INVALID_CONFIG, message, details)

def raise_config_mismatch(message: str = "Checkpoint does not match configuration", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.CONFIG_MISMATCH, message, details)

def raise_unsupported_size(message: str = "No capacity known for this problem size", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.UNSUPPORTED_SIZE, message, details)

def raise_infeasible_state(message: str = "No feasible action left", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.INFEASIBLE_STATE, message, details)

def raise_contract_violation(message: str = "Action is not feasible", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.CONTRACT_VIOLATION, message, details)

def raise_infeasible_solution(message: str = "Solution violates hard constraints", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.INFEASIBLE_SOLUTION, message, details)

def raise_all_masked(message: str = "Every entry is masked", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.ALL_MASKED, message, details)

def raise_parse_error(message: str = "Could not parse input", line: Optional[int] = None, details: Optional[dict] = None) -> NoReturn:
    details = dict(details or {})
    if line is not None:
        details["line"] = line
        message = f"line {line}: {message}"
    raise JamprError(ErrorCode.PARSE_ERROR, message, details or None)

def raise_version_mismatch(message: str = "Unsupported format version", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.VERSION_MISMATCH, message, details)

def raise_schema_violation(message: str = "Input violates the schema", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.SCHEMA_VIOLATION, message, details)

def raise_non_finite(message: str = "Non-finite value encountered", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.NON_FINITE, message, details)

def raise_insufficient_data(message: str = "Not enough data", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.INSUFFICIENT_DATA, message, details)

def raise_validation_failed(message: str = "Solution failed validation", details: Optional[dict] = None) -> NoReturn:
    raise JamprError(ErrorCode.VALIDATION_FAILED, message, details)
