"""Error types raised by psforge. Each carries the CLI exit code for its class."""


class PSForgeError(Exception):
    exit_code = 1


class SceneParseError(PSForgeError):
    exit_code = 2

    def __init__(self, message: str, line_number: int = None, source: str = None):
        self.line_number = line_number
        self.source = source
        location = ""
        if source:
            location += f"{source}"
        if line_number is not None:
            location += f":{line_number}"
        super().__init__(f"{location}: {message}" if location else message)


class SceneIntegrityError(PSForgeError):
    exit_code = 3


class AlignmentError(PSForgeError):
    exit_code = 4


class DatasetFormatError(PSForgeError):
    exit_code = 5


class InsufficientDataError(PSForgeError):
    exit_code = 6


class InputNotFoundError(PSForgeError):
    exit_code = 7


class ContractViolationError(PSForgeError, ValueError):
    exit_code = 8


class UndefinedAPError(PSForgeError, ValueError):
    exit_code = 9


class BehindCameraError(PSForgeError, ValueError):
    exit_code = 10
